"""Drive a chat-style VLM endpoint with panel images and score the answers.

Wire contract: POST ``{base_url}/chat/completions`` with

    {"model": ..., "messages": [{"role": "user", "content": [
        {"type": "image_url", "image_url": {"url": "data:image/png;base64,..."}},
        ...,
        {"type": "text", "text": prompt}]}]}

and the reply text is ``choices[0].message.content``.  Images travel base64
PNG (lossless), in panel order.  Transient failures (network, 5xx) are
retried with exponential backoff; 4xx is a configuration problem and is not.

Predictions append to a JSONL file as they complete, so a killed run can be
resumed; items already on disk are not re-queried.  An unparsable or failed
item scores as incorrect and is counted separately.
"""

from __future__ import annotations

import base64
import json
import re
import threading
import time
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import requests

from .benchmark import DurationBuckets, PromptTemplate, QAItem, bucket_items, render_prompt
from .errors import ConfigError, EndpointError, PlanViolation, ReportError
from .panelizer import Manifest

PARSE_RULE_VERSION = 1

PREDICTIONS_FILENAME = "predictions.jsonl"
RESULT_FILENAME = "result.json"


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str
    max_images_per_request: int = 64
    timeout_seconds: float = 120.0
    max_retries: int = 2
    concurrency_limit: int = 1
    auth_env: str | None = None
    retry_backoff_seconds: float = 0.5

    def __post_init__(self) -> None:
        if self.concurrency_limit < 1:
            raise ConfigError(f"concurrency_limit must be >= 1, got {self.concurrency_limit}")
        if self.max_retries < 0:
            raise ConfigError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.max_images_per_request < 1:
            raise ConfigError(
                f"max_images_per_request must be >= 1, got {self.max_images_per_request}"
            )

    def to_dict(self) -> dict:
        return {
            "base_url": self.base_url,
            "model_name": self.model_name,
            "max_images_per_request": self.max_images_per_request,
            "timeout_seconds": self.timeout_seconds,
            "max_retries": self.max_retries,
            "concurrency_limit": self.concurrency_limit,
            "auth_env": self.auth_env,
        }


@dataclass(frozen=True)
class Prediction:
    item_id: str
    raw_response: str | None
    parsed_letter: str | None
    correct: bool
    latency_seconds: float
    request_images: int
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "raw_response": self.raw_response,
            "parsed_letter": self.parsed_letter,
            "correct": self.correct,
            "latency_seconds": self.latency_seconds,
            "request_images": self.request_images,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Prediction":
        return cls(
            item_id=str(d["item_id"]),
            raw_response=d.get("raw_response"),
            parsed_letter=d.get("parsed_letter"),
            correct=bool(d["correct"]),
            latency_seconds=float(d["latency_seconds"]),
            request_images=int(d["request_images"]),
            error=d.get("error"),
        )


@dataclass(frozen=True)
class EvalResult:
    run_id: str
    policy: dict
    predictions: tuple[Prediction, ...]
    accuracy_overall: float
    accuracy_by_bucket: dict
    unparsable_count: int
    parse_rule_version: int = PARSE_RULE_VERSION
    created_at: str = ""

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "policy": self.policy,
            "predictions": [p.to_dict() for p in self.predictions],
            "accuracy_overall": self.accuracy_overall,
            "accuracy_by_bucket": self.accuracy_by_bucket,
            "unparsable_count": self.unparsable_count,
            "parse_rule_version": self.parse_rule_version,
            "created_at": self.created_at,
        }

    def comparable_dict(self) -> dict:
        """The result with timing stripped: for bit-for-bit run comparison."""
        d = self.to_dict()
        d.pop("created_at")
        for p in d["predictions"]:
            p.pop("latency_seconds")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalResult":
        return cls(
            run_id=str(d["run_id"]),
            policy=dict(d.get("policy") or {}),
            predictions=tuple(Prediction.from_dict(p) for p in d["predictions"]),
            accuracy_overall=float(d["accuracy_overall"]),
            accuracy_by_bucket=dict(d["accuracy_by_bucket"]),
            unparsable_count=int(d["unparsable_count"]),
            parse_rule_version=int(d.get("parse_rule_version", PARSE_RULE_VERSION)),
            created_at=str(d.get("created_at", "")),
        )

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: Path | str) -> "EvalResult":
        return cls.from_dict(json.loads(Path(path).read_text()))


def png_data_url(png_bytes: bytes) -> str:
    return "data:image/png;base64," + base64.b64encode(png_bytes).decode("ascii")


def build_request_body(cfg: EndpointConfig, images: list[bytes], prompt: str) -> dict:
    content = [
        {"type": "image_url", "image_url": {"url": png_data_url(img)}} for img in images
    ]
    content.append({"type": "text", "text": prompt})
    return {"model": cfg.model_name, "messages": [{"role": "user", "content": content}]}


def extract_message_text(body: dict) -> str:
    """Pull the assistant text out of a chat-completions response body."""
    try:
        content = body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise EndpointError(f"malformed endpoint response: {exc}") from exc
    if isinstance(content, str):
        return content
    if isinstance(content, list):
        return "".join(
            part.get("text", "") for part in content if isinstance(part, dict)
        )
    raise EndpointError(f"unexpected message content type {type(content).__name__}")


def query_model(cfg: EndpointConfig, images: list[bytes], prompt: str) -> str:
    """Send one request (images in chronological order, then the prompt text)."""
    if len(images) > cfg.max_images_per_request:
        raise ConfigError(
            f"{len(images)} images exceed max_images_per_request="
            f"{cfg.max_images_per_request}"
        )
    url = cfg.base_url.rstrip("/") + "/chat/completions"
    body = build_request_body(cfg, images, prompt)
    headers = {}
    if cfg.auth_env:
        token = os.environ.get(cfg.auth_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"

    last_error: str = "no attempt made"
    for attempt in range(cfg.max_retries + 1):
        if attempt > 0 and cfg.retry_backoff_seconds > 0:
            time.sleep(cfg.retry_backoff_seconds * (2 ** (attempt - 1)))
        try:
            resp = requests.post(url, json=body, headers=headers, timeout=cfg.timeout_seconds)
        except requests.RequestException as exc:
            last_error = f"request failed: {exc}"
            continue
        if 200 <= resp.status_code < 300:
            try:
                return extract_message_text(resp.json())
            except ValueError as exc:
                raise EndpointError(f"endpoint returned non-JSON body: {exc}") from exc
        if 400 <= resp.status_code < 500:
            raise ConfigError(
                f"endpoint rejected request: HTTP {resp.status_code}: {resp.text[:200]}"
            )
        last_error = f"HTTP {resp.status_code}: {resp.text[:200]}"
    raise EndpointError(f"exhausted {cfg.max_retries} retries; last error: {last_error}")


_TRAILING_PUNCT = re.compile(r"^([A-Fa-f])[.)]?$")


def parse_choice(response: str, option_letters: tuple[str, ...]) -> str | None:
    """Extract the chosen option letter from a free-form response.

    Cascade: (1) the whole stripped response is one option letter, optionally
    followed by '.' or ')'; (2) the first standalone option-letter token;
    (3) the unique option whose full text appears verbatim.  (1) and (2) are
    case-insensitive.  None means unparsable.
    """
    opts = {letter.upper() for letter in option_letters}
    stripped = response.strip()
    m = _TRAILING_PUNCT.match(stripped)
    if m and m.group(1).upper() in opts:
        return m.group(1).upper()
    for m in re.finditer(r"(?<![A-Za-z0-9])([A-Fa-f])(?![A-Za-z0-9])", response):
        letter = m.group(1).upper()
        if letter in opts:
            return letter
    return None


def parse_choice_with_texts(
    response: str, options: tuple[tuple[str, str], ...]
) -> str | None:
    letter = parse_choice(response, tuple(l for l, _ in options))
    if letter is not None:
        return letter
    hits = [
        l for l, text in options if text and text in response
    ]
    if len(hits) == 1:
        return hits[0]
    return None


class _PredictionStore:
    """Append-only JSONL of predictions keyed by item id; the resume point."""

    def __init__(self, path: Path | None):
        self.path = path
        self._lock = threading.Lock()
        self.existing: dict[str, Prediction] = {}
        if path is not None and path.exists():
            for line in path.read_text().splitlines():
                if line.strip():
                    pred = Prediction.from_dict(json.loads(line))
                    self.existing[pred.item_id] = pred

    def append(self, pred: Prediction) -> None:
        with self._lock:
            self.existing[pred.item_id] = pred
            if self.path is not None:
                with self.path.open("a") as fh:
                    fh.write(json.dumps(pred.to_dict(), sort_keys=True) + "\n")


def _load_panel_images(manifest: Manifest) -> list[bytes]:
    if manifest.base_dir is None:
        raise PlanViolation(
            f"manifest for {manifest.video_uri!r} has no base directory to load panels from"
        )
    records = sorted(manifest.panels, key=lambda r: r.panel_ordinal)
    return [(manifest.base_dir / rec.output_path).read_bytes() for rec in records]


def _predict_one(
    item: QAItem,
    manifest: Manifest,
    cfg: EndpointConfig,
    template: PromptTemplate | None,
) -> Prediction:
    images = _load_panel_images(manifest)
    prompt = render_prompt(
        item, template, grid=(manifest.plan.grid_rows, manifest.plan.grid_cols)
    )
    start = time.perf_counter()
    try:
        raw = query_model(cfg, images, prompt)
    except (EndpointError, ConfigError) as exc:
        return Prediction(
            item_id=item.item_id,
            raw_response=None,
            parsed_letter=None,
            correct=False,
            latency_seconds=time.perf_counter() - start,
            request_images=len(images),
            error=f"{type(exc).__name__}: {exc}",
        )
    latency = time.perf_counter() - start
    letter = parse_choice_with_texts(raw, item.options)
    return Prediction(
        item_id=item.item_id,
        raw_response=raw,
        parsed_letter=letter,
        correct=(letter == item.gold),
        latency_seconds=latency,
        request_images=len(images),
    )


def evaluate(
    items: list[QAItem],
    manifests: dict[str, Manifest],
    cfg: EndpointConfig,
    *,
    template: PromptTemplate | None = None,
    buckets: DurationBuckets | None = None,
    run_dir: Path | str | None = None,
    run_id: str = "run",
    policy_echo: dict | None = None,
) -> EvalResult:
    """Query every item, persist predictions incrementally, and score.

    ``manifests`` maps item video_uri to its manifest.  Items whose
    predictions already sit in ``run_dir`` are skipped, which makes an
    interrupted run resumable with identical output.
    """
    buckets = buckets or DurationBuckets.vmme_default()
    missing = [item.item_id for item in items if item.video_uri not in manifests]
    if missing:
        raise PlanViolation(f"no manifest for items: {missing[:5]}")

    store_path = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        store_path = run_dir / PREDICTIONS_FILENAME
    store = _PredictionStore(store_path)

    pending = [item for item in items if item.item_id not in store.existing]
    workers = min(cfg.concurrency_limit, max(1, len(pending)))
    if pending:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(
                    _predict_one, item, manifests[item.video_uri], cfg, template
                ): item
                for item in pending
            }
            for future in futures:
                store.append(future.result())

    by_id = store.existing
    ordered = tuple(by_id[item.item_id] for item in items)

    if policy_echo is None:
        policy_echo = (
            manifests[items[0].video_uri].policy.to_dict() if items else {}
        )

    correct_total = sum(1 for p in ordered if p.correct)
    by_bucket = {}
    for name, members in bucket_items(items, buckets).items():
        ok = sum(1 for item in members if by_id[item.item_id].correct)
        by_bucket[name] = {
            "correct": ok,
            "count": len(members),
            "accuracy": ok / len(members),
        }
    result = EvalResult(
        run_id=run_id,
        policy=policy_echo,
        predictions=ordered,
        accuracy_overall=correct_total / len(items) if items else 0.0,
        accuracy_by_bucket=by_bucket,
        unparsable_count=sum(1 for p in ordered if p.parsed_letter is None),
        created_at=time.strftime("%Y-%m-%dT%H:%M:%S"),
    )
    if run_dir is not None:
        result.save(Path(run_dir) / RESULT_FILENAME)
    return result


def format_points(points: float) -> str:
    return f"{points:+.1f}"


def format_relative(a_acc: float, b_acc: float) -> str:
    if a_acc == 0:
        return "n/a"
    return f"{(b_acc - a_acc) / a_acc * 100.0:+.1f}%"


@dataclass(frozen=True)
class ComparisonReport:
    run_a: str
    run_b: str
    rows: tuple[dict, ...] = field(default=())
    flipped_to_correct: tuple[str, ...] = ()
    flipped_to_incorrect: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "run_a": self.run_a,
            "run_b": self.run_b,
            "rows": list(self.rows),
            "flipped_to_correct": list(self.flipped_to_correct),
            "flipped_to_incorrect": list(self.flipped_to_incorrect),
        }

    def render_text(self) -> str:
        widths = (12, 10, 10, 9, 10)
        header = ("bucket", "a", "b", "delta", "relative")
        lines = [
            "  ".join(h.ljust(w) for h, w in zip(header, widths)),
            "  ".join("-" * w for w in widths),
        ]
        for row in self.rows:
            lines.append(
                "  ".join(
                    str(v).ljust(w)
                    for v, w in zip(
                        (
                            row["bucket"],
                            f"{row['accuracy_a'] * 100:.1f}",
                            f"{row['accuracy_b'] * 100:.1f}",
                            row["delta_points_str"],
                            row["relative_str"],
                        ),
                        widths,
                    )
                )
            )
        lines.append(
            f"flipped to correct: {len(self.flipped_to_correct)}, "
            f"flipped to incorrect: {len(self.flipped_to_incorrect)}"
        )
        return "\n".join(lines)


def compare_runs(a: EvalResult, b: EvalResult) -> ComparisonReport:
    """Per-bucket and overall deltas of run b over run a, in accuracy points."""
    ids_a = {p.item_id for p in a.predictions}
    ids_b = {p.item_id for p in b.predictions}
    if ids_a != ids_b:
        raise ReportError(
            f"runs cover different items ({len(ids_a ^ ids_b)} differ); cannot compare"
        )

    def row(bucket: str, acc_a: float, acc_b: float) -> dict:
        return {
            "bucket": bucket,
            "accuracy_a": acc_a,
            "accuracy_b": acc_b,
            "delta_points": (acc_b - acc_a) * 100.0,
            "delta_points_str": format_points((acc_b - acc_a) * 100.0),
            "relative_str": format_relative(acc_a, acc_b),
        }

    rows = []
    bucket_names = list(a.accuracy_by_bucket)
    bucket_names += [n for n in b.accuracy_by_bucket if n not in bucket_names]
    for name in bucket_names:
        in_a = a.accuracy_by_bucket.get(name)
        in_b = b.accuracy_by_bucket.get(name)
        if in_a is None or in_b is None:
            continue
        rows.append(row(name, in_a["accuracy"], in_b["accuracy"]))
    rows.append(row("overall", a.accuracy_overall, b.accuracy_overall))

    correct_a = {p.item_id: p.correct for p in a.predictions}
    gained = sorted(
        p.item_id for p in b.predictions if p.correct and not correct_a[p.item_id]
    )
    lost = sorted(
        p.item_id for p in b.predictions if not p.correct and correct_a[p.item_id]
    )
    return ComparisonReport(
        run_a=a.run_id,
        run_b=b.run_id,
        rows=tuple(rows),
        flipped_to_correct=tuple(gained),
        flipped_to_incorrect=tuple(lost),
    )
