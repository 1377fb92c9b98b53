"""Multiple-choice video QA datasets, duration buckets, and prompt rendering.

Three input formats are supported:

* ``generic`` — one JSON object per line:
  ``{"id", "video", "question", "options": [{"letter", "text"}], "answer",
  "duration_s", "tags"}``.  True/false records may instead carry a boolean
  ``answer`` and no options; they become two-option A/B items.
* ``vmme`` — a JSON array of records with ``video_id``/``question_id``,
  ``question``, ``options`` as "A. text" strings, ``answer``, and either a
  numeric ``duration_seconds`` or a ``duration`` category
  (short/medium/long, mapped to 80/500/2500 s).
* ``timescope`` — JSONL with ``id``/``question_id``, ``video``/``video_path``,
  ``question``, ``options`` (either shape), ``answer``, ``duration_seconds``.

Prompts: the default rendering is question, lettered options, then the fixed
instruction line asking for the bare option letter.  Three optional panel
descriptions can be layered in; none is added by default.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DatasetError, TemplateError

LETTERS = "ABCDEF"

INSTRUCTION = "Answer with the option's letter from the given choices directly.\n"

PROMPT1_TEXT = (
    "You are given a sequence of images. Each image is a composite grid of video frames "
    "arranged in temporal order: panels are ordered from left to right, then top to bottom "
    "— like reading a book. Within each composite, the panels represent consecutive frames "
    "from the video. Across the sequence, the composites are shown in chronological order. "
    "When answering, interpret the full temporal sequence, not individual panels in "
    "isolation."
)
PROMPT2_TEXT = (
    "When answering, treat the panels as frames from one video, in order from left to "
    "right, then top to bottom."
)
PROMPT3_TEXT = (
    "Each image is divided into {r} rows and {c} columns of panels. Read them in "
    "left-to-right top-to-bottom order as consecutive video frames. Answer with the "
    "option's letter from the given choices directly."
)

TEMPLATE_DEFAULT = "default"
TEMPLATE_P1 = "p1"
TEMPLATE_P2 = "p2"
TEMPLATE_P3 = "p3"
TEMPLATE_CUSTOM = "custom"

PLACEMENT_BEFORE = "before_question"
PLACEMENT_AFTER = "after_question"

FORMAT_GENERIC = "generic"
FORMAT_VMME = "vmme"
FORMAT_TIMESCOPE = "timescope"

VMME_CATEGORY_SECONDS = {"short": 80.0, "medium": 500.0, "long": 2500.0}

_LETTERED_OPTION = re.compile(r"^([A-Z])[.)]\s*(.*)$", re.DOTALL)


@dataclass(frozen=True)
class QAItem:
    item_id: str
    video_uri: str
    question: str
    options: tuple[tuple[str, str], ...]
    gold: str
    duration_seconds: float
    tags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        letters = tuple(letter for letter, _ in self.options)
        n = len(letters)
        if not (2 <= n <= 6):
            raise ValueError(f"need 2-6 options, got {n}")
        if letters != tuple(LETTERS[:n]):
            raise ValueError(
                f"option letters must be consecutive from 'A', got {letters}"
            )
        if self.gold not in letters:
            raise ValueError(f"gold {self.gold!r} not among options {letters}")
        if not (math.isfinite(self.duration_seconds) and self.duration_seconds >= 0):
            raise ValueError(f"bad duration {self.duration_seconds!r}")

    @property
    def letters(self) -> tuple[str, ...]:
        return tuple(letter for letter, _ in self.options)

    def to_dict(self) -> dict:
        return {
            "id": self.item_id,
            "video": self.video_uri,
            "question": self.question,
            "options": [{"letter": letter, "text": text} for letter, text in self.options],
            "answer": self.gold,
            "duration_s": self.duration_seconds,
            "tags": list(self.tags),
        }


@dataclass(frozen=True)
class PromptTemplate:
    """A prompt variant: the default bare rendering or an added panel description."""

    template_id: str
    text: str = ""
    placement: str = PLACEMENT_BEFORE

    @classmethod
    def default(cls) -> "PromptTemplate":
        return cls(TEMPLATE_DEFAULT)

    @classmethod
    def panel_description_book(cls) -> "PromptTemplate":
        return cls(TEMPLATE_P1, PROMPT1_TEXT, PLACEMENT_BEFORE)

    @classmethod
    def panel_description_short(cls) -> "PromptTemplate":
        return cls(TEMPLATE_P2, PROMPT2_TEXT, PLACEMENT_BEFORE)

    @classmethod
    def panel_description_grid(cls) -> "PromptTemplate":
        return cls(TEMPLATE_P3, PROMPT3_TEXT, PLACEMENT_AFTER)

    @classmethod
    def custom(cls, text: str, placement: str = PLACEMENT_BEFORE) -> "PromptTemplate":
        return cls(TEMPLATE_CUSTOM, text, placement)

    @classmethod
    def by_name(cls, name: str) -> "PromptTemplate":
        table = {
            TEMPLATE_DEFAULT: cls.default,
            TEMPLATE_P1: cls.panel_description_book,
            TEMPLATE_P2: cls.panel_description_short,
            TEMPLATE_P3: cls.panel_description_grid,
        }
        if name not in table:
            raise TemplateError(f"unknown template {name!r}; expected one of {sorted(table)}")
        return table[name]()


def render_prompt(
    item: QAItem,
    template: PromptTemplate | None = None,
    grid: tuple[int, int] | None = None,
) -> str:
    """Render the full text prompt for one item.

    The default and the two descriptive preambles end with the standard
    letter-only instruction; the grid-aware description embeds that
    instruction itself, so it is placed after the question and nothing else
    is appended.  Custom templates are inserted verbatim with no instruction.
    """
    options_block = "\n".join(f"{letter}. {text}" for letter, text in item.options)
    body = f"{item.question}\n{options_block}"

    if template is None or template.template_id == TEMPLATE_DEFAULT:
        return f"{body}\n{INSTRUCTION}"
    if template.template_id in (TEMPLATE_P1, TEMPLATE_P2):
        return f"{template.text}\n{body}\n{INSTRUCTION}"
    if template.template_id == TEMPLATE_P3:
        if grid is None:
            raise TemplateError("grid template needs (rows, cols)")
        rows, cols = grid
        text = template.text.replace("{r}", str(rows)).replace("{c}", str(cols))
        return f"{body}\n{text}\n"
    if template.template_id == TEMPLATE_CUSTOM:
        if not template.text:
            return body
        if template.placement == PLACEMENT_AFTER:
            return f"{body}\n{template.text}"
        return f"{template.text}\n{body}"
    raise TemplateError(f"unknown template id {template.template_id!r}")


@dataclass(frozen=True)
class DurationBuckets:
    """Named, contiguous ranges over duration; uppers are inclusive, last is inf."""

    names: tuple[str, ...]
    uppers: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.names or len(self.names) != len(self.uppers):
            raise ValueError("names and uppers must be non-empty and parallel")
        if any(b <= a for a, b in zip(self.uppers, self.uppers[1:])):
            raise ValueError(f"bucket uppers must be strictly increasing: {self.uppers}")
        if self.uppers[-1] != math.inf:
            raise ValueError("last bucket must extend to infinity")

    @classmethod
    def vmme_default(cls) -> "DurationBuckets":
        # cut points are a configurable convention; only the averages 80/500/2500 are given
        return cls(("short", "medium", "long"), (120.0, 1000.0, math.inf))

    @classmethod
    def single(cls, name: str = "all") -> "DurationBuckets":
        return cls((name,), (math.inf,))

    @classmethod
    def from_distinct_durations(cls, durations: list[float]) -> "DurationBuckets":
        """One bucket per distinct duration, split at midpoints."""
        values = sorted(set(durations))
        if not values:
            raise ValueError("no durations to bucket")
        uppers = [
            (a + b) / 2.0 for a, b in zip(values, values[1:])
        ] + [math.inf]
        names = tuple(f"{v:g}s" for v in values)
        return cls(names, tuple(uppers))

    def assign(self, duration_seconds: float) -> str:
        for name, upper in zip(self.names, self.uppers):
            if duration_seconds <= upper:
                return name
        return self.names[-1]


def bucket_items(items: list[QAItem], buckets: DurationBuckets) -> dict[str, list[QAItem]]:
    """Group items by bucket; only buckets that received items appear."""
    out: dict[str, list[QAItem]] = {}
    for item in items:
        out.setdefault(buckets.assign(item.duration_seconds), []).append(item)
    return out


def _parse_options(raw, where: str) -> tuple[tuple[str, str], ...]:
    if not isinstance(raw, list) or not raw:
        raise DatasetError(f"{where}: options must be a non-empty list")
    pairs = []
    for entry in raw:
        if isinstance(entry, dict):
            try:
                pairs.append((str(entry["letter"]), str(entry["text"])))
            except KeyError as exc:
                raise DatasetError(f"{where}: option missing {exc}") from exc
        elif isinstance(entry, str):
            m = _LETTERED_OPTION.match(entry.strip())
            if not m:
                raise DatasetError(f"{where}: cannot parse option string {entry!r}")
            pairs.append((m.group(1), m.group(2)))
        else:
            raise DatasetError(f"{where}: bad option entry {entry!r}")
    return tuple(pairs)


def _make_item(where: str, **kwargs) -> QAItem:
    try:
        return QAItem(**kwargs)
    except ValueError as exc:
        raise DatasetError(f"{where}: {exc}") from exc


def _generic_record(rec: dict, where: str) -> QAItem:
    for key in ("id", "video", "question", "answer"):
        if key not in rec:
            raise DatasetError(f"{where}: missing field {key!r}")
    answer = rec["answer"]
    if isinstance(answer, bool) and "options" not in rec:
        options = (("A", "True"), ("B", "False"))
        gold = "A" if answer else "B"
    else:
        options = _parse_options(rec.get("options"), where)
        gold = str(answer)
    if "duration_s" not in rec:
        raise DatasetError(f"{where}: missing field 'duration_s'")
    return _make_item(
        where,
        item_id=str(rec["id"]),
        video_uri=str(rec["video"]),
        question=str(rec["question"]),
        options=options,
        gold=gold,
        duration_seconds=float(rec["duration_s"]),
        tags=tuple(str(t) for t in rec.get("tags", [])),
    )


def _vmme_record(rec: dict, where: str) -> QAItem:
    for key in ("question", "answer", "options"):
        if key not in rec:
            raise DatasetError(f"{where}: missing field {key!r}")
    item_id = str(rec.get("question_id") or rec.get("video_id") or "")
    if not item_id:
        raise DatasetError(f"{where}: need question_id or video_id")
    if "duration_seconds" in rec:
        duration = float(rec["duration_seconds"])
    elif rec.get("duration") in VMME_CATEGORY_SECONDS:
        duration = VMME_CATEGORY_SECONDS[rec["duration"]]
    else:
        raise DatasetError(
            f"{where}: need numeric duration_seconds or duration in "
            f"{sorted(VMME_CATEGORY_SECONDS)}"
        )
    tags = tuple(
        str(rec[k]) for k in ("domain", "sub_category", "task_type") if rec.get(k)
    )
    return _make_item(
        where,
        item_id=item_id,
        video_uri=str(rec.get("video_path") or rec.get("video_id") or item_id),
        question=str(rec["question"]),
        options=_parse_options(rec["options"], where),
        gold=str(rec["answer"]),
        duration_seconds=duration,
        tags=tags,
    )


def _timescope_record(rec: dict, where: str) -> QAItem:
    item_id = str(rec.get("id") or rec.get("question_id") or "")
    if not item_id:
        raise DatasetError(f"{where}: need id or question_id")
    video = rec.get("video") or rec.get("video_path")
    if video is None:
        raise DatasetError(f"{where}: need video or video_path")
    for key in ("question", "answer", "options", "duration_seconds"):
        if key not in rec:
            raise DatasetError(f"{where}: missing field {key!r}")
    tags = tuple(str(t) for t in rec.get("tags", [])) or (
        (str(rec["task"]),) if rec.get("task") else ()
    )
    return _make_item(
        where,
        item_id=item_id,
        video_uri=str(video),
        question=str(rec["question"]),
        options=_parse_options(rec["options"], where),
        gold=str(rec["answer"]),
        duration_seconds=float(rec["duration_seconds"]),
        tags=tags,
    )


_PARSERS = {
    FORMAT_GENERIC: _generic_record,
    FORMAT_VMME: _vmme_record,
    FORMAT_TIMESCOPE: _timescope_record,
}


def _iter_records(path: Path, format: str):
    if format == FORMAT_VMME:
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DatasetError(f"{path}: {exc}") from exc
        if not isinstance(data, list):
            raise DatasetError(f"{path}: expected a JSON array of records")
        for n, rec in enumerate(data):
            yield rec, f"{path}[{n}]"
        return
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DatasetError(f"{path}: {exc}") from exc
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            yield json.loads(line), f"{path}:{n}"
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{n}: {exc}") from exc


def load_dataset(path: Path | str, format: str = FORMAT_GENERIC) -> list[QAItem]:
    """Load and validate a dataset; rejects duplicate item ids."""
    if format not in _PARSERS:
        raise DatasetError(f"unknown dataset format {format!r}")
    path = Path(path)
    parser = _PARSERS[format]
    items: list[QAItem] = []
    seen: set[str] = set()
    for rec, where in _iter_records(path, format):
        if not isinstance(rec, dict):
            raise DatasetError(f"{where}: expected a JSON object")
        item = parser(rec, where)
        if item.item_id in seen:
            raise DatasetError(f"{where}: duplicate item id {item.item_id!r}")
        seen.add(item.item_id)
        items.append(item)
    return items


def save_dataset(items: list[QAItem], path: Path | str) -> None:
    """Write items as canonical generic JSONL (stable key order, one per line)."""
    lines = [
        json.dumps(item.to_dict(), sort_keys=True, ensure_ascii=False) for item in items
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
