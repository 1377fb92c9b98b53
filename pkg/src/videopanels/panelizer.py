"""Tile downsampling and grid composition.

Sampled frames are shrunk to tile size with half-pixel-centered bilinear
interpolation, then packed into grid images in left-to-right, top-to-bottom
temporal order.  Composition itself is a bit-exact pixel copy; all resampling
happens in the per-tile downsample step.  A short final chunk is completed
with solid-black padding tiles recorded as source index -1.

A Manifest ties each run together: the video, the plan, the policy, and the
exact source indices behind every tile of every panel.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from io import BytesIO
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .errors import InvalidGeometry, PlanViolation
from .framesource import Frame
from .policy import SamplePlan, SamplingPolicy, VideoMeta

MODE_DYNAMIC = "dynamic"
MODE_BASELINE = "baseline"
MODE_LOWRES = "lowres"

PAD_INDEX = -1
PAD_TIMESTAMP = -1.0
PAD_COLOR = (0, 0, 0)


@dataclass(frozen=True)
class PanelImage:
    """One composed grid image plus the provenance of each tile."""

    pixels: bytes
    width: int
    height: int
    grid_rows: int
    grid_cols: int
    source_indices: tuple[int, ...]
    source_timestamps: tuple[float, ...]
    panel_ordinal: int

    def __post_init__(self) -> None:
        if len(self.pixels) != self.width * self.height * 3:
            raise InvalidGeometry(
                f"panel {self.panel_ordinal}: pixel buffer does not match "
                f"{self.width}x{self.height}x3"
            )
        cells = self.grid_rows * self.grid_cols
        if len(self.source_indices) != cells or len(self.source_timestamps) != cells:
            raise InvalidGeometry(
                f"panel {self.panel_ordinal}: provenance length != {cells} grid cells"
            )
        real = [i for i in self.source_indices if i != PAD_INDEX]
        if any(b <= a for a, b in zip(real, real[1:])):
            raise InvalidGeometry(
                f"panel {self.panel_ordinal}: source indices not increasing: {real}"
            )

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.height, self.width, 3)

    def to_png_bytes(self) -> bytes:
        buf = BytesIO()
        Image.frombytes("RGB", (self.width, self.height), self.pixels).save(buf, format="PNG")
        return buf.getvalue()


@dataclass(frozen=True)
class PanelRecord:
    output_path: str
    panel_ordinal: int
    source_indices: tuple[int, ...]
    source_timestamps: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "output_path": self.output_path,
            "panel_ordinal": self.panel_ordinal,
            "source_indices": list(self.source_indices),
            "source_timestamps": list(self.source_timestamps),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PanelRecord":
        return cls(
            output_path=str(d["output_path"]),
            panel_ordinal=int(d["panel_ordinal"]),
            source_indices=tuple(int(i) for i in d["source_indices"]),
            source_timestamps=tuple(float(t) for t in d["source_timestamps"]),
        )


@dataclass(frozen=True)
class Manifest:
    """Per-video provenance record written next to the rendered panels."""

    video_uri: str
    meta: VideoMeta
    plan: SamplePlan
    policy: SamplingPolicy
    mode: str
    panels: tuple[PanelRecord, ...]
    toolkit_version: str = __version__
    run_config: dict | None = None
    base_dir: Path | None = dataclasses.field(default=None, compare=False)

    def validate(self) -> None:
        flat = [i for rec in self.panels for i in rec.source_indices if i != PAD_INDEX]
        if tuple(flat) != self.plan.frame_indices:
            raise PlanViolation(
                "manifest source indices do not reproduce the plan's frame indices"
            )
        pads_by_panel = [
            sum(1 for i in rec.source_indices if i == PAD_INDEX) for rec in self.panels
        ]
        if sum(pads_by_panel) != self.plan.pad_frames:
            raise PlanViolation(
                f"manifest has {sum(pads_by_panel)} padding tiles, plan says "
                f"{self.plan.pad_frames}"
            )
        if any(p > 0 for p in pads_by_panel[:-1]):
            raise PlanViolation("padding tiles may appear only in the final panel")
        if len(self.panels) != self.plan.panel_count:
            raise PlanViolation(
                f"manifest has {len(self.panels)} panels, plan says {self.plan.panel_count}"
            )

    def to_dict(self) -> dict:
        d = {
            "video_uri": self.video_uri,
            "video_meta": self.meta.to_dict(),
            "sample_plan": self.plan.to_dict(),
            "policy": self.policy.to_dict(),
            "mode": self.mode,
            "toolkit_version": self.toolkit_version,
            "panels": [rec.to_dict() for rec in self.panels],
        }
        if self.run_config is not None:
            d["run_config"] = self.run_config
        return d

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "Manifest":
        m = cls(
            video_uri=str(d["video_uri"]),
            meta=VideoMeta.from_dict(d["video_meta"]),
            plan=SamplePlan.from_dict(d["sample_plan"]),
            policy=SamplingPolicy.from_dict(d["policy"]),
            mode=str(d["mode"]),
            panels=tuple(PanelRecord.from_dict(p) for p in d["panels"]),
            toolkit_version=str(d.get("toolkit_version", "")),
            run_config=d.get("run_config"),
            base_dir=base_dir,
        )
        m.validate()
        return m

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def load_manifest(path: Path | str) -> Manifest:
    path = Path(path)
    return Manifest.from_dict(json.loads(path.read_text()), base_dir=path.parent)


def _bilinear_resize(src: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Half-pixel-centered bilinear resize with round-half-away-from-zero output.

    Output pixel centers map to source coordinates
    ((j + 0.5) * W/out_w - 0.5, (i + 0.5) * H/out_h - 0.5); edge samples clamp.
    Constant-color inputs reproduce exactly, and a same-size call is an
    identity, both of which downstream provenance checks rely on.
    """
    h, w = src.shape[:2]
    if (out_w, out_h) == (w, h):
        return src.copy()
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = (xs - x0)[None, :, None]
    fy = (ys - y0)[:, None, None]
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    img = src.astype(np.float64)
    top = img[y0c][:, x0c] * (1.0 - fx) + img[y0c][:, x1c] * fx
    bottom = img[y1c][:, x0c] * (1.0 - fx) + img[y1c][:, x1c] * fx
    blended = top * (1.0 - fy) + bottom * fy
    # floor(v + 0.5) == round half away from zero for non-negative v
    return np.floor(blended + 0.5).astype(np.uint8)


def downsample_tile(frame: Frame, tile_width: int, tile_height: int) -> Frame:
    """Shrink one frame to tile size; keeps index and timestamp."""
    if tile_width < 1 or tile_height < 1:
        raise InvalidGeometry(f"tile dims must be >= 1, got {tile_width}x{tile_height}")
    resized = _bilinear_resize(frame.to_array(), tile_width, tile_height)
    return Frame(frame.index, frame.timestamp_seconds, tile_width, tile_height, resized.tobytes())


def compose_panel(tiles: list[Frame], grid_rows: int, grid_cols: int, panel_ordinal: int = 0) -> PanelImage:
    """Stack tiles into one image, row-major: tile k at (k // cols, k % cols)."""
    if grid_rows < 1 or grid_cols < 1:
        raise InvalidGeometry(f"grid must be >= 1x1, got {grid_rows}x{grid_cols}")
    if len(tiles) != grid_rows * grid_cols:
        raise InvalidGeometry(
            f"need {grid_rows * grid_cols} tiles for a {grid_rows}x{grid_cols} grid, "
            f"got {len(tiles)}"
        )
    tw, th = tiles[0].width, tiles[0].height
    for t in tiles:
        if (t.width, t.height) != (tw, th):
            raise InvalidGeometry(
                f"tile {t.index} is {t.width}x{t.height}, expected {tw}x{th}"
            )
    canvas = np.empty((grid_rows * th, grid_cols * tw, 3), dtype=np.uint8)
    for k, tile in enumerate(tiles):
        r, c = divmod(k, grid_cols)
        canvas[r * th : (r + 1) * th, c * tw : (c + 1) * tw] = tile.to_array()
    return PanelImage(
        pixels=canvas.tobytes(),
        width=grid_cols * tw,
        height=grid_rows * th,
        grid_rows=grid_rows,
        grid_cols=grid_cols,
        source_indices=tuple(t.index for t in tiles),
        source_timestamps=tuple(t.timestamp_seconds for t in tiles),
        panel_ordinal=panel_ordinal,
    )


def slice_panel(panel: PanelImage) -> list[np.ndarray]:
    """Inverse of compose_panel: the tiles back, in reading order."""
    arr = panel.to_array()
    th = panel.height // panel.grid_rows
    tw = panel.width // panel.grid_cols
    return [
        arr[r * th : (r + 1) * th, c * tw : (c + 1) * tw].copy()
        for r in range(panel.grid_rows)
        for c in range(panel.grid_cols)
    ]


def _panel_name(ordinal: int) -> str:
    return f"panel_{ordinal:04d}.png"


def panelize_sequence(
    frames: list[Frame],
    plan: SamplePlan,
    *,
    meta: VideoMeta,
    policy: SamplingPolicy,
    video_uri: str = "",
    mode: str = MODE_DYNAMIC,
    run_config: dict | None = None,
) -> tuple[list[PanelImage], Manifest]:
    """Turn the sampled frames of one video into panels plus their manifest.

    With the panel branch off, frames whose size already equals the tile size
    pass through byte-identical as 1x1 "panels" (the lowres mode differs only
    in that its plan carries a smaller tile size, so each frame is shrunk).
    """
    if len(frames) != plan.frames_to_sample:
        raise PlanViolation(
            f"got {len(frames)} frames, plan wants {plan.frames_to_sample}"
        )
    order = [f.index for f in frames]
    if any(b <= a for a, b in zip(order, order[1:])):
        raise PlanViolation(f"frames must be sorted by index, got {order}")

    panels: list[PanelImage] = []
    if not plan.panel_active:
        for ordinal, frame in enumerate(frames):
            tile = (
                frame
                if (frame.width, frame.height) == (plan.tile_width, plan.tile_height)
                else downsample_tile(frame, plan.tile_width, plan.tile_height)
            )
            panels.append(compose_panel([tile], 1, 1, panel_ordinal=ordinal))
    else:
        per_panel = plan.tiles_per_panel
        tiles = [downsample_tile(f, plan.tile_width, plan.tile_height) for f in frames]
        pad = Frame.solid(
            plan.tile_width, plan.tile_height, PAD_COLOR,
            index=PAD_INDEX, timestamp_seconds=PAD_TIMESTAMP,
        )
        for ordinal in range(plan.panel_count):
            chunk = tiles[ordinal * per_panel : (ordinal + 1) * per_panel]
            chunk += [pad] * (per_panel - len(chunk))
            panels.append(
                compose_panel(chunk, plan.grid_rows, plan.grid_cols, panel_ordinal=ordinal)
            )

    records = tuple(
        PanelRecord(
            output_path=_panel_name(p.panel_ordinal),
            panel_ordinal=p.panel_ordinal,
            source_indices=p.source_indices,
            source_timestamps=p.source_timestamps,
        )
        for p in panels
    )
    manifest = Manifest(
        video_uri=video_uri,
        meta=meta,
        plan=plan,
        policy=policy,
        mode=mode,
        panels=records,
        run_config=run_config,
    )
    manifest.validate()
    return panels, manifest


def write_outputs(panels: list[PanelImage], manifest: Manifest, out_dir: Path | str) -> Path:
    """Write panel PNGs and manifest.json into out_dir; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_ordinal = {rec.panel_ordinal: rec for rec in manifest.panels}
    for panel in panels:
        rec = by_ordinal[panel.panel_ordinal]
        (out_dir / rec.output_path).write_bytes(panel.to_png_bytes())
    manifest_path = out_dir / "manifest.json"
    manifest.save(manifest_path)
    return manifest_path
