"""Frame sampling policy: how many frames to take, which ones, and whether to tile them.

The decision rule: with a context window of C images and a video of D frames,
sample T = C frames when gamma * C >= D (the samples are already close
together), otherwise sample T = alpha * beta * C frames and pack every
alpha * beta of them into one grid image downstream.  gamma is a minimum
inter-frame spacing, given either as an absolute frame count or as a multiple
of the source frame rate.

Conventions baked in here:

* alpha counts tiles horizontally (grid columns), beta vertically (grid rows).
* Frame selection is center-of-bin uniform: index i of n is
  floor((i + 0.5) * D / n), which avoids the bias toward the start of the
  video that plain floor(i * D / n) has.
* Videos shorter than alpha*beta*C frames in the tiling branch are clamped:
  T = D, the grid stays the same, and the last panel is padded.
* The boundary gamma * C == D does not tile.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import EmptyVideo, InsufficientFrames, InvalidPolicy

FPS_MULTIPLE = "fps_multiple"
ABSOLUTE_FRAMES = "absolute_frames"


@dataclass(frozen=True)
class GammaSpec:
    """Minimum inter-frame spacing, absolute or relative to the source fps."""

    kind: str
    value: float

    def __post_init__(self) -> None:
        if self.kind not in (FPS_MULTIPLE, ABSOLUTE_FRAMES):
            raise InvalidPolicy(f"unknown gamma kind {self.kind!r}")
        if not math.isfinite(self.value) or self.value < 0:
            raise InvalidPolicy(f"gamma value must be finite and >= 0, got {self.value!r}")

    @classmethod
    def fps_multiple(cls, value: float) -> "GammaSpec":
        return cls(FPS_MULTIPLE, float(value))

    @classmethod
    def absolute(cls, frames: float) -> "GammaSpec":
        return cls(ABSOLUTE_FRAMES, float(frames))

    @classmethod
    def parse(cls, text: str) -> "GammaSpec":
        """Parse ``<float>fps`` (multiple of source fps) or ``<float>f`` (frames)."""
        t = text.strip().lower()
        try:
            if t.endswith("fps"):
                return cls.fps_multiple(float(t[:-3]))
            if t.endswith("f"):
                return cls.absolute(float(t[:-1]))
        except ValueError:
            pass
        raise InvalidPolicy(f"gamma must look like '1fps' or '30f', got {text!r}")

    def __str__(self) -> str:
        return f"{self.value:g}{'fps' if self.kind == FPS_MULTIPLE else 'f'}"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value}

    @classmethod
    def from_dict(cls, d: dict) -> "GammaSpec":
        return cls(d["kind"], float(d["value"]))


@dataclass(frozen=True)
class SamplingPolicy:
    """Tunable knobs of the sampler: context window, grid shape, spacing threshold."""

    context_window: int
    alpha: int = 2
    beta: int = 2
    gamma: GammaSpec = field(default_factory=lambda: GammaSpec.fps_multiple(1.0))

    def __post_init__(self) -> None:
        if self.context_window < 1:
            raise InvalidPolicy(f"context_window must be >= 1, got {self.context_window}")
        if self.alpha < 1 or self.beta < 1:
            raise InvalidPolicy(f"alpha and beta must be >= 1, got {self.alpha}x{self.beta}")

    def to_dict(self) -> dict:
        return {
            "context_window": self.context_window,
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingPolicy":
        return cls(
            context_window=int(d["context_window"]),
            alpha=int(d["alpha"]),
            beta=int(d["beta"]),
            gamma=GammaSpec.from_dict(d["gamma"]),
        )


@dataclass(frozen=True)
class VideoMeta:
    """Probed facts about one video.

    ``frame_count == 0`` is representable so callers can surface a precise
    EmptyVideo error; every operation that consumes a plan rejects it.
    """

    frame_count: int
    fps: float
    width: int
    height: int
    duration_seconds: float | None = None

    def __post_init__(self) -> None:
        if self.frame_count < 0:
            raise ValueError(f"frame_count must be >= 0, got {self.frame_count}")
        if not math.isfinite(self.fps) or self.fps <= 0:
            raise ValueError(f"fps must be finite and > 0, got {self.fps}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"dimensions must be >= 1, got {self.width}x{self.height}")
        if self.duration_seconds is None:
            object.__setattr__(self, "duration_seconds", self.frame_count / self.fps)
        elif abs(self.duration_seconds - self.frame_count / self.fps) > 1.0 / self.fps:
            # container rounding tolerance: one frame period
            raise ValueError(
                f"duration {self.duration_seconds}s inconsistent with "
                f"{self.frame_count} frames at {self.fps} fps"
            )

    def to_dict(self) -> dict:
        return {
            "frame_count": self.frame_count,
            "fps": self.fps,
            "width": self.width,
            "height": self.height,
            "duration_seconds": self.duration_seconds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VideoMeta":
        return cls(
            frame_count=int(d["frame_count"]),
            fps=float(d["fps"]),
            width=int(d["width"]),
            height=int(d["height"]),
            duration_seconds=float(d["duration_seconds"]) if d.get("duration_seconds") is not None else None,
        )


@dataclass(frozen=True)
class SamplePlan:
    """Resolved sampling outcome for one video: what to fetch and how to tile it."""

    panel_active: bool
    frames_to_sample: int
    frame_indices: tuple[int, ...]
    grid_rows: int
    grid_cols: int
    tile_width: int
    tile_height: int
    panel_count: int
    pad_frames: int

    @property
    def tiles_per_panel(self) -> int:
        return self.grid_rows * self.grid_cols

    def to_dict(self) -> dict:
        return {
            "panel_active": self.panel_active,
            "frames_to_sample": self.frames_to_sample,
            "frame_indices": list(self.frame_indices),
            "grid_rows": self.grid_rows,
            "grid_cols": self.grid_cols,
            "tile_width": self.tile_width,
            "tile_height": self.tile_height,
            "panel_count": self.panel_count,
            "pad_frames": self.pad_frames,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SamplePlan":
        return cls(
            panel_active=bool(d["panel_active"]),
            frames_to_sample=int(d["frames_to_sample"]),
            frame_indices=tuple(int(i) for i in d["frame_indices"]),
            grid_rows=int(d["grid_rows"]),
            grid_cols=int(d["grid_cols"]),
            tile_width=int(d["tile_width"]),
            tile_height=int(d["tile_height"]),
            panel_count=int(d["panel_count"]),
            pad_frames=int(d["pad_frames"]),
        )

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def resolve_gamma(policy: SamplingPolicy, meta: VideoMeta) -> float:
    """Spacing threshold in frames for this video."""
    if policy.gamma.kind == FPS_MULTIPLE:
        g = policy.gamma.value * meta.fps
    else:
        g = policy.gamma.value
    if not math.isfinite(g) or g < 0:
        raise InvalidPolicy(f"resolved gamma is not a finite non-negative value: {g!r}")
    return g


def uniform_indices(frame_count: int, n: int) -> list[int]:
    """Center-of-bin uniform selection of n indices from [0, frame_count).

    indices[i] = floor((i + 0.5) * frame_count / n), computed in exact integer
    arithmetic.  Strictly increasing for n <= frame_count.
    """
    if n < 1:
        raise ValueError(f"need at least one sample point, got n={n}")
    if n > frame_count:
        raise InsufficientFrames(f"cannot pick {n} distinct frames from {frame_count}")
    return [((2 * i + 1) * frame_count) // (2 * n) for i in range(n)]


def _grid_for(policy: SamplingPolicy, meta: VideoMeta) -> tuple[int, int, int, int]:
    rows, cols = policy.beta, policy.alpha
    # floor division keeps panel dims <= source dims; at most cols-1/rows-1 px lost
    tile_w = max(1, meta.width // cols)
    tile_h = max(1, meta.height // rows)
    return rows, cols, tile_w, tile_h


def plan_sampling(policy: SamplingPolicy, meta: VideoMeta) -> SamplePlan:
    """Decide panel on/off and pick frame indices for one video.

    No tiling when gamma*C >= D (boundary inclusive); otherwise a
    beta x alpha grid with T = alpha*beta*C frames, clamped to D when the
    video is shorter than that.
    """
    if meta.frame_count == 0:
        raise EmptyVideo("video has no decodable frames")
    gamma_frames = resolve_gamma(policy, meta)
    if gamma_frames * policy.context_window >= meta.frame_count:
        return _no_panel_plan(policy, meta, meta.width, meta.height)

    rows, cols, tile_w, tile_h = _grid_for(policy, meta)
    frames = min(policy.alpha * policy.beta * policy.context_window, meta.frame_count)
    per_panel = rows * cols
    panel_count = -(-frames // per_panel)
    return SamplePlan(
        panel_active=True,
        frames_to_sample=frames,
        frame_indices=tuple(uniform_indices(meta.frame_count, frames)),
        grid_rows=rows,
        grid_cols=cols,
        tile_width=tile_w,
        tile_height=tile_h,
        panel_count=panel_count,
        pad_frames=panel_count * per_panel - frames,
    )


def plan_baseline(policy: SamplingPolicy, meta: VideoMeta) -> SamplePlan:
    """The A/B control: tiling forced off, T = C, frames kept at full size."""
    if meta.frame_count == 0:
        raise EmptyVideo("video has no decodable frames")
    return _no_panel_plan(policy, meta, meta.width, meta.height)


def plan_lowres(policy: SamplingPolicy, meta: VideoMeta) -> SamplePlan:
    """Input-side ablation control: T = C frames, each shrunk to tile size.

    Applies only where tiling would trigger; shorter videos get the plain
    no-panel plan, mirroring how the dynamic rule treats them.
    """
    if meta.frame_count == 0:
        raise EmptyVideo("video has no decodable frames")
    gamma_frames = resolve_gamma(policy, meta)
    if gamma_frames * policy.context_window >= meta.frame_count:
        return _no_panel_plan(policy, meta, meta.width, meta.height)
    _, _, tile_w, tile_h = _grid_for(policy, meta)
    return _no_panel_plan(policy, meta, tile_w, tile_h)


def _no_panel_plan(policy: SamplingPolicy, meta: VideoMeta, tile_w: int, tile_h: int) -> SamplePlan:
    frames = min(policy.context_window, meta.frame_count)
    return SamplePlan(
        panel_active=False,
        frames_to_sample=frames,
        frame_indices=tuple(uniform_indices(meta.frame_count, frames)),
        grid_rows=1,
        grid_cols=1,
        tile_width=tile_w,
        tile_height=tile_h,
        panel_count=frames,
        pad_frames=0,
    )
