"""Frame access for two kinds of sources.

ImageDirectory: a directory of image files; lexicographic file order defines
frame order.  An optional ``meta.json`` sidecar supplies ``fps`` (and may
echo width/height).

DecoderPipe: an external decoder subprocess writes raw packed 8-bit RGB
frames back-to-back on stdout, width*height*3 bytes each, no headers.  The
command is a template whose tokens may contain ``{uri}``, ``{width}`` and
``{height}`` placeholders; reads are a single forward pass that discards
unrequested frames and never seeks backward.
"""

from __future__ import annotations

import json
import shlex
import shutil
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import EmptyVideo, SourceError
from .policy import VideoMeta

IMAGE_DIRECTORY = "image_directory"
DECODER_PIPE = "decoder_pipe"

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp"}
SIDECAR_NAME = "meta.json"

DEFAULT_DECODER_CMD = (
    "ffmpeg -nostdin -loglevel error -i {uri} "
    "-f rawvideo -pix_fmt rgb24 -vf scale={width}:{height} pipe:1"
)

_STDERR_EXCERPT_BYTES = 4096


@dataclass(frozen=True)
class Frame:
    """One decoded frame: packed 8-bit RGB, row-major, 3 channels."""

    index: int
    timestamp_seconds: float
    width: int
    height: int
    pixels: bytes

    def __post_init__(self) -> None:
        expected = self.width * self.height * 3
        if len(self.pixels) != expected:
            raise ValueError(
                f"frame {self.index}: got {len(self.pixels)} pixel bytes, "
                f"expected {self.width}x{self.height}x3 = {expected}"
            )

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.height, self.width, 3)

    @classmethod
    def from_array(cls, arr: np.ndarray, index: int, timestamp_seconds: float) -> "Frame":
        if arr.dtype != np.uint8 or arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected uint8 HxWx3 array, got {arr.dtype} {arr.shape}")
        h, w = arr.shape[:2]
        return cls(index, timestamp_seconds, w, h, arr.tobytes())

    @classmethod
    def solid(
        cls,
        width: int,
        height: int,
        color: tuple[int, int, int],
        index: int = -1,
        timestamp_seconds: float = -1.0,
    ) -> "Frame":
        return cls(index, timestamp_seconds, width, height, bytes(color) * (width * height))


@dataclass(frozen=True)
class FrameSource:
    kind: str
    uri: str
    meta: VideoMeta
    decoder_cmd: str | None = None
    files: tuple[str, ...] = field(default=(), repr=False)


def open_source(
    uri: str,
    *,
    fps_default: float = 1.0,
    decoder_cmd: str | None = None,
    meta: VideoMeta | None = None,
) -> FrameSource:
    """Probe a directory or video file and return a readable source."""
    path = Path(uri)
    if path.is_dir():
        probed, files = _probe_directory(path, fps_default)
        return FrameSource(IMAGE_DIRECTORY, str(uri), meta or probed, files=files)
    if meta is None:
        meta = _probe_video_file(path)
    return FrameSource(DECODER_PIPE, str(uri), meta, decoder_cmd=decoder_cmd or DEFAULT_DECODER_CMD)


def probe(uri: str, *, fps_default: float = 1.0) -> VideoMeta:
    return open_source(uri, fps_default=fps_default).meta


def _probe_directory(path: Path, fps_default: float) -> tuple[VideoMeta, tuple[str, ...]]:
    files = tuple(
        sorted(str(p) for p in path.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)
    )
    if not files:
        raise EmptyVideo(f"no image frames in directory {path}")
    try:
        with Image.open(files[0]) as img:
            width, height = img.size
    except OSError as exc:
        raise SourceError(f"cannot decode first frame {files[0]}: {exc}") from exc
    fps = fps_default
    sidecar = path / SIDECAR_NAME
    if sidecar.exists():
        try:
            side = json.loads(sidecar.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise SourceError(f"unreadable sidecar {sidecar}: {exc}") from exc
        fps = float(side.get("fps", fps_default))
    meta = VideoMeta(frame_count=len(files), fps=fps, width=width, height=height)
    return meta, files


def _probe_video_file(path: Path) -> VideoMeta:
    if not path.exists():
        raise SourceError(f"no such file: {path}")
    sidecar = Path(str(path) + ".meta.json")
    if sidecar.exists():
        try:
            side = json.loads(sidecar.read_text())
            return VideoMeta(
                frame_count=int(side["frame_count"]),
                fps=float(side["fps"]),
                width=int(side["width"]),
                height=int(side["height"]),
            )
        except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
            raise SourceError(f"bad sidecar {sidecar}: {exc}") from exc
    if shutil.which("ffprobe"):
        return _ffprobe(path)
    raise SourceError(
        f"cannot probe {path}: no {sidecar.name} sidecar and ffprobe is not installed"
    )


def _ffprobe(path: Path) -> VideoMeta:
    cmd = [
        "ffprobe", "-v", "error", "-select_streams", "v:0",
        "-show_entries", "stream=width,height,r_frame_rate,nb_frames,duration",
        "-of", "json", str(path),
    ]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise SourceError(f"ffprobe failed on {path}: {proc.stderr.strip()[:200]}")
    try:
        stream = json.loads(proc.stdout)["streams"][0]
        num, den = stream["r_frame_rate"].split("/")
        fps = float(num) / float(den)
        frames = stream.get("nb_frames")
        if frames is None:
            frames = round(float(stream["duration"]) * fps)
        return VideoMeta(
            frame_count=int(frames),
            fps=fps,
            width=int(stream["width"]),
            height=int(stream["height"]),
        )
    except (KeyError, IndexError, ValueError, ZeroDivisionError, json.JSONDecodeError) as exc:
        raise SourceError(f"cannot parse ffprobe output for {path}: {exc}") from exc


def _check_indices(indices: list[int], frame_count: int) -> None:
    if any(not isinstance(i, int) for i in indices):
        raise ValueError(f"indices must be integers, got {indices!r}")
    if any(b <= a for a, b in zip(indices, indices[1:])):
        raise ValueError(f"indices must be strictly increasing, got {indices!r}")
    for i in indices:
        if i < 0 or i >= frame_count:
            raise IndexError(f"frame index {i} out of range [0, {frame_count})")


def read_frames(source: FrameSource, indices: list[int]) -> list[Frame]:
    """Fetch frames at the given strictly increasing indices, in order."""
    _check_indices(indices, source.meta.frame_count)
    if not indices:
        return []
    if source.kind == IMAGE_DIRECTORY:
        return _read_from_directory(source, indices)
    if source.kind == DECODER_PIPE:
        return _read_from_pipe(source, indices)
    raise SourceError(f"unknown source kind {source.kind!r}")


def _read_from_directory(source: FrameSource, indices: list[int]) -> list[Frame]:
    meta = source.meta
    frames = []
    for i in indices:
        fname = source.files[i]
        try:
            with Image.open(fname) as img:
                rgb = img.convert("RGB")
                if rgb.size != (meta.width, meta.height):
                    raise SourceError(
                        f"{fname}: size {rgb.size} does not match probed "
                        f"{meta.width}x{meta.height}"
                    )
                pixels = rgb.tobytes()
        except OSError as exc:
            raise SourceError(f"cannot decode {fname}: {exc}") from exc
        frames.append(Frame(i, i / meta.fps, meta.width, meta.height, pixels))
    return frames


def _decoder_argv(source: FrameSource) -> list[str]:
    meta = source.meta
    # split first so a uri containing spaces stays one argument
    return [
        tok.format(uri=source.uri, width=meta.width, height=meta.height)
        for tok in shlex.split(source.decoder_cmd or DEFAULT_DECODER_CMD)
    ]


def _read_exact(stream, nbytes: int) -> bytes:
    chunks = []
    remaining = nbytes
    while remaining > 0:
        chunk = stream.read(remaining)
        if not chunk:
            break
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def _read_from_pipe(source: FrameSource, indices: list[int]) -> list[Frame]:
    meta = source.meta
    frame_size = meta.width * meta.height * 3
    wanted = set(indices)
    last = indices[-1]
    argv = _decoder_argv(source)
    try:
        proc = subprocess.Popen(argv, stdout=subprocess.PIPE, stderr=subprocess.PIPE)
    except OSError as exc:
        raise SourceError(f"cannot start decoder {argv[0]!r}: {exc}") from exc

    stderr_buf = bytearray()

    def _drain_stderr() -> None:
        while True:
            chunk = proc.stderr.read(1024)
            if not chunk:
                return
            if len(stderr_buf) < _STDERR_EXCERPT_BYTES:
                stderr_buf.extend(chunk)

    drain = threading.Thread(target=_drain_stderr, daemon=True)
    drain.start()

    frames = []
    try:
        for i in range(last + 1):
            data = _read_exact(proc.stdout, frame_size)
            if len(data) != frame_size:
                proc.wait(timeout=5)
                excerpt = stderr_buf.decode("utf-8", errors="replace").strip()
                raise SourceError(
                    f"decoder stream ended at frame {i} of {last + 1} requested "
                    f"(exit={proc.returncode}); stderr: {excerpt[:500]!r}"
                )
            if i in wanted:
                frames.append(Frame(i, i / meta.fps, meta.width, meta.height, data))
    finally:
        proc.stdout.close()
        if proc.poll() is None:
            proc.terminate()
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()
        drain.join(timeout=1)
    return frames
