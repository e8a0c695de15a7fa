"""Lip-video preprocessing: ROI crop, bilinear resize, clip assembly, frame I/O.

Frames are 2-D float arrays ``[height, width]`` with intensities in [0, 1].
8-bit sources are normalized as ``v / 255``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import BoundsError, ConfigError, DimensionError

FRAME_RE = re.compile(r"^frame_(\d{6})\.(png|pgm)$")


@dataclass(frozen=True)
class RoiSpec:
    x: int
    y: int
    w: int
    h: int


@dataclass
class Clip:
    """``frames`` is ``[N, H, W]``; ``center`` indexes the source sequence."""

    frames: np.ndarray
    center: int

    @property
    def n(self) -> int:
        return self.frames.shape[0]


def crop_roi(frame: np.ndarray, roi: RoiSpec) -> np.ndarray:
    H, W = frame.shape
    if roi.w < 1 or roi.h < 1:
        raise BoundsError(f"roi must have positive size, got {roi.w}x{roi.h}")
    if roi.x < 0:
        raise BoundsError(f"roi left edge x={roi.x} < 0")
    if roi.y < 0:
        raise BoundsError(f"roi top edge y={roi.y} < 0")
    if roi.x + roi.w > W:
        raise BoundsError(f"roi right edge {roi.x + roi.w} > frame width {W}")
    if roi.y + roi.h > H:
        raise BoundsError(f"roi bottom edge {roi.y + roi.h} > frame height {H}")
    return frame[roi.y : roi.y + roi.h, roi.x : roi.x + roi.w].copy()


def _axis_weights(n_in: int, n_out: int):
    # corner-aligned: output sample k sits at input coordinate k*(n_in-1)/(n_out-1)
    if n_out == 1:
        pos = np.zeros(1)
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.clip(np.floor(pos).astype(int), 0, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize_bilinear(frame: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resize with corner-aligned sampling (output corners hit input corners)."""
    if out_w < 1 or out_h < 1:
        raise ConfigError(f"resize target must be at least 1x1, got {out_w}x{out_h}")
    H, W = frame.shape
    if (H, W) == (out_h, out_w):
        return frame.copy()
    f = frame.astype(np.float64)
    y0, y1, fy = _axis_weights(H, out_h)
    x0, x1, fx = _axis_weights(W, out_w)
    top = f[y0][:, x0] * (1 - fx) + f[y0][:, x1] * fx
    bot = f[y1][:, x0] * (1 - fx) + f[y1][:, x1] * fx
    out = top * (1 - fy)[:, None] + bot * fy[:, None]
    return np.clip(out, 0.0, 1.0).astype(frame.dtype if frame.dtype.kind == "f" else np.float32)


def preprocess_frame(frame: np.ndarray, roi: RoiSpec | None, out_w: int, out_h: int) -> np.ndarray:
    if roi is not None:
        frame = crop_roi(frame, roi)
    return resize_bilinear(frame, out_w, out_h)


def assemble_clip(frames, center_index: int, n: int = 7) -> Clip:
    """Take ``n`` consecutive frames centered on ``center_index``."""
    if n < 1:
        raise ConfigError(f"clip length must be >= 1, got {n}")
    half = n // 2
    start = center_index - half
    stop = start + n
    if start < 0 or stop > len(frames):
        raise BoundsError(
            f"clip of {n} frames centered at {center_index} needs indices {start}..{stop - 1}, "
            f"sequence has {len(frames)}"
        )
    stack = np.stack([np.asarray(frames[i]) for i in range(start, stop)])
    if stack.ndim != 3:
        raise DimensionError(f"frames must be 2-d, got clip shape {stack.shape}")
    return Clip(stack, center_index)


def clip_to_tensor(clip: Clip) -> np.ndarray:
    """``[N, H, W]`` float32 array, channel n = frame n."""
    return np.ascontiguousarray(clip.frames, dtype=np.float32)


def tensor_to_frames(arr: np.ndarray) -> list:
    return [arr[i].copy() for i in range(arr.shape[0])]


# -- file I/O ---------------------------------------------------------------


def read_frame(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("L", "I;16", "I"):
            im = im.convert("L")
        a = np.asarray(im)
    if a.dtype == np.uint8:
        return a.astype(np.float32) / 255.0
    return a.astype(np.float32) / float(np.iinfo(a.dtype).max)


def write_frame(path, frame: np.ndarray) -> None:
    """Write a [0, 1] frame as 8-bit grayscale (``round(v * 255)``)."""
    a = np.rint(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(a).save(path, optimize=False)


def list_frames(directory) -> list[Path]:
    d = Path(directory)
    found = sorted(p for p in d.iterdir() if FRAME_RE.match(p.name))
    if not found:
        raise FileNotFoundError(f"no frame_%06d.png/.pgm files in {d}")
    return found


def read_sequence(directory) -> np.ndarray:
    return np.stack([read_frame(p) for p in list_frames(directory)])


@dataclass(frozen=True)
class Recording:
    lip_dir: Path
    us_dir: Path
    roi: RoiSpec


def read_manifest(path) -> list[Recording]:
    """Parse ``lip_dir us_dir x y w h`` lines; ``#`` starts a comment.

    Relative directories resolve against the manifest's own directory.
    """
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.txt"
    base = path.parent
    recs = []
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ConfigError(f"{path}:{lineno}: expected 'lip_dir us_dir x y w h', got {raw!r}")
        try:
            x, y, w, h = (int(v) for v in parts[2:])
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: roi values must be integers") from None
        recs.append(Recording(base / parts[0], base / parts[1], RoiSpec(x, y, w, h)))
    if not recs:
        raise ConfigError(f"{path}: manifest lists no recordings")
    return recs


def write_manifest(path, recordings) -> None:
    path = Path(path)
    lines = ["# lip_dir us_dir roi_x roi_y roi_w roi_h"]
    for r in recordings:
        lip = Path(r.lip_dir)
        us = Path(r.us_dir)
        try:
            lip, us = lip.relative_to(path.parent), us.relative_to(path.parent)
        except ValueError:
            pass
        lines.append(f"{lip.as_posix()} {us.as_posix()} {r.roi.x} {r.roi.y} {r.roi.w} {r.roi.h}")
    path.write_text("\n".join(lines) + "\n")
