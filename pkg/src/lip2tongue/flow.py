"""Dense optical flow (Horn-Schunck) and the flow-branch input stack.

Brightness derivatives use the 2x2x2 cube stencils of the original method
with edge replication at the far borders. The smoothness term uses the
weighted neighbour average (1/6 edge neighbours, 1/12 diagonals) and the
Jacobi update

    u <- u_avg - Ix * (Ix*u_avg + Iy*v_avg + It) / (alpha^2 + Ix^2 + Iy^2)

starting from zero flow, for a fixed number of iterations.

Intensities are multiplied by ``intensity_scale`` (255 by default) before
differentiation, so ``alpha`` is expressed in 8-bit grey levels.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError
from .preproc import Clip

_EDGE = np.float32(1.0 / 6.0)
_DIAG = np.float32(1.0 / 12.0)


@dataclass
class FlowField:
    u: np.ndarray
    v: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.stack([self.u, self.v])


def _derivatives(f1: np.ndarray, f2: np.ndarray):
    pad = ((0, 0), (0, 1), (0, 1))
    a = np.pad(f1, pad, mode="edge")
    b = np.pad(f2, pad, mode="edge")
    q = np.float32(0.25)
    ix = q * (
        (a[:, :-1, 1:] - a[:, :-1, :-1]) + (a[:, 1:, 1:] - a[:, 1:, :-1])
        + (b[:, :-1, 1:] - b[:, :-1, :-1]) + (b[:, 1:, 1:] - b[:, 1:, :-1])
    )
    iy = q * (
        (a[:, 1:, :-1] - a[:, :-1, :-1]) + (a[:, 1:, 1:] - a[:, :-1, 1:])
        + (b[:, 1:, :-1] - b[:, :-1, :-1]) + (b[:, 1:, 1:] - b[:, :-1, 1:])
    )
    it = q * (
        (b[:, :-1, :-1] - a[:, :-1, :-1]) + (b[:, 1:, :-1] - a[:, 1:, :-1])
        + (b[:, :-1, 1:] - a[:, :-1, 1:]) + (b[:, 1:, 1:] - a[:, 1:, 1:])
    )
    return ix, iy, it


def _neighbour_average(u: np.ndarray, buf: np.ndarray) -> np.ndarray:
    buf[:, 1:-1, 1:-1] = u
    buf[:, 0, 1:-1] = u[:, 0]
    buf[:, -1, 1:-1] = u[:, -1]
    buf[:, :, 0] = buf[:, :, 1]
    buf[:, :, -1] = buf[:, :, -2]
    edge = buf[:, :-2, 1:-1] + buf[:, 2:, 1:-1]
    edge += buf[:, 1:-1, :-2]
    edge += buf[:, 1:-1, 2:]
    diag = buf[:, :-2, :-2] + buf[:, :-2, 2:]
    diag += buf[:, 2:, :-2]
    diag += buf[:, 2:, 2:]
    edge *= _EDGE
    diag *= _DIAG
    edge += diag
    return edge


def horn_schunck_batch(f1, f2, alpha: float = 10.0, iterations: int = 100, intensity_scale: float = 255.0):
    """Flow for stacks of frame pairs ``[K, H, W]``; returns ``(u, v)`` each ``[K, H, W]`` float32."""
    f1 = np.asarray(f1, dtype=np.float32)
    f2 = np.asarray(f2, dtype=np.float32)
    if f1.shape != f2.shape:
        raise DimensionError(f"horn_schunck: frame shapes differ: {f1.shape} vs {f2.shape}")
    if f1.ndim != 3:
        raise DimensionError(f"horn_schunck_batch: expected [K, H, W], got {f1.shape}")
    if alpha <= 0:
        raise ConfigError(f"alpha must be > 0, got {alpha}")
    if iterations < 1:
        raise ConfigError(f"iterations must be >= 1, got {iterations}")
    s = np.float32(intensity_scale)
    ix, iy, it = _derivatives(f1 * s, f2 * s)
    denom = np.float32(alpha) ** 2 + ix * ix + iy * iy
    K, H, W = f1.shape
    u = np.zeros((K, H, W), np.float32)
    v = np.zeros((K, H, W), np.float32)
    buf = np.empty((K, H + 2, W + 2), np.float32)
    for _ in range(iterations):
        ub = _neighbour_average(u, buf)
        vb = _neighbour_average(v, buf)
        t = ix * ub
        t += iy * vb
        t += it
        t /= denom
        u = ub - ix * t
        v = vb - iy * t
    return u, v


def horn_schunck(f1: np.ndarray, f2: np.ndarray, alpha: float = 10.0, iterations: int = 100,
                 intensity_scale: float = 255.0) -> FlowField:
    """Dense flow from ``f1`` to ``f2`` (both ``[H, W]``)."""
    f1 = np.asarray(f1)
    f2 = np.asarray(f2)
    if f1.shape != f2.shape or f1.ndim != 2:
        raise DimensionError(f"horn_schunck: need two equal 2-d frames, got {f1.shape} and {f2.shape}")
    u, v = horn_schunck_batch(f1[None], f2[None], alpha, iterations, intensity_scale)
    return FlowField(u[0], v[0])


def sequence_flows(frames: np.ndarray, alpha: float = 10.0, iterations: int = 100,
                   intensity_scale: float = 255.0, chunk: int = 8) -> np.ndarray:
    """Flow between every adjacent pair of ``frames [F, H, W]`` -> ``[F-1, 2, H, W]``."""
    frames = np.asarray(frames, dtype=np.float32)
    F = frames.shape[0]
    if F < 2:
        raise ConfigError(f"need at least 2 frames for flow, got {F}")
    out = np.empty((F - 1, 2) + frames.shape[1:], np.float32)
    # small chunks keep the working set cache-resident
    for k in range(0, F - 1, chunk):
        stop = min(k + chunk, F - 1)
        u, v = horn_schunck_batch(frames[k:stop], frames[k + 1 : stop + 1], alpha, iterations, intensity_scale)
        out[k:stop, 0] = u
        out[k:stop, 1] = v
    return out


def flow_stack(clip: Clip, alpha: float = 10.0, iterations: int = 100, intensity_scale: float = 255.0) -> np.ndarray:
    """``[N-1, 2, H, W]``: slot k is the flow from frame k to frame k+1, channel 0 = u, 1 = v."""
    if clip.n < 2:
        raise ConfigError(f"flow_stack needs a clip of at least 2 frames, got {clip.n}")
    return sequence_flows(clip.frames, alpha, iterations, intensity_scale)


# -- file output --------------------------------------------------------------


def write_flow(path, field: FlowField) -> None:
    """Two-plane float file: ASCII line ``FLOW2 <width> <height>`` then u and v planes (LE float32)."""
    H, W = field.u.shape
    with open(path, "wb") as fh:
        fh.write(f"FLOW2 {W} {H}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(field.u, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(field.v, dtype="<f4").tobytes())


def read_flow(path) -> FlowField:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    tag, w, h = raw[:nl].decode("ascii").split()
    if tag != "FLOW2":
        raise ConfigError(f"{path}: not a FLOW2 file")
    W, H = int(w), int(h)
    planes = np.frombuffer(raw, dtype="<f4", offset=nl + 1, count=2 * H * W).reshape(2, H, W)
    return FlowField(planes[0].astype(np.float32), planes[1].astype(np.float32))


def flow_to_color(field: FlowField, max_magnitude: float | None = None) -> np.ndarray:
    """Colour-wheel rendering: hue encodes direction, brightness encodes magnitude. Returns uint8 RGB."""
    from matplotlib.colors import hsv_to_rgb

    mag = np.hypot(field.u, field.v)
    top = max_magnitude if max_magnitude else float(mag.max())
    hue = (np.arctan2(field.v, field.u) / (2 * np.pi)) % 1.0
    val = np.clip(mag / top, 0, 1) if top > 0 else np.zeros_like(mag)
    rgb = hsv_to_rgb(np.stack([hue, np.ones_like(hue), val], axis=-1))
    return np.rint(rgb * 255).astype(np.uint8)
