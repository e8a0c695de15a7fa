"""Preprocessed, memory-mapped view of a manifest-described dataset.

All recordings are concatenated along one frame axis. Lip frames are cropped
to their ROI, resized to the model input size and stored as float16;
ultrasound targets are resized to the output size and stored as float32.
Optical flow is computed on the preprocessed lip frames and cached
separately (row ``i`` holds the flow from frame ``i`` to ``i + 1`` of the same
recording; the last row of each recording is zero).

Caches live under ``<dataset>/.cache`` and are keyed by every parameter that
affects their contents.
"""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .flow import sequence_flows
from .preproc import list_frames, preprocess_frame, read_frame, read_manifest, resize_bilinear

log = logging.getLogger(__name__)


def _key(*parts) -> str:
    return hashlib.sha1(repr(parts).encode()).hexdigest()[:12]


def _finish(tmp: Path, final: Path) -> None:
    os.replace(tmp, final)


@dataclass
class PairedDataset:
    lips: np.ndarray      # [F_total, H, W]
    targets: np.ndarray   # [F_total, out_h, out_w]
    offsets: np.ndarray   # first frame of each recording
    lengths: np.ndarray
    flows: np.ndarray | None = None  # [F_total, 2, H, W]

    @property
    def n_recordings(self) -> int:
        return len(self.offsets)


def load_dataset(manifest_path, H: int, W: int, out_h: int, out_w: int, flow_params: dict | None = None,
                 cache: bool = True) -> PairedDataset:
    """Load (building caches on first use) the frames listed in a manifest.

    ``flow_params`` is ``{"alpha", "iterations", "intensity_scale"}``; pass
    None to skip optical flow.
    """
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.txt"
    if not manifest_path.exists():
        raise ConfigError(f"dataset manifest not found: {manifest_path}")
    recs = read_manifest(manifest_path)
    lip_files = [list_frames(r.lip_dir) for r in recs]
    us_files = [list_frames(r.us_dir) for r in recs]
    for r, a, b in zip(recs, lip_files, us_files):
        if len(a) != len(b):
            raise ConfigError(f"{r.lip_dir}: {len(a)} lip frames but {len(b)} ultrasound frames")
    lengths = np.array([len(a) for a in lip_files], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)
    total = int(lengths.sum())

    manifest_text = manifest_path.read_text()
    cache_dir = manifest_path.parent / ".cache"
    base_key = _key(manifest_text, H, W, out_h, out_w)
    lips_path = cache_dir / f"lips_{base_key}.npy"
    tgt_path = cache_dir / f"targets_{base_key}.npy"

    if cache and lips_path.exists() and tgt_path.exists():
        lips = np.load(lips_path, mmap_mode="r")
        targets = np.load(tgt_path, mmap_mode="r")
    else:
        log.info("preprocessing %d frames from %s", total, manifest_path)
        if cache:
            cache_dir.mkdir(exist_ok=True)
            lips = np.lib.format.open_memmap(str(lips_path) + ".tmp.npy", "w+", np.float16, (total, H, W))
            targets = np.lib.format.open_memmap(str(tgt_path) + ".tmp.npy", "w+", np.float32, (total, out_h, out_w))
        else:
            lips = np.empty((total, H, W), np.float16)
            targets = np.empty((total, out_h, out_w), np.float32)
        for r, off, lf, uf in zip(recs, offsets, lip_files, us_files):
            for k, (lp, up) in enumerate(zip(lf, uf)):
                lips[off + k] = preprocess_frame(read_frame(lp), r.roi, W, H)
                targets[off + k] = resize_bilinear(read_frame(up), out_w, out_h)
        if cache:
            lips.flush()
            targets.flush()
            del lips, targets
            _finish(Path(str(lips_path) + ".tmp.npy"), lips_path)
            _finish(Path(str(tgt_path) + ".tmp.npy"), tgt_path)
            lips = np.load(lips_path, mmap_mode="r")
            targets = np.load(tgt_path, mmap_mode="r")

    ds = PairedDataset(lips, targets, offsets, lengths)
    if flow_params is not None:
        ds.flows = _load_flows(ds, cache_dir, base_key, flow_params, cache)
    return ds


def _load_flows(ds: PairedDataset, cache_dir: Path, base_key: str, fp: dict, cache: bool) -> np.ndarray:
    key = _key(base_key, fp["alpha"], fp["iterations"], fp["intensity_scale"])
    path = cache_dir / f"flows_{key}.npy"
    if cache and path.exists():
        return np.load(path, mmap_mode="r")
    total = ds.lips.shape[0]
    shape = (total, 2) + ds.lips.shape[1:]
    log.info("computing optical flow for %d recordings", ds.n_recordings)
    if cache:
        cache_dir.mkdir(exist_ok=True)
        tmp = str(path) + ".tmp.npy"
        flows = np.lib.format.open_memmap(tmp, "w+", np.float16, shape)
    else:
        flows = np.empty(shape, np.float16)
    for off, n in zip(ds.offsets, ds.lengths):
        flows[off + n - 1] = 0
        if n >= 2:
            frames = np.asarray(ds.lips[off : off + n], dtype=np.float32)
            flows[off : off + n - 1] = sequence_flows(frames, fp["alpha"], fp["iterations"], fp["intensity_scale"])
    if not cache:
        return flows
    flows.flush()
    del flows
    _finish(Path(tmp), path)
    return np.load(path, mmap_mode="r")


def window_starts(length: int, N: int, T: int, stride: int) -> list:
    """Clip-center indices that start a window of ``T`` consecutive clips."""
    first = N // 2
    last = length - N + N // 2  # last center whose clip fits
    out = []
    s = first
    while s + T - 1 <= last:
        out.append(s)
        s += stride
    return out


def windows_for(ds: PairedDataset, recordings, N: int, T: int, stride: int) -> list:
    return [(int(r), s) for r in recordings for s in window_starts(int(ds.lengths[r]), N, T, stride)]


def gather(ds: PairedDataset, windows, N: int, T: int, with_flow: bool = True):
    """Stack windows into ``gray [B,T,N,H,W]``, ``flow [B,T,N-1,2,H,W]`` (or None), ``target [B,T,oh,ow]``."""
    half = N // 2
    base = np.array([ds.offsets[r] + s - half for r, s in windows], dtype=np.int64)
    t = np.arange(T)
    clip_start = base[:, None] + t[None, :]                   # [B, T]
    frame_idx = clip_start[..., None] + np.arange(N)         # [B, T, N]
    gray = np.asarray(ds.lips[frame_idx.reshape(-1)], dtype=np.float32).reshape(frame_idx.shape + ds.lips.shape[1:])
    flow = None
    if with_flow:
        if ds.flows is None:
            raise ConfigError("dataset was loaded without optical flow")
        fidx = clip_start[..., None] + np.arange(N - 1)
        flow = np.asarray(ds.flows[fidx.reshape(-1)], dtype=np.float32).reshape(fidx.shape + ds.flows.shape[1:])
    target = np.asarray(ds.targets[(clip_start + half).reshape(-1)], dtype=np.float32)
    target = target.reshape(clip_start.shape + ds.targets.shape[1:])
    return gray, flow, target
