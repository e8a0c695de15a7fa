"""Synthetic paired lip / ultrasound sequences driven by one shared latent.

Each sequence has a scalar articulatory latent ``s(t)`` in [0, 1]. The lip
frame renders a dark elliptical mouth opening whose height grows with
``s``; the ultrasound frame renders a bright parabolic ridge whose apex
rises with ``s``. Both modalities get independent seeded noise, so the
lip-to-ultrasound mapping exists by construction.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError
from .preproc import Recording, RoiSpec, write_frame, write_manifest


@dataclass
class SynthSpec:
    n_sequences: int = 2000
    frames_per_sequence: int = 16
    seed: int = 0
    lip_h: int = 96
    lip_w: int = 96
    us_h: int = 64
    us_w: int = 64
    n_sinusoids: int = 3
    freq_min: float = 0.03  # cycles per frame
    freq_max: float = 0.15
    latent_amplitude: float = 1.0
    latent_noise_sd: float = 0.02
    texture_sd: float = 0.03
    speckle_sd: float = 0.1
    aperture_min: float = 4.0  # mouth opening height in px
    aperture_max: float = 36.0
    mouth_half_width: float = 30.0
    apex_min: float = 20.0  # ridge apex height above the bottom row, px
    apex_max: float = 46.0
    arc_curvature: float = 0.012
    ridge_width: float = 1.5

    def validate(self) -> None:
        if self.n_sequences < 1 or self.frames_per_sequence < 1:
            raise ConfigError("n_sequences and frames_per_sequence must be >= 1")
        if min(self.latent_noise_sd, self.texture_sd, self.speckle_sd) < 0:
            raise ConfigError("noise standard deviations must be >= 0")
        if not 0 < self.freq_min <= self.freq_max:
            raise ConfigError("need 0 < freq_min <= freq_max")


def latent_path(spec: SynthSpec, seq_index: int) -> np.ndarray:
    """Latent values for every frame of one sequence, clipped to [0, 1]."""
    rng = np.random.default_rng([spec.seed, seq_index, 0])
    t = np.arange(spec.frames_per_sequence, dtype=np.float64)
    k = spec.n_sinusoids
    amps = rng.uniform(0.5, 1.0, k)
    freqs = rng.uniform(spec.freq_min, spec.freq_max, k)
    phases = rng.uniform(0, 2 * np.pi, k)
    noise = rng.standard_normal(spec.frames_per_sequence)
    if k == 0 or spec.latent_amplitude == 0:
        s = np.full_like(t, 0.5)
    else:
        wave = (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t + phases[:, None])).sum(0)
        s = 0.5 + 0.5 * spec.latent_amplitude * wave / amps.sum()
    s = s + spec.latent_noise_sd * noise
    return np.clip(s, 0.0, 1.0)


def _ellipse_coverage(x, y, ax, ay):
    # first-order signed distance to the ellipse boundary, turned into a 1-px ramp
    f = (x / ax) ** 2 + (y / ay) ** 2 - 1.0
    grad = 2.0 * np.sqrt((x / ax**2) ** 2 + (y / ay**2) ** 2)
    d = f / np.maximum(grad, 1e-9)
    return np.clip(0.5 - d, 0.0, 1.0)


def aperture(s: float, spec: SynthSpec) -> float:
    return spec.aperture_min + s * (spec.aperture_max - spec.aperture_min)


def apex_height(s: float, spec: SynthSpec) -> float:
    return spec.apex_min + s * (spec.apex_max - spec.apex_min)


def render_lip(s: float, spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    H, W = spec.lip_h, spec.lip_w
    y, x = np.mgrid[0:H, 0:W].astype(np.float64)
    x -= (W - 1) / 2
    y -= (H - 1) / 2
    half_open = aperture(s, spec) / 2
    img = np.full((H, W), 0.6)
    if spec.texture_sd > 0:
        tex = gaussian_filter(rng.standard_normal((H, W)), 2.0)
        img += spec.texture_sd * tex / tex.std()
    lips = _ellipse_coverage(x, y, spec.mouth_half_width + 6, half_open + 6)
    img = img * (1 - lips) + 0.35 * lips
    mouth = _ellipse_coverage(x, y, spec.mouth_half_width, half_open)
    img = img * (1 - mouth) + 0.08 * mouth
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def ridge_rows(s: float, spec: SynthSpec) -> np.ndarray:
    """Row of the ridge centre for every column."""
    x = np.arange(spec.us_w, dtype=np.float64) - (spec.us_w - 1) / 2
    apex_row = spec.us_h - 1 - apex_height(s, spec)
    return apex_row + spec.arc_curvature * x * x


def render_ultrasound(s: float, spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    H = spec.us_h
    y = np.arange(H, dtype=np.float64)[:, None]
    yc = ridge_rows(s, spec)[None, :]
    img = 0.08 + 0.87 * np.exp(-((y - yc) ** 2) / (2 * spec.ridge_width**2))
    if spec.speckle_sd > 0:
        img = img * (1 + spec.speckle_sd * rng.standard_normal(img.shape))
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _frame_rng(spec, seq_index, t, stream):
    return np.random.default_rng([spec.seed, seq_index, t + 1, stream])


def render_sequence(spec: SynthSpec, seq_index: int):
    """Return ``(latent [F], lips [F, lip_h, lip_w], us [F, us_h, us_w])``."""
    s = latent_path(spec, seq_index)
    lips = np.stack([render_lip(v, spec, _frame_rng(spec, seq_index, t, 1)) for t, v in enumerate(s)])
    us = np.stack([render_ultrasound(v, spec, _frame_rng(spec, seq_index, t, 2)) for t, v in enumerate(s)])
    return s, lips, us


def gen_dataset(spec: SynthSpec, out_dir) -> Path:
    """Write PNG sequences plus ``manifest.txt``; returns the manifest path."""
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    recs = []
    for i in range(spec.n_sequences):
        seq = out / f"seq_{i:05d}"
        lip_dir, us_dir = seq / "lip", seq / "us"
        try:
            lip_dir.mkdir(parents=True, exist_ok=True)
            us_dir.mkdir(parents=True, exist_ok=True)
            s, lips, us = render_sequence(spec, i)
            for t in range(spec.frames_per_sequence):
                write_frame(lip_dir / f"frame_{t:06d}.png", lips[t])
                write_frame(us_dir / f"frame_{t:06d}.png", us[t])
            np.savetxt(seq / "latent.txt", s, fmt="%.9f")
        except OSError as e:
            raise OSError(f"failed writing sequence {seq}: {e}") from e
        recs.append(Recording(lip_dir, us_dir, RoiSpec(0, 0, spec.lip_w, spec.lip_h)))
    manifest = out / "manifest.txt"
    write_manifest(manifest, recs)
    lines = [f"{k} = {v!r}" for k, v in asdict(spec).items()]
    (out / "synth_spec.txt").write_text("\n".join(lines) + "\n")
    return manifest
