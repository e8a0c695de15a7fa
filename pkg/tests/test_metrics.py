import math

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter, shift

from lip2tongue.errors import ConfigError, DimensionError, UsageError
from lip2tongue.metrics import (
    Contour, cw_ssim, evaluate_pairs, extract_contour, msd, read_contour, ssim, write_contour,
)
from lip2tongue.synth import SynthSpec, apex_height, ridge_rows, render_ultrasound


def ssim_reference(a, b, L=1.0):
    # windowed loop over every fully-contained 11x11 window
    g = np.exp(-((np.arange(11) - 5) ** 2) / (2 * 1.5**2))
    w = np.outer(g, g)
    w /= w.sum()
    C1, C2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    vals = []
    for i in range(a.shape[0] - 10):
        for j in range(a.shape[1] - 10):
            pa, pb = a[i : i + 11, j : j + 11], b[i : i + 11, j : j + 11]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va = (w * (pa - ma) ** 2).sum()
            vb = (w * (pb - mb) ** 2).sum()
            cov = (w * (pa - ma) * (pb - mb)).sum()
            vals.append(((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma**2 + mb**2 + C1) * (va + vb + C2)))
    return float(np.mean(vals))


def texture(seed=0, size=64):
    return gaussian_filter(np.random.default_rng(seed).random((size, size)), 1.5)


def test_ssim_identity():
    x = np.random.default_rng(0).random((32, 40))
    assert abs(ssim(x, x) - 1.0) <= 1e-12


@pytest.mark.parametrize("c1,c2", [(0.2, 0.7), (0.0, 1.0), (0.5, 0.51)])
def test_ssim_constant_closed_form(c1, c2):
    C1 = 0.01**2
    expect = (2 * c1 * c2 + C1) / (c1 * c1 + c2 * c2 + C1)
    assert abs(ssim(np.full((20, 20), c1), np.full((20, 20), c2)) - expect) < 1e-9


def test_ssim_matches_reference():
    rng = np.random.default_rng(1)
    a = rng.random((30, 26))
    b = np.clip(a + 0.1 * rng.normal(size=a.shape), 0, 1)
    assert abs(ssim(a, b) - ssim_reference(a, b)) < 1e-6


def test_ssim_matches_skimage():
    metrics = pytest.importorskip("skimage.metrics")
    rng = np.random.default_rng(2)
    a = rng.random((40, 40))
    b = np.clip(a + 0.2 * rng.normal(size=a.shape), 0, 1)
    ref = metrics.structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                        data_range=1.0)
    assert abs(ssim(a, b) - ref) < 1e-9


def test_ssim_shape_mismatch():
    with pytest.raises(DimensionError):
        ssim(np.zeros((20, 20)), np.zeros((20, 21)))


def test_cw_ssim_identity_and_zero():
    x = texture()
    assert abs(cw_ssim(x, x) - 1.0) <= 1e-9
    assert cw_ssim(np.zeros((40, 40)), np.zeros((40, 40))) == 1.0


def test_cw_ssim_beats_ssim_under_translation():
    a = texture(3)
    b = shift(a, (0, 1), mode="wrap")
    assert cw_ssim(a, b) > ssim(a, b)


def test_cw_ssim_symmetric_and_bounded():
    rng = np.random.default_rng(4)
    a, b = rng.random((40, 40)), rng.random((40, 40))
    s = cw_ssim(a, b)
    assert 0 <= s <= 1
    assert abs(s - cw_ssim(b, a)) < 1e-12


def test_cw_ssim_too_small():
    with pytest.raises(DimensionError):
        cw_ssim(np.zeros((20, 20)), np.zeros((20, 20)))


def test_contour_horizontal_line():
    img = np.zeros((30, 25))
    img[12] = 1.0
    c = extract_contour(img)
    assert len(c) == 25
    assert np.all(c.y == 12)


def test_contour_tracks_generated_arc():
    spec = SynthSpec(speckle_sd=0.0)
    rng = np.random.default_rng(0)
    for s in np.linspace(0, 1, 7):
        img = render_ultrasound(s, spec, rng)
        c = extract_contour(img)
        assert np.max(np.abs(c.y - ridge_rows(s, spec))) <= 1.5
        apex = spec.us_h - 1 - c.y.min()
        assert abs(apex - apex_height(s, spec)) <= 1.5


def test_contour_band():
    img = np.zeros((30, 10))
    img[5] = 1.0
    img[20] = 0.5
    assert np.all(extract_contour(img, band=(10, 30)).y == 20)
    with pytest.raises(ConfigError):
        extract_contour(img, band=(10, 10))


def msd_oracle(p, q):
    def one(p, q):
        nearest = []
        for a in p:
            best = math.inf
            for b in q:
                best = min(best, math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2))
            nearest.append(best)
        return math.fsum(nearest)  # correctly rounded, so the order of summation cannot matter

    return (one(p, q) + one(q, p)) / (len(p) + len(q))


def test_msd_basic_cases():
    line = Contour(np.column_stack([np.arange(10.0), np.full(10, 3.0)]))
    assert msd(line, line) == 0.0
    other = Contour(np.column_stack([np.arange(10.0), np.full(10, 5.0)]))
    assert msd(line, other) == 2.0
    with pytest.raises(UsageError):
        msd(np.zeros((0, 2)), line)


def test_msd_matches_bruteforce():
    rng = np.random.default_rng(5)
    for _ in range(100):
        p = rng.uniform(0, 64, (rng.integers(1, 30), 2))
        q = rng.uniform(0, 64, (rng.integers(1, 30), 2))
        assert msd(p, q) == msd_oracle(p, q)


def test_msd_symmetric():
    rng = np.random.default_rng(6)
    p, q = rng.random((17, 2)), rng.random((9, 2))
    assert msd(p, q) == msd(q, p)


def test_contour_drops_repeats_and_roundtrips(tmp_path):
    c = Contour(np.array([[0, 1], [0, 1], [1, 2.5]]))
    assert len(c) == 2
    write_contour(tmp_path / "c.txt", c)
    assert np.allclose(read_contour(tmp_path / "c.txt").points, c.points)


def test_evaluate_pairs_identity():
    imgs = [render_ultrasound(s, SynthSpec(), np.random.default_rng(1)) for s in (0.2, 0.8)]
    rep = evaluate_pairs(imgs, imgs)
    assert rep.n_frames == 2
    assert rep.ssim[0] == pytest.approx(1.0) and rep.msd == (0.0, 0.0) and rep.mse == 0.0
