import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sarvessel.cfar import (
    CfarConfig,
    ca_threshold_factor,
    cfar_detect,
    cfar_mask,
    cluster_detections,
    ring_statistics,
)
from sarvessel.errors import ConfigError, NonFiniteError, ValidationError
from sarvessel.scene_io import BoundingBox


def brute_force_mask(band, g, t, pfa=None, k=None):
    """Direct per-pixel evaluation of the ring rule with border truncation."""
    rows, cols = band.shape
    out = np.zeros(band.shape, dtype=bool)
    for r in range(rows):
        for c in range(cols):
            ring = [
                band[i, j]
                for i in range(max(0, r - t), min(rows, r + t + 1))
                for j in range(max(0, c - t), min(cols, c + t + 1))
                if max(abs(i - r), abs(j - c)) > g
            ]
            n = len(ring)
            mean = sum(ring) / n
            if k is None:
                alpha = n * (pfa ** (-1.0 / n) - 1.0)
                out[r, c] = band[r, c] > alpha * mean
            else:
                std = math.sqrt(max(sum(v * v for v in ring) / n - mean * mean, 0.0))
                out[r, c] = band[r, c] > mean + k * std
    return out


def flood_fill_boxes(mask):
    """8-connected components by explicit stack-based flood fill."""
    mask = np.asarray(mask, dtype=bool)
    seen = np.zeros_like(mask)
    boxes = []
    rows, cols = mask.shape
    for r in range(rows):
        for c in range(cols):
            if mask[r, c] and not seen[r, c]:
                stack = [(r, c)]
                seen[r, c] = True
                cells = []
                while stack:
                    i, j = stack.pop()
                    cells.append((i, j))
                    for di in (-1, 0, 1):
                        for dj in (-1, 0, 1):
                            a, b = i + di, j + dj
                            if 0 <= a < rows and 0 <= b < cols and mask[a, b] and not seen[a, b]:
                                seen[a, b] = True
                                stack.append((a, b))
                rs = [p[0] for p in cells]
                cs = [p[1] for p in cells]
                boxes.append(BoundingBox(min(rs), min(cs), max(rs) - min(rs) + 1, max(cs) - min(cs) + 1))
    return sorted(boxes, key=lambda b: (b.row, b.col))


# --- threshold factor ------------------------------------------------------


def test_alpha_closed_forms():
    assert ca_threshold_factor(1, 0.25) == pytest.approx(3.0, abs=1e-12)
    assert ca_threshold_factor(16, 0.01) == pytest.approx(16 * (100 ** (1 / 16) - 1), rel=1e-12)
    assert ca_threshold_factor(16, 0.01) == pytest.approx(5.3363, abs=1e-4)
    assert ca_threshold_factor(7, 1.0) == 0.0


def test_alpha_limits_and_monotonicity():
    pfas = [0.3, 0.1, 1e-2, 1e-3, 1e-5]
    for n in (1, 4, 16, 200):
        alphas = [ca_threshold_factor(n, p) for p in pfas]
        assert all(a < b for a, b in zip(alphas, alphas[1:]))
    assert ca_threshold_factor(10**7, 1e-3) == pytest.approx(-math.log(1e-3), rel=1e-5)
    ns = np.array([1, 8, 48, 600])
    np.testing.assert_allclose(
        ca_threshold_factor(ns, 1e-3), [ca_threshold_factor(int(n), 1e-3) for n in ns], rtol=1e-14
    )


def test_alpha_rejects_bad_input():
    with pytest.raises(ValidationError):
        ca_threshold_factor(0, 0.1)
    with pytest.raises(ValidationError):
        ca_threshold_factor(4, 0.0)


# --- ring statistics and masks --------------------------------------------------


def test_ring_counts_with_truncation():
    n, mean, _ = ring_statistics(np.ones((9, 9)), 1, 3)
    assert n[4, 4] == 49 - 9
    # corner: 4x4 training window minus 2x2 guard
    assert n[0, 0] == 16 - 4
    np.testing.assert_allclose(mean, 1.0)


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    rows=st.integers(7, 14),
    cols=st.integers(7, 14),
    g=st.integers(0, 2),
    pfa=st.sampled_from([0.2, 0.05, 1e-2, 1e-3]),
)
def test_ca_mask_matches_brute_force(seed, rows, cols, g, pfa):
    t = g + 1 + seed % 2
    if 2 * t + 1 > min(rows, cols):
        t = g + 1
    band = np.random.Generator(np.random.PCG64(seed)).exponential(1.0, size=(rows, cols))
    got = cfar_mask(band, CfarConfig(guard_radius=g, train_radius=t, pfa=pfa))
    np.testing.assert_array_equal(got, brute_force_mask(band, g, t, pfa=pfa))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.floats(0.5, 4.0))
def test_two_param_matches_brute_force(seed, k):
    band = np.random.Generator(np.random.PCG64(seed)).gamma(2.0, 0.5, size=(10, 11))
    got = cfar_mask(band, CfarConfig(guard_radius=1, train_radius=3, variant="two_param", two_param_k=k))
    np.testing.assert_array_equal(got, brute_force_mask(band, 1, 3, k=k))


def test_constant_band_no_detections():
    band = np.full((40, 40), 2.5)
    assert cfar_detect(band, CfarConfig(pfa=0.01, guard_radius=2, train_radius=5)).n_detections == 0
    for k in (0.1, 1.0, 3.0):
        cfg = CfarConfig(guard_radius=1, train_radius=3, variant="two_param", two_param_k=k)
        assert not cfar_mask(band, cfg).any()


def test_single_spike_detected_alone():
    band = np.ones((21, 21))
    band[10, 10] = 1000.0
    cfg = CfarConfig(guard_radius=1, train_radius=3, pfa=1e-3)
    mask = cfar_mask(band, cfg)
    expected = np.zeros_like(mask)
    expected[10, 10] = True
    np.testing.assert_array_equal(mask, expected)
    np.testing.assert_array_equal(mask, brute_force_mask(band, 1, 3, pfa=1e-3))
    result = cfar_detect(band, cfg)
    assert result.boxes == [BoundingBox(10, 10, 1, 1)]
    assert result.n_detections == 1


@pytest.mark.parametrize("pfa", [1e-3, 1e-2])
def test_empirical_false_alarm_rate(pfa):
    cfg = CfarConfig(guard_radius=1, train_radius=4, pfa=pfa)
    hits = cells = 0
    for seed in range(10):
        band = np.random.Generator(np.random.PCG64(seed)).exponential(1.0, size=(512, 512))
        hits += int(cfar_mask(band, cfg).sum())
        cells += band.size
    rate = hits / cells
    assert cells >= 2_500_000
    assert pfa / 2 <= rate <= pfa * 2


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), e=st.integers(-20, 20))
def test_scale_invariance(seed, e):
    band = np.random.Generator(np.random.PCG64(seed)).exponential(1.0, size=(30, 30))
    cfg = CfarConfig(guard_radius=1, train_radius=4, pfa=0.05)
    np.testing.assert_array_equal(cfar_mask(band, cfg), cfar_mask(band * 2.0**e, cfg))


def test_scale_invariance_non_power_of_two():
    band = np.random.Generator(np.random.PCG64(4)).exponential(1.0, size=(64, 64))
    cfg = CfarConfig(guard_radius=1, train_radius=4, pfa=0.05)
    np.testing.assert_array_equal(cfar_mask(band, cfg), cfar_mask(band * 3.7, cfg))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), p1=st.floats(1e-5, 0.5), p2=st.floats(1e-5, 0.5))
def test_lower_pfa_never_adds_detections(seed, p1, p2):
    lo, hi = sorted((p1, p2))
    band = np.random.Generator(np.random.PCG64(seed)).exponential(1.0, size=(24, 24))
    strict = cfar_mask(band, CfarConfig(guard_radius=1, train_radius=3, pfa=lo))
    loose = cfar_mask(band, CfarConfig(guard_radius=1, train_radius=3, pfa=hi))
    assert strict.sum() <= loose.sum()
    assert not np.any(strict & ~loose)


def test_result_invariants():
    band = np.random.Generator(np.random.PCG64(11)).exponential(1.0, size=(64, 64))
    result = cfar_detect(band, CfarConfig(guard_radius=1, train_radius=3, pfa=0.02))
    assert result.n_detections == int(result.mask.sum())
    for box in result.boxes:
        assert result.mask[box.row:box.bottom, box.col:box.right].any()


# --- config and input errors --------------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [
        dict(guard_radius=-1),
        dict(guard_radius=3, train_radius=3),
        dict(pfa=0.0),
        dict(pfa=1.0),
        dict(variant="os"),
        dict(two_param_k=0.0),
    ],
)
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        cfar_mask(np.ones((64, 64)), CfarConfig(**kw))


def test_band_too_small():
    with pytest.raises(ConfigError):
        cfar_mask(np.ones((10, 30)), CfarConfig(guard_radius=2, train_radius=5))


def test_bad_band_values():
    band = np.ones((20, 20))
    band[3, 3] = np.nan
    with pytest.raises(NonFiniteError):
        cfar_mask(band, CfarConfig(guard_radius=1, train_radius=3))
    with pytest.raises(ValidationError):
        cfar_mask(-np.ones((20, 20)), CfarConfig(guard_radius=1, train_radius=3))


# --- clustering -----------------------------------------------------------------


def test_cluster_examples():
    assert cluster_detections(np.zeros((5, 5), dtype=bool)) == []
    m = np.zeros((3, 3), dtype=bool)
    m[0, 0] = m[1, 1] = True
    assert cluster_detections(m) == [BoundingBox(0, 0, 2, 2)]
    m = np.zeros((8, 8), dtype=bool)
    m[0, 0] = m[0, 1] = m[5, 5] = True
    assert cluster_detections(m) == [BoundingBox(0, 0, 1, 2), BoundingBox(5, 5, 1, 1)]


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    shape=st.tuples(st.integers(1, 16), st.integers(1, 16)),
    density=st.floats(0.0, 0.6),
)
def test_cluster_matches_flood_fill(seed, shape, density):
    mask = np.random.Generator(np.random.PCG64(seed)).random(shape) < density
    assert cluster_detections(mask) == flood_fill_boxes(mask)
