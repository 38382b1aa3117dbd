from collections import deque

import numpy as np
import pytest

from gazefocal import kernels
from gazefocal.hva import (
    GazeOutOfRange,
    GazeRecord,
    HvaConfig,
    NoAttentionRegion,
    accumulate,
    gaussian_filter,
    gaussian_kernel,
    heatmap,
    hva_pipeline,
    largest_component_bbox,
    quantize,
)

BACKENDS = sorted(kernels.available_backends())


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    impl = kernels.available_backends()[request.param]
    monkeypatch.setattr(kernels, "correlate_rows", impl.correlate_rows)
    monkeypatch.setattr(kernels, "label_components", impl.label_components)
    return request.param


def _reflect(i, n):
    # half-sample symmetric: -1 -> 0, n -> n-1
    while i < 0 or i >= n:
        i = -i - 1 if i < 0 else 2 * n - i - 1
    return i


def _dense_gaussian(h, sigma):
    k1 = gaussian_kernel(sigma)
    k2 = np.outer(k1, k1)
    r = len(k1) // 2
    n, m = h.shape
    out = np.zeros_like(h, dtype=np.float64)
    for y in range(n):
        for x in range(m):
            acc = 0.0
            for dy in range(-r, r + 1):
                row = _reflect(y + dy, n)
                for dx in range(-r, r + 1):
                    acc += k2[dy + r, dx + r] * h[row, _reflect(x + dx, m)]
            out[y, x] = acc
    return out


def _flood_fill_largest(mask, connectivity):
    n, m = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if connectivity == 8:
        steps += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    best = None
    for y in range(n):
        for x in range(m):
            if not mask[y, x] or seen[y, x]:
                continue
            comp, queue = [], deque([(y, x)])
            seen[y, x] = True
            while queue:
                cy, cx = queue.popleft()
                comp.append((cy, cx))
                for dy, dx in steps:
                    ny, nx = cy + dy, cx + dx
                    if 0 <= ny < n and 0 <= nx < m and mask[ny, nx] and not seen[ny, nx]:
                        seen[ny, nx] = True
                        queue.append((ny, nx))
            if best is None or len(comp) > len(best):
                best = comp
    rows = [p[0] for p in best]
    cols = [p[1] for p in best]
    r0, r1, c0, c1 = min(rows), max(rows) + 1, min(cols), max(cols) + 1
    return ((c0 + c1) / 2 / m, (r0 + r1) / 2 / n, (r1 - r0) / n, (c1 - c0) / m)


def _pts(coords):
    return [GazeRecord("a", x, y) for x, y in coords]


def test_accumulate_examples():
    assert not accumulate([], 8, 8).any()
    h = accumulate(_pts([(10, 20)]), 32, 32)
    assert h[20, 10] == 1 and h.sum() == 1
    assert accumulate(_pts([(1, 2)] * 3 + [(0, 0)]), 4, 4)[2, 1] == 3
    with pytest.raises(GazeOutOfRange, match="sample 1"):
        accumulate(_pts([(0, 0), (4, 0)]), 4, 4)


def test_separable_matches_dense_oracle(backend):
    h = np.random.default_rng(5).random((32, 32))
    np.testing.assert_allclose(gaussian_filter(h, 3.0), _dense_gaussian(h, 3.0), atol=1e-5, rtol=0)


def test_gaussian_large_radius_matches_dense_oracle(backend):
    # radius 8 exceeds the 6-pixel map, so padding folds more than once
    h = np.random.default_rng(6).random((6, 6))
    np.testing.assert_allclose(gaussian_filter(h, 2.0), _dense_gaussian(h, 2.0), atol=1e-12, rtol=0)


def test_gaussian_impulse_properties(backend):
    h = np.zeros((41, 41))
    h[20, 20] = 1.0
    out = gaussian_filter(h, 2.0)
    assert np.unravel_index(out.argmax(), out.shape) == (20, 20)
    np.testing.assert_allclose(out, out[::-1], atol=1e-15)
    np.testing.assert_allclose(out, out.T, atol=1e-15)
    assert abs(out.sum() - 1.0) < 1e-3


def test_gaussian_transpose_symmetry(backend):
    a = np.random.default_rng(2).random((20, 20))
    sym = a + a.T
    out = gaussian_filter(sym, 1.5)
    np.testing.assert_allclose(out, out.T, atol=1e-12)
    with pytest.raises(ValueError):
        gaussian_filter(sym, 0.0)


def test_gaussian_kernel_radius():
    assert len(gaussian_kernel(3.0)) == 25
    assert len(gaussian_kernel(0.3)) == 5
    assert abs(gaussian_kernel(64.0).sum() - 1) < 1e-12


def test_quantize_examples():
    assert (quantize(np.full((3, 3), 0.4)) == 255).all()
    assert (quantize(np.zeros((3, 3))) == 0).all()
    q = quantize(np.array([[0.0, 0.5, 1.0, 0.25]]))
    assert q.tolist() == [[0, 128, 255, 64]]
    assert q.dtype == np.uint8
    r = np.random.default_rng(0).random((10, 10))
    assert quantize(r).max() == 255 and quantize(r).min() == 0
    # the floor is the map minimum, not zero
    assert quantize(np.array([[2.0, 3.0, 4.0]])).tolist() == [[0, 128, 255]]
    with pytest.raises(ValueError):
        quantize(np.array([[-1.0, 0.0]]))


def test_component_selection_matches_flood_fill(backend):
    r = np.random.default_rng(9)
    for trial in range(100):
        n, m = r.integers(4, 24, 2)
        density = r.uniform(0.2, 0.6)
        mask = r.random((n, m)) < density
        if not mask.any():
            mask[0, 0] = True
        q = np.where(mask, 200, 10).astype(np.uint8)
        conn = 8 if trial % 2 == 0 else 4
        got = largest_component_bbox(q, 140, conn)
        assert got == pytest.approx(_flood_fill_largest(mask, conn), abs=1e-12)


def test_two_blobs_pick_larger(backend):
    q = np.zeros((30, 30), np.uint8)
    q[2:7, 2:12] = 200  # 50 px
    q[20:22, 20:25] = 200  # 10 px
    box = largest_component_bbox(q, 140)
    assert box == pytest.approx((7 / 30, 4.5 / 30, 5 / 30, 10 / 30))


def test_threshold_255_unique_max():
    q = np.zeros((10, 10), np.uint8)
    q[3, 7] = 255
    q[5, 5] = 254
    assert largest_component_bbox(q, 255) == pytest.approx((7.5 / 10, 3.5 / 10, 0.1, 0.1))
    with pytest.raises(NoAttentionRegion, match="no attention region above threshold"):
        largest_component_bbox(np.zeros((4, 4), np.uint8), 140)


def test_diagonal_pixels_join_only_under_8_connectivity():
    q = np.zeros((5, 5), np.uint8)
    q[0, 0] = q[1, 1] = q[2, 2] = 200
    q[4, 3] = q[4, 4] = 200
    assert largest_component_bbox(q, 140, 8) == pytest.approx((0.3, 0.3, 0.6, 0.6))
    assert largest_component_bbox(q, 140, 4) == pytest.approx((0.8, 0.9, 0.2, 0.4))


def test_center_cluster_region(backend):
    rng = np.random.default_rng(0)
    size = 256
    pts = np.clip(np.round(rng.normal(size / 2, 3, (100, 2))), 0, size - 1).astype(int)
    box = hva_pipeline(_pts(pts), size, size, HvaConfig(sigma=64, threshold=140))
    true_center = (pts[:, 0].mean() + 0.5) / size, (pts[:, 1].mean() + 0.5) / size
    assert abs(box.cx - true_center[0]) < 0.02 and abs(box.cy - true_center[1]) < 0.02
    assert abs(box.cx - 0.5) < 0.02 and abs(box.cy - 0.5) < 0.02


def test_translation_equivariance():
    rng = np.random.default_rng(1)
    base = np.round(rng.normal(40, 4, (60, 2))).astype(int)
    cfg = HvaConfig(sigma=4, threshold=140)
    a = hva_pipeline(_pts(base), 128, 128, cfg)
    for dx, dy in [(10, 0), (0, 17), (25, 30)]:
        b = hva_pipeline(_pts(base + [dx, dy]), 128, 128, cfg)
        assert abs((b.cx - a.cx) * 128 - dx) <= 1
        assert abs((b.cy - a.cy) * 128 - dy) <= 1
        assert b.h == pytest.approx(a.h, abs=1 / 128) and b.w == pytest.approx(a.w, abs=1 / 128)


def test_pipeline_is_deterministic_and_validated():
    pts = _pts([(5, 5), (6, 5), (5, 7)])
    assert hva_pipeline(pts, 16, 16, HvaConfig(sigma=2)) == hva_pipeline(pts, 16, 16, HvaConfig(sigma=2))
    np.testing.assert_array_equal(heatmap(pts, 16, 16, HvaConfig(sigma=2)), heatmap(pts, 16, 16, HvaConfig(sigma=2)))
    with pytest.raises(NoAttentionRegion):
        hva_pipeline([], 16, 16)
    assert HvaConfig() == HvaConfig(64.0, 140, 8)
    for bad in ({"sigma": 0}, {"threshold": 256}, {"connectivity": 6}):
        with pytest.raises(ValueError):
            HvaConfig(**bad)


def test_backends_agree():
    impls = kernels.available_backends()
    rng = np.random.default_rng(3)
    x = rng.random((7, 40))
    k = gaussian_kernel(2.0)
    ref = impls["python"].correlate_rows(x, k)
    mask = (rng.random((30, 30)) < 0.45).astype(np.uint8)
    labels_ref, count_ref = impls["python"].label_components(mask, 8)
    for impl in impls.values():
        np.testing.assert_allclose(impl.correlate_rows(x, k), ref, atol=1e-12)
        labels, count = impl.label_components(mask, 8)
        assert count == count_ref
        np.testing.assert_array_equal(labels, labels_ref)
