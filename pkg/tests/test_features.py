import numpy as np
import pytest

from vision_fsl.features import blend, fuse, gate, load_or_compute, smooth
from vision_fsl.graph import build_graph

from .conftest import random_graph


def dense_oracle(g):
    n = g.num_nodes
    a = np.eye(n)
    for v in range(n):
        for u in g.indices[g.indptr[v]:g.indptr[v + 1]]:
            a[v, u] = 1.0
    d = a.sum(1)
    dm = np.diag(1.0 / np.sqrt(d))
    return dm @ a @ dm @ g.features


def brute_gate(xr, xs):
    out = []
    for a, b in zip(xr, xs):
        na, nb = np.sqrt((a * a).sum()), np.sqrt((b * b).sum())
        s = 0.0 if na == 0 or nb == 0 else float((a * b).sum() / (na * nb))
        out.append((min(max(s, -1.0), 1.0) + 1.0) / 2.0)
    return np.array(out)


def test_two_node_path_smoothing():
    g = build_graph(np.array([[1.0, 0.0], [0.0, 1.0]]), [(0, 1)])
    np.testing.assert_allclose(smooth(g), [[0.5, 0.5], [0.5, 0.5]])


def test_isolated_node_unchanged():
    g = build_graph(np.array([[3.0, -1.0]]), [])
    np.testing.assert_array_equal(smooth(g), g.features)


def test_constant_features_fixed_under_smoothing_on_regular_graph():
    # constant rows are preserved where all nodes share a degree
    ring = [(i, (i + 1) % 6) for i in range(6)]
    g = build_graph(np.full((6, 3), 2.5), ring)
    np.testing.assert_allclose(smooth(g), g.features, atol=1e-12)


def test_gate_examples():
    x = np.array([[1.0, 2.0], [1.0, 2.0], [1.0, 0.0]])
    xs = np.array([[1.0, 2.0], [-1.0, -2.0], [0.0, 5.0]])
    np.testing.assert_allclose(gate(x, xs), [1.0, 0.0, 0.5], atol=1e-12)


def test_two_node_path_fusion_by_brute_force():
    # frozen by per-row evaluation: cos([1,0],[.5,.5]) = 1/sqrt(2), gate = (1/sqrt(2)+1)/2
    g = build_graph(np.array([[1.0, 0.0], [0.0, 1.0]]), [(0, 1)])
    af = fuse(g)
    expected_gate = (1.0 / np.sqrt(2.0) + 1.0) / 2.0
    np.testing.assert_allclose(af.gate, [expected_gate, expected_gate])
    np.testing.assert_allclose(af.gate, [0.8535533905932737] * 2)
    np.testing.assert_allclose(af.x_task[0], [(1 - expected_gate) + expected_gate * 0.5, expected_gate * 0.5])


def test_gate_endpoints_select_raw_or_smooth():
    xr = np.array([[1.0, 0.0], [2.0, 1.0]])
    xs = np.array([[3.0, 4.0], [5.0, 5.0]])
    out = blend(xr, xs, np.array([1.0, 0.0]))
    np.testing.assert_array_equal(out[0], xs[0])
    np.testing.assert_array_equal(out[1], xr[1])


def test_smooth_matches_dense_oracle(rng):
    for _ in range(10):
        n = int(rng.integers(1, 120))
        g = random_graph(rng, n, p=float(rng.uniform(0, 0.2)))
        np.testing.assert_allclose(smooth(g), dense_oracle(g), atol=1e-10, rtol=0)


def test_fusion_is_convex_combination(rng):
    g = random_graph(rng, 80, zero_rows=5)
    af = fuse(g)
    np.testing.assert_allclose(af.gate, brute_gate(g.features, af.x_smooth), atol=1e-12)
    assert ((af.gate >= 0) & (af.gate <= 1)).all()
    w = af.gate[:, None]
    np.testing.assert_array_equal(af.x_task, (1 - w) * g.features + w * af.x_smooth)
    assert np.isfinite(af.x_task).all()


def test_zero_rows_get_half_gate():
    x = np.array([[0.0, 0.0], [1.0, 2.0], [0.0, 0.0]])
    g = build_graph(x, [(0, 1)])
    af = fuse(g)
    assert af.gate[0] == 0.5 and af.gate[2] == 0.5
    assert np.isfinite(af.x_task).all()


def test_gate_rises_when_neighbors_copy_the_node(rng):
    x = rng.standard_normal((6, 4))
    star = [(0, i) for i in range(1, 6)]
    before = fuse(build_graph(x, star)).gate[0]
    copies = x.copy()
    copies[1:] = x[0]
    after = fuse(build_graph(copies, star)).gate[0]
    assert after > before
    assert after == pytest.approx(1.0)


def test_cache_round_trip(tmp_path, rng):
    g = random_graph(rng, 30)
    a = load_or_compute(g, tmp_path)
    files = list(tmp_path.iterdir())
    assert len(files) == 1 and g.content_hash()[:16] in files[0].name
    b = load_or_compute(g, tmp_path)
    np.testing.assert_array_equal(a.x_task, b.x_task)
    np.testing.assert_array_equal(a.gate, b.gate)
