import numpy as np
import pytest

from vision_fsl.graph import (
    UNLABELED,
    build_graph,
    load_dataset,
    load_graph,
    load_split,
    neighbors,
    write_graph,
)
from vision_fsl.errors import ParseError, ValidationError

from .conftest import dataset_dir, random_graph


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def files(tmp_path, feats, edges, labels):
    return (write(tmp_path, "f.txt", feats), write(tmp_path, "e.txt", edges), write(tmp_path, "l.txt", labels))


def test_two_node_edge_is_symmetrized(tmp_path):
    g = load_graph(*files(tmp_path, "0\t1 0\n1\t0 1\n", "0 1\n", "0 0\n1 1\n"))
    assert list(neighbors(g, 0)) == [1]
    assert list(neighbors(g, 1)) == [0]


def test_self_loops_and_duplicates_dropped(tmp_path):
    g = load_graph(*files(tmp_path, "0\t1\n1\t2\n2\t3\n", "0 0\n0 1\n1 0\n0 1\n2 1\n", ""))
    assert list(neighbors(g, 0)) == [1]
    assert list(neighbors(g, 1)) == [0, 2]
    assert g.num_edges == 2
    assert (g.labels == UNLABELED).all()


def test_neighbors_examples():
    path = build_graph(np.zeros((3, 1)), [(0, 1), (1, 2)])
    assert list(neighbors(path, 1)) == [0, 2]
    iso = build_graph(np.zeros((2, 1)), np.zeros((0, 2)))
    assert list(neighbors(iso, 0)) == []
    tri = build_graph(np.zeros((3, 1)), [(2, 0), (1, 2), (0, 1)])
    assert list(neighbors(tri, 0)) == [1, 2]
    with pytest.raises(IndexError):
        neighbors(tri, 3)


def test_sparse_feature_format(tmp_path):
    g = load_graph(*files(tmp_path, "# num_features=4\n0\t1:2.5\n1\t\n", "", "0 1\n"))
    np.testing.assert_array_equal(g.features, [[0, 2.5, 0, 0], [0, 0, 0, 0]])
    assert g.labels.tolist() == [1, UNLABELED]


def test_malformed_line_reports_line_number(tmp_path):
    with pytest.raises(ParseError, match=r"e.txt:2"):
        load_graph(*files(tmp_path, "0\t1\n1\t2\n", "0 1\n0 x\n", ""))
    with pytest.raises(ParseError, match=r"f.txt:2"):
        load_graph(*files(tmp_path, "0\t1 2\n1\t2\n", "", ""))


def test_out_of_range_node_rejected(tmp_path):
    with pytest.raises(ValidationError):
        load_graph(*files(tmp_path, "0\t1\n1\t2\n", "0 5\n", ""))
    with pytest.raises(ValidationError):
        load_graph(*files(tmp_path, "0\t1\n1\t2\n", "", "7 0\n"))


def test_non_finite_feature_rejected(tmp_path):
    with pytest.raises(ValidationError, match="non-finite"):
        load_graph(*files(tmp_path, "0\t1 nan\n1\t2 3\n", "", ""))


def test_split_validation(tmp_path):
    g = build_graph(np.zeros((7, 1)), [], np.arange(7))
    s = load_split(write(tmp_path, "s.txt", "train: 0,1,2\nval: 3,4\ntest: 5,6\n"), g)
    assert (len(s.train_classes), len(s.val_classes), len(s.test_classes)) == (3, 2, 2)
    with pytest.raises(ValidationError, match="99"):
        load_split(write(tmp_path, "s2.txt", "train: 0,99\nval: 3\ntest: 5\n"), g)
    with pytest.raises(ValidationError, match="both"):
        load_split(write(tmp_path, "s3.txt", "train: 0,1\nval: 1\ntest: 5\n"), g)


def test_round_trip(tmp_path, rng):
    for k in range(5):
        g = random_graph(rng, 40, zero_rows=3)
        paths = (tmp_path / f"f{k}", tmp_path / f"e{k}", tmp_path / f"l{k}")
        write_graph(g, *paths, sparse=bool(k % 2))
        back = load_graph(*paths)
        assert back.same_structure(g)
        assert back.content_hash() == g.content_hash()


def test_immutable(rng):
    g = random_graph(rng, 10)
    with pytest.raises(ValueError):
        g.features[0, 0] = 1.0
    with pytest.raises(Exception):
        g.labels = None


def assert_symmetric(g):
    for v in range(g.num_nodes):
        nb = neighbors(g, v)
        assert len(set(nb.tolist())) == len(nb)
        assert v not in nb
        for u in nb:
            assert v in neighbors(g, int(u))


@pytest.mark.parametrize(
    "name,nodes,feats,classes,split_sizes",
    [("cora", 2708, 1433, 7, (3, 2, 2)), ("citeseer", 3327, 3703, 6, (2, 2, 2))],
)
def test_benchmark_statistics(name, nodes, feats, classes, split_sizes):
    d = dataset_dir(name)
    if not (d / "features.txt").exists():
        pytest.skip(f"{name} not converted under data/")
    g, split = load_dataset(d)
    assert (g.num_nodes, g.num_features, g.num_classes) == (nodes, feats, classes)
    assert (len(split.train_classes), len(split.val_classes), len(split.test_classes)) == split_sizes
    assert_symmetric(g)


def test_symmetry_random(rng):
    for _ in range(5):
        assert_symmetric(random_graph(rng, 60, p=0.1))
