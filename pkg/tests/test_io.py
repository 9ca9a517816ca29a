import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qgw import io as qio
from qgw.errors import ValidationError
from qgw.partition import PartitionConfig, voronoi_partition
from qgw.pipeline import match_qgw
from qgw.spaces import PointedPartition, build_from_points


def test_points_with_header(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("x,y,f0,label,weight\n0,1,0.5,a,1\n2,3,0.25,b,3\n")
    t = qio.read_points(f)
    assert t.coords.tolist() == [[0, 1], [2, 3]]
    assert t.features.tolist() == [[0.5], [0.25]]
    assert t.labels.tolist() == ["a", "b"]
    assert t.weights.tolist() == [1, 3]


def test_points_without_header(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("0,1\n\n2,3\n")
    t = qio.read_points(f)
    assert t.coords.tolist() == [[0, 1], [2, 3]]
    assert t.features is None and t.labels is None and t.weights is None


@pytest.mark.parametrize("body,line", [("x,y\n0,1\n2\n", 3), ("x,y\n0,1\n2,zz\n", 3), ("0,1\n1,nan_\n", 2)])
def test_points_errors_carry_line_numbers(tmp_path, body, line):
    f = tmp_path / "p.csv"
    f.write_text(body)
    with pytest.raises(ValidationError, match=f"p.csv:{line}:"):
        qio.read_points(f)


def test_points_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    c, feat = rng.normal(size=(7, 3)), rng.normal(size=(7, 2))
    qio.write_points(tmp_path / "p.csv", c, features=feat, labels=list("abcdefg"), weights=np.arange(1, 8.0))
    t = qio.read_points(tmp_path / "p.csv")
    assert np.array_equal(t.coords, c) and np.array_equal(t.features, feat)
    assert t.labels.tolist() == list("abcdefg") and t.weights.tolist() == list(range(1, 8))


def test_graph_file(tmp_path):
    f = tmp_path / "g.txt"
    f.write_text("# comment\n0 1\n1 2 2.5  # trailing\n\n")
    assert qio.read_graph(f).tolist() == [[0, 1, 1.0], [1, 2, 2.5]]
    f.write_text("0 1\n1 x\n")
    with pytest.raises(ValidationError, match="g.txt:2:"):
        qio.read_graph(f)
    f.write_text("0 1 -1\n")
    with pytest.raises(ValidationError, match="g.txt:1:"):
        qio.read_graph(f)


def test_partition_round_trip_and_errors(tmp_path):
    X = build_from_points(np.random.default_rng(1).normal(size=(30, 2)))
    P = voronoi_partition(X, PartitionConfig(m=4, seed=0))
    f = tmp_path / "part.txt"
    qio.write_partition(f, P)
    Q = qio.read_partition(f, X.measure)
    assert np.array_equal(P.labels, Q.labels) and np.array_equal(P.representatives, Q.representatives)
    f.write_text("0 0 1\n1 0 1\n")
    with pytest.raises(ValidationError, match="two representatives"):
        qio.read_partition(f, np.full(2, 0.5))
    f.write_text("0 0 1\n")
    with pytest.raises(ValidationError, match="cover"):
        qio.read_partition(f, np.full(2, 0.5))
    f.write_text("0 0 1\n5 0 0\n")
    with pytest.raises(ValidationError, match=":2:"):
        qio.read_partition(f, np.full(2, 0.5))


@settings(max_examples=25)
@given(st.integers(1, 60), st.integers(0, 2**31 - 1))
def test_coupling_round_trip(tmp_path_factory, n, seed):
    rng = np.random.default_rng(seed)
    X = build_from_points(rng.normal(size=(n, 2)), weights=rng.uniform(0.1, 1, n))
    Y = build_from_points(rng.normal(size=(n + 2, 2)))
    m = int(rng.integers(1, n + 1))
    PX = voronoi_partition(X, PartitionConfig(m=m, seed=seed))
    PY = voronoi_partition(Y, PartitionConfig(m=min(m, Y.n), seed=seed + 1))
    qc, _ = match_qgw(X, PX, Y, PY)
    f = tmp_path_factory.mktemp("c") / "c.txt"
    qio.write_coupling(f, qc)
    back = qio.read_coupling(f, PX, PY)
    assert np.array_equal(back.global_plan, qc.global_plan)
    assert list(back.locals) == list(qc.locals)
    for k, plan in qc.locals.items():
        other = back.locals[k]
        assert np.array_equal(plan.rows, other.rows) and np.array_equal(plan.cols, other.cols)
        assert np.array_equal(plan.mass, other.mass) and plan.shape == other.shape


def test_coupling_header_mismatch(tmp_path):
    X = build_from_points(np.arange(4.0))
    P = PointedPartition.identity(X.measure)
    qc, _ = match_qgw(X, P, X, P)
    f = tmp_path / "c.txt"
    qio.write_coupling(f, qc)
    Q = PointedPartition.from_labels([0, 0, 1, 1], [0, 2], X.measure)
    with pytest.raises(ValidationError, match="header"):
        qio.read_coupling(f, Q, Q)


def test_dense_export(tmp_path):
    X = build_from_points(np.arange(6.0))
    P = voronoi_partition(X, PartitionConfig(m=2, seed=0))
    qc, _ = match_qgw(X, P, X, P)
    f = tmp_path / "d.txt"
    qio.write_dense_coupling(f, qc)
    D = np.zeros((6, 6))
    for line in f.read_text().splitlines():
        i, j, w = line.split()
        D[int(i), int(j)] = float(w)
    assert np.array_equal(D, qc.densify())
    with pytest.raises(ValidationError, match="dense export"):
        qio.write_dense_coupling(f, qc, cap=10)


def test_json_handles_numpy(tmp_path):
    f = tmp_path / "r.json"
    qio.write_json(f, {"a": np.float64(1.5), "b": np.arange(2), "c": np.int64(3)})
    assert json.loads(f.read_text()) == {"a": 1.5, "b": [0, 1], "c": 3}
