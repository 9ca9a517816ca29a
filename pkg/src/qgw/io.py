"""Plain-text file formats.

Point cloud (CSV)
    Optional header. Without a header every column is a coordinate. With a
    header, columns named ``f*`` are features, ``label`` is a label column,
    ``weight`` a mass column and everything else a coordinate.
Graph
    Whitespace edge list ``u v [w]`` with 0-based ids; ``#`` starts a comment.
Partition
    One line ``point_index block_index rep_flag`` per point.
Coupling
    Header ``m_X m_Y N_X N_Y``; then ``G p q mass`` lines for the global
    plan; then for every supported block pair a line ``L p q`` followed by
    ``i j mass`` triplets in block-local indices.
Dense coupling
    ``i j mass`` triplets in global indices.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .pipeline import QuantizationCoupling
from .spaces import PointedPartition
from .transport import SparsePlan


def _fmt(x: float) -> str:
    return repr(float(x))


def _bad(path, lineno, msg):
    return ValidationError(f"{path}:{lineno}: {msg}")


@dataclass
class PointTable:
    coords: np.ndarray
    features: np.ndarray | None = None
    labels: np.ndarray | None = None
    weights: np.ndarray | None = None


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def read_points(path) -> PointTable:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [(i + 1, r) for i, r in enumerate(csv.reader(fh)) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValidationError(f"{path}: empty point file")
    header = None
    first = [c.strip() for c in rows[0][1]]
    if not all(_is_number(c) for c in first):
        header = first
        rows = rows[1:]
    width = len(header) if header else len(first)
    if header is None:
        header = [f"x{k}" for k in range(width)]
    feat = [k for k, h in enumerate(header) if h.startswith("f")]
    lab = [k for k, h in enumerate(header) if h == "label"]
    wcol = [k for k, h in enumerate(header) if h == "weight"]
    coord = [k for k in range(width) if k not in feat + lab + wcol]
    if not coord:
        raise ValidationError(f"{path}: no coordinate columns")
    num_cols = coord + feat + wcol
    values = np.empty((len(rows), width), dtype=object)
    for r, (lineno, row) in enumerate(rows):
        if len(row) != width:
            raise _bad(path, lineno, f"expected {width} columns, got {len(row)}")
        for k in range(width):
            tok = row[k].strip()
            if k in num_cols:
                try:
                    values[r, k] = float(tok)
                except ValueError:
                    raise _bad(path, lineno, f"non-numeric value {tok!r} in column {header[k]!r}") from None
            else:
                values[r, k] = tok
    coords = values[:, coord].astype(np.float64)
    features = values[:, feat].astype(np.float64) if feat else None
    labels = values[:, lab[0]].astype(str) if lab else None
    weights = values[:, wcol[0]].astype(np.float64) if wcol else None
    return PointTable(coords, features, labels, weights)


def write_points(path, coords, features=None, labels=None, weights=None):
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim == 1:
        coords = coords[:, None]
    header = [f"x{k}" for k in range(coords.shape[1])]
    cols = [coords]
    if features is not None:
        features = np.asarray(features, dtype=np.float64).reshape(coords.shape[0], -1)
        header += [f"f{k}" for k in range(features.shape[1])]
        cols.append(features)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        extra = (["label"] if labels is not None else []) + (["weight"] if weights is not None else [])
        w.writerow(header + extra)
        table = np.hstack(cols)
        for i, row in enumerate(table):
            out = [_fmt(v) for v in row]
            if labels is not None:
                out.append(str(labels[i]))
            if weights is not None:
                out.append(_fmt(weights[i]))
            w.writerow(out)


def read_graph(path) -> np.ndarray:
    """Edge rows ``(u, v, w)`` as a float array (w defaults to 1)."""
    path = Path(path)
    edges = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            if len(tok) not in (2, 3):
                raise _bad(path, lineno, "expected 'u v [w]'")
            try:
                u, v = int(tok[0]), int(tok[1])
                w = float(tok[2]) if len(tok) == 3 else 1.0
            except ValueError:
                raise _bad(path, lineno, f"cannot parse {line!r}") from None
            if u < 0 or v < 0:
                raise _bad(path, lineno, "node ids must be nonnegative")
            if not (w >= 0 and np.isfinite(w)):
                raise _bad(path, lineno, "edge weight must be finite and nonnegative")
            edges.append((u, v, w))
    return np.array(edges, dtype=np.float64).reshape(-1, 3)


def write_graph(path, edges):
    with Path(path).open("w") as fh:
        for u, v, *w in np.asarray(edges).tolist():
            fh.write(f"{int(u)} {int(v)} {_fmt(w[0]) if w else '1.0'}\n")


def write_partition(path, partition: PointedPartition):
    is_rep = np.zeros(partition.n, dtype=np.int64)
    is_rep[partition.representatives] = 1
    with Path(path).open("w") as fh:
        for i in range(partition.n):
            fh.write(f"{i} {int(partition.labels[i])} {int(is_rep[i])}\n")


def read_partition(path, measure) -> PointedPartition:
    path = Path(path)
    measure = np.asarray(measure, dtype=np.float64)
    n = measure.size
    labels = np.full(n, -1, dtype=np.int64)
    reps = {}
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            if len(tok) != 3:
                raise _bad(path, lineno, "expected 'point_index block_index rep_flag'")
            try:
                i, p, flag = (int(t) for t in tok)
            except ValueError:
                raise _bad(path, lineno, f"cannot parse {line!r}") from None
            if not 0 <= i < n:
                raise _bad(path, lineno, f"point index {i} out of range [0, {n})")
            if labels[i] != -1:
                raise _bad(path, lineno, f"point {i} listed twice")
            if p < 0 or flag not in (0, 1):
                raise _bad(path, lineno, "invalid block index or rep flag")
            labels[i] = p
            if flag:
                if p in reps:
                    raise _bad(path, lineno, f"block {p} has two representatives")
                reps[p] = i
    if np.any(labels < 0):
        raise ValidationError(f"{path}: partition does not cover point {int(np.flatnonzero(labels < 0)[0])}")
    m = int(labels.max()) + 1
    if sorted(reps) != list(range(m)):
        raise ValidationError(f"{path}: every block needs exactly one representative")
    return PointedPartition.from_labels(labels, [reps[p] for p in range(m)], measure)


def write_coupling(path, qc: QuantizationCoupling):
    gp = qc.global_plan
    with Path(path).open("w") as fh:
        fh.write(f"{gp.shape[0]} {gp.shape[1]} {qc.n_source} {qc.n_target}\n")
        support = qc.support()
        for p, q in support:
            fh.write(f"G {p} {q} {_fmt(gp[p, q])}\n")
        for p, q in support:
            plan = qc.locals[(p, q)]
            fh.write(f"L {p} {q}\n")
            for i, j, w in zip(plan.rows.tolist(), plan.cols.tolist(), plan.mass.tolist()):
                fh.write(f"{i} {j} {_fmt(w)}\n")


def read_coupling(path, source: PointedPartition, target: PointedPartition) -> QuantizationCoupling:
    path = Path(path)
    with path.open() as fh:
        lines = [(k, ln.strip()) for k, ln in enumerate(fh, 1) if ln.strip()]
    if not lines:
        raise ValidationError(f"{path}: empty coupling file")
    try:
        mx, my, nx, ny = (int(t) for t in lines[0][1].split())
    except ValueError:
        raise _bad(path, lines[0][0], "header must be 'm_X m_Y N_X N_Y'") from None
    if (mx, my, nx, ny) != (source.m, target.m, source.n, target.n):
        raise ValidationError(f"{path}: header does not match the given partitions")
    gp = np.zeros((mx, my))
    locals_, current, buf = {}, None, ([], [], [])

    def flush():
        if current is not None:
            p, q = current
            shape = (source.blocks[p].size, target.blocks[q].size)
            locals_[current] = SparsePlan(np.array(buf[0], dtype=np.int64),
                                          np.array(buf[1], dtype=np.int64),
                                          np.array(buf[2], dtype=np.float64), shape)

    for lineno, line in lines[1:]:
        tok = line.split()
        try:
            if tok[0] == "G":
                gp[int(tok[1]), int(tok[2])] = float(tok[3])
            elif tok[0] == "L":
                flush()
                current = (int(tok[1]), int(tok[2]))
                buf = ([], [], [])
            else:
                if current is None:
                    raise _bad(path, lineno, "triplet before any 'L p q' section")
                buf[0].append(int(tok[0]))
                buf[1].append(int(tok[1]))
                buf[2].append(float(tok[2]))
        except (ValueError, IndexError):
            raise _bad(path, lineno, f"cannot parse {line!r}") from None
    flush()
    if set(locals_) != {tuple(map(int, pq)) for pq in np.argwhere(gp > 0)}:
        raise ValidationError(f"{path}: local sections do not match the global support")
    return QuantizationCoupling(gp, locals_, source, target)


def write_dense_coupling(path, qc: QuantizationCoupling, cap: int = 1_000_000):
    if qc.n_source * qc.n_target > cap:
        raise ValidationError(f"dense export refused: N_X * N_Y exceeds {cap}")
    r, c, v = qc.triplets()
    order = np.lexsort((c, r))
    with Path(path).open("w") as fh:
        for i, j, w in zip(r[order].tolist(), c[order].tolist(), v[order].tolist()):
            fh.write(f"{i} {j} {_fmt(w)}\n")


def read_index_file(path) -> np.ndarray:
    """One integer per non-empty line (ground-truth permutations)."""
    path = Path(path)
    out = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(int(line.split()[0]))
            except ValueError:
                raise _bad(path, lineno, f"expected an integer, got {line!r}") from None
    return np.array(out, dtype=np.int64)


def read_label_file(path) -> np.ndarray:
    with Path(path).open() as fh:
        return np.array([ln.strip() for ln in fh if ln.strip()])


def write_json(path, doc: dict):
    text = json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"
    if path is None or str(path) == "-":
        print(text, end="")
    else:
        Path(path).write_text(text)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")
