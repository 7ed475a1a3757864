"""Graph storage, GCN normalization, dataset files, and node splits.

A `Graph` is an immutable undirected simple graph in CSR form plus a dense
float64 feature matrix, binary labels, and a map of named sensitive
attribute columns that are held out of the features unless explicitly
appended back.

The on-disk dataset format is a header-bearing CSV of numeric node rows,
an ASCII edge list of 0-indexed "u v" pairs, and a small key=value
manifest.  `load_dataset` ingests third-party files in that shape and
standardizes features; `save_dataset`/`load_saved` round-trip a Graph
bit-exactly via the manifest.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .kernels import make_rng

log = logging.getLogger(__name__)


class DataError(ValueError):
    """Malformed or inconsistent dataset input."""


class SplitError(ValueError):
    """Requested split ratios cannot be satisfied."""


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph: symmetric CSR, no self-loops, sorted rows."""

    indptr: np.ndarray          # int64, length n+1
    indices: np.ndarray         # int64, column indices per row, sorted
    x: np.ndarray               # (n, d) float64 node features
    y: np.ndarray               # (n,) int64 labels in {0, 1}
    sens: dict[str, np.ndarray] = field(default_factory=dict)
    feat_names: tuple[str, ...] = ()
    appended: tuple[str, ...] = ()  # sensitive columns already added to x

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def n_undirected_edges(self) -> int:
        return len(self.indices) // 2

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u]:self.indptr[u + 1]]


@dataclass(frozen=True)
class NormAdj:
    """GCN-normalized adjacency in CSR form, self-loops included.

    `coef` holds (1+d_u)^-1/2 (1+d_v)^-1/2 per stored entry (degrees taken
    before self-loops; the same formula gives 1/(1+d_u) on the diagonal).
    `edge_id` maps each stored entry to its undirected edge, -1 for
    self-loop entries; `edge_u < edge_v` give the canonical orientation.
    """

    indptr: np.ndarray
    indices: np.ndarray
    coef: np.ndarray
    rows: np.ndarray        # row index per stored entry
    edge_id: np.ndarray     # undirected edge id per entry, -1 on diagonal
    edge_u: np.ndarray
    edge_v: np.ndarray

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    @property
    def n_edges(self) -> int:
        return len(self.edge_u)


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def spmm(adj: NormAdj, vals: np.ndarray, dense: np.ndarray) -> np.ndarray:
    """Sparse-times-dense with per-entry values `vals` over adj's pattern.

    Accumulation is sequential in stored-entry order (np.add.reduceat), so
    results are deterministic.  Every row holds at least its self-loop
    entry, which reduceat requires.
    """
    contrib = vals[:, None] * dense[adj.indices]
    return np.add.reduceat(contrib, adj.indptr[:-1], axis=0)


def _build_csr(n: int, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetrize, dedup, drop self-loops; return sorted CSR arrays."""
    if edges.size == 0:
        both = np.zeros((0, 2), dtype=np.int64)
    else:
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.min() < 0 or edges.max() >= n:
            bad = edges[(edges < 0).any(1) | (edges >= n).any(1)][0]
            raise DataError(f"edge endpoint out of range: {tuple(bad)} with n={n}")
        both = np.vstack([edges, edges[:, ::-1]])
        both = both[both[:, 0] != both[:, 1]]
        both = np.unique(both, axis=0)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, both[:, 0] + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, np.ascontiguousarray(both[:, 1])


def build_graph(n, edges, x, y, sens=None, feat_names=()) -> Graph:
    """Construct a validated Graph from raw (possibly directed) edge pairs."""
    x = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    if x.shape[0] != n or y.shape[0] != n:
        raise DataError(f"features/labels rows must equal n={n}")
    if not np.isin(y, (0, 1)).all():
        raise DataError("labels must be binary {0, 1}")
    indptr, indices = _build_csr(n, np.asarray(edges))
    sens = {k: np.asarray(v, dtype=np.int64) for k, v in (sens or {}).items()}
    for name, col in sens.items():
        if col.shape != (n,) or col.min() < 0:
            raise DataError(f"sensitive column {name!r} must be n non-negative ints")
    if not feat_names:
        feat_names = tuple(f"f{i}" for i in range(x.shape[1]))
    return Graph(indptr, indices, x, y, sens, tuple(feat_names))


def validate_graph(g: Graph) -> None:
    """Scan-check CSR invariants: symmetric, sorted, simple."""
    n = g.n
    for u in range(n):
        nb = g.neighbors(u)
        if len(nb) > 1 and not (np.diff(nb) > 0).all():
            raise DataError(f"row {u} not strictly sorted (dup or unsorted)")
        if (nb == u).any():
            raise DataError(f"self-loop stored at node {u}")
    # symmetry: the multiset of (u,v) equals the multiset of (v,u)
    rows = np.repeat(np.arange(n), np.diff(g.indptr))
    fwd = rows * n + g.indices
    rev = g.indices * n + rows
    if not np.array_equal(np.sort(fwd), np.sort(rev)):
        raise DataError("adjacency is not symmetric")


def standardize_columns(x: np.ndarray) -> np.ndarray:
    """Column-wise zero mean, unit std; constant columns map to zero."""
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    out = x - mean
    nz = std > 0
    out[:, nz] /= std[nz]
    out[:, ~nz] = 0.0
    return out


def _read_numeric_csv(node_file) -> tuple[list[str], np.ndarray]:
    with open(node_file, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{node_file}: empty node file") from None
        header = [h.strip() for h in header]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{node_file}:{lineno}: expected {len(header)} cells")
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise DataError(f"{node_file}:{lineno}: non-numeric cell ({exc})") from None
    if not rows:
        raise DataError(f"{node_file}: no node rows")
    return header, np.asarray(rows, dtype=np.float64)


def _read_edge_file(edge_file) -> tuple[np.ndarray, int]:
    pairs = []
    with open(edge_file) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise DataError(f"{edge_file}:{lineno}: expected 'u v'")
            try:
                pairs.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise DataError(f"{edge_file}:{lineno}: non-integer endpoint") from None
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2), len(pairs)


def load_dataset(node_file, edge_file, label_col: str, sens_cols, *,
                 standardize: bool = True) -> Graph:
    """Load a node CSV plus edge list into a Graph.

    Named sensitive columns are removed from the features and stored in
    `Graph.sens`; the remaining feature columns are standardized unless
    `standardize=False` (used when reloading already-standardized saves).
    """
    header, table = _read_numeric_csv(node_file)
    sens_cols = list(sens_cols)
    for name in [label_col, *sens_cols]:
        if name not in header:
            raise DataError(f"column {name!r} not found in {node_file}")
    n = table.shape[0]

    y = table[:, header.index(label_col)]
    if not np.isin(y, (0.0, 1.0)).all():
        raise DataError(f"label column {label_col!r} must be binary 0/1")

    sens = {}
    for name in sens_cols:
        col = table[:, header.index(name)]
        if (col < 0).any() or (col != np.round(col)).any():
            raise DataError(f"sensitive column {name!r} must hold non-negative ints")
        sens[name] = col.astype(np.int64)

    drop = {label_col, *sens_cols}
    feat_idx = [i for i, h in enumerate(header) if h not in drop]
    x = table[:, feat_idx]
    if standardize:
        x = standardize_columns(x)

    raw_pairs, raw_lines = _read_edge_file(edge_file)
    g = build_graph(n, raw_pairs, x, y.astype(np.int64), sens,
                    feat_names=[header[i] for i in feat_idx])
    log.info("loaded %s: n=%d d=%d edge-lines=%d undirected-edges=%d",
             node_file, g.n, g.d, raw_lines, g.n_undirected_edges)
    return g


def append_sensitive(graph: Graph, attr_name: str) -> Graph:
    """Return a new Graph with the standardized sensitive column added to x."""
    if attr_name not in graph.sens:
        raise DataError(f"unknown sensitive attribute {attr_name!r}")
    if attr_name in graph.appended:
        raise DataError(f"sensitive attribute {attr_name!r} already appended")
    col = graph.sens[attr_name].astype(np.float64)
    std = col.std()
    col = (col - col.mean()) / std if std > 0 else np.zeros_like(col)
    return replace(
        graph,
        x=np.ascontiguousarray(np.hstack([graph.x, col[:, None]])),
        feat_names=graph.feat_names + (attr_name,),
        appended=graph.appended + (attr_name,),
    )


def gcn_normalize(graph: Graph) -> NormAdj:
    """Symmetric GCN normalization with self-loops added."""
    n = graph.n
    deg = graph.degrees().astype(np.float64)
    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(graph.indptr))
    cols = graph.indices
    # inject one self-loop entry per row, re-sorting each row
    all_rows = np.concatenate([rows, np.arange(n, dtype=np.int64)])
    all_cols = np.concatenate([cols, np.arange(n, dtype=np.int64)])
    order = np.lexsort((all_cols, all_rows))
    all_rows, all_cols = all_rows[order], all_cols[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, all_rows + 1, 1)
    np.cumsum(indptr, out=indptr)

    inv = 1.0 / np.sqrt(1.0 + deg)
    coef = inv[all_rows] * inv[all_cols]

    lo = np.minimum(all_rows, all_cols)
    hi = np.maximum(all_rows, all_cols)
    key = lo * n + hi
    off_diag = all_rows != all_cols
    uniq = np.unique(key[off_diag])
    edge_id = np.full(len(all_rows), -1, dtype=np.int64)
    edge_id[off_diag] = np.searchsorted(uniq, key[off_diag])
    return NormAdj(
        indptr=indptr,
        indices=all_cols,
        coef=coef,
        rows=all_rows,
        edge_id=edge_id,
        edge_u=(uniq // n).astype(np.int64),
        edge_v=(uniq % n).astype(np.int64),
    )


def _apportion(quotas: np.ndarray, total: int, caps: np.ndarray) -> np.ndarray:
    """Integer allocation: floor quotas, then largest fractional remainder,
    respecting per-class capacity.  Deterministic (ties break to lower id)."""
    base = np.minimum(np.floor(quotas).astype(np.int64), caps)
    left = total - int(base.sum())
    if left < 0:
        raise SplitError("over-allocated split quota")
    frac = quotas - np.floor(quotas)
    order = np.lexsort((np.arange(len(quotas)), -frac))
    for c in list(order) + list(range(len(quotas))):
        if left == 0:
            break
        room = caps[c] - base[c]
        take = min(room, left)
        base[c] += take
        left -= take
    if left > 0:
        raise SplitError("not enough nodes to satisfy split sizes")
    return base


def split_nodes(graph: Graph, ratios: tuple[float, float, float], seed) -> Split:
    """Label-stratified train/val/test split.

    Global sizes follow floor-then-remainder-to-test over the requested
    ratios; per-class counts are apportioned to those sizes so every split
    contains every class.
    """
    r = np.asarray(ratios, dtype=np.float64)
    if (r <= 0).any() or r.sum() > 1.0 + 1e-9:
        raise SplitError(f"ratios must be positive and sum <= 1, got {ratios}")
    n = graph.n
    classes = np.unique(graph.y)
    if len(classes) < 2:
        raise SplitError("stratified split requires both classes present")

    n_tr = int(np.floor(r[0] * n))
    n_va = int(np.floor(r[1] * n))
    n_te = int(np.floor(r.sum() * n)) - n_tr - n_va

    rng = make_rng(seed)
    per_class = [np.flatnonzero(graph.y == c) for c in classes]
    perms = [idx[rng.permutation(len(idx))] for idx in per_class]
    counts = np.asarray([len(idx) for idx in per_class], dtype=np.int64)

    caps = counts.copy()
    tr_c = _apportion(r[0] * counts, n_tr, caps)
    caps = caps - tr_c
    va_c = _apportion(r[1] * counts, n_va, caps)
    caps = caps - va_c
    te_c = _apportion(r[2] * counts, n_te, caps)

    parts: dict[str, list[np.ndarray]] = {"train": [], "val": [], "test": []}
    for perm, a, b, c in zip(perms, tr_c, va_c, te_c):
        if a < 1 or b < 1 or c < 1:
            raise SplitError("a class would be absent from some split at these ratios")
        parts["train"].append(perm[:a])
        parts["val"].append(perm[a:a + b])
        parts["test"].append(perm[a + b:a + b + c])
    return Split(
        train=np.sort(np.concatenate(parts["train"])),
        val=np.sort(np.concatenate(parts["val"])),
        test=np.sort(np.concatenate(parts["test"])),
    )


# --- canonical save format -------------------------------------------------

def save_dataset(graph: Graph, out_dir) -> Path:
    """Write nodes.csv, edges.txt and manifest.txt; returns the manifest path.

    Floats are written with repr (shortest round-trip form), so a reload via
    `load_saved` reproduces the Graph bit-exactly.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sens_names = list(graph.sens)
    with open(out / "nodes.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([*graph.feat_names, "label", *sens_names])
        for i in range(graph.n):
            row = [repr(v) for v in graph.x[i]]
            row.append(str(int(graph.y[i])))
            row.extend(str(int(graph.sens[s][i])) for s in sens_names)
            writer.writerow(row)
    with open(out / "edges.txt", "w") as fh:
        rows = np.repeat(np.arange(graph.n), np.diff(graph.indptr))
        keep = rows < graph.indices
        for u, v in zip(rows[keep], graph.indices[keep]):
            fh.write(f"{u} {v}\n")
    manifest = out / "manifest.txt"
    with open(manifest, "w") as fh:
        fh.write(f"n={graph.n}\n")
        fh.write(f"d={graph.d}\n")
        fh.write("label_col=label\n")
        fh.write(f"sens_cols={','.join(sens_names)}\n")
        fh.write("standardized=true\n")
        fh.write(f"appended={','.join(graph.appended)}\n")
    return manifest


def load_saved(manifest_path) -> Graph:
    """Reload a dataset written by `save_dataset` without re-standardizing."""
    manifest_path = Path(manifest_path)
    meta = {}
    for line in manifest_path.read_text().splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            meta[k] = v
    folder = manifest_path.parent
    sens_cols = [s for s in meta.get("sens_cols", "").split(",") if s]
    g = load_dataset(folder / "nodes.csv", folder / "edges.txt",
                     meta["label_col"], sens_cols, standardize=False)
    appended = tuple(s for s in meta.get("appended", "").split(",") if s)
    if appended:
        g = replace(g, appended=appended)
    if g.n != int(meta["n"]) or g.d != int(meta["d"]):
        raise DataError("manifest does not match node file contents")
    return g
