"""
Sequences of directed snapshots over a fixed node set: ingestion, serialization,
preprocessing and descriptive statistics.

Edge-list format, one record per line::

    t src dst [weight]

``t`` is a non-negative integer step, ``src``/``dst`` are arbitrary string
identifiers and ``weight`` a non-negative integer (default 1). Lines starting
with ``#`` and blank lines are ignored. Repeated records for the same
``(t, src, dst)`` are summed.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field
from typing import IO, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import EmptyNetworkError, ParseError, ValidationError


def _freeze(mat: sp.csr_matrix) -> sp.csr_matrix:
    mat = sp.csr_matrix(mat, dtype=np.int64, copy=True)
    mat.eliminate_zeros()
    mat.sort_indices()
    for arr in (mat.data, mat.indices, mat.indptr):
        arr.flags.writeable = False
    return mat


@dataclass(frozen=True, eq=False)
class TemporalNetwork:
    """Directed snapshots ``A(0), ..., A(T)`` over ``n_nodes`` nodes.

    Snapshots are stored as read-only CSR matrices with integer weights,
    together with their transposes (so ``A_ji(t)`` lookups are as cheap as
    ``A_ij(t)``).
    """

    n_nodes: int
    snapshots: Tuple[sp.csr_matrix, ...]
    node_labels: Optional[Tuple[str, ...]] = None
    transposes: Tuple[sp.csr_matrix, ...] = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.snapshots) < 1:
            raise EmptyNetworkError("a temporal network needs at least one snapshot")
        if self.n_nodes < 0:
            raise ValidationError("n_nodes must be non-negative")
        frozen = []
        for t, mat in enumerate(self.snapshots):
            if mat.shape != (self.n_nodes, self.n_nodes):
                raise ValidationError(
                    f"snapshot {t} has shape {mat.shape}, expected {(self.n_nodes, self.n_nodes)}")
            mat = _freeze(mat)
            if mat.nnz and mat.data.min() < 0:
                raise ValidationError(f"snapshot {t} has negative weights")
            frozen.append(mat)
        object.__setattr__(self, "snapshots", tuple(frozen))
        object.__setattr__(self, "transposes", tuple(_freeze(m.T.tocsr()) for m in frozen))
        if self.node_labels is not None:
            labels = tuple(str(x) for x in self.node_labels)
            if len(labels) != self.n_nodes:
                raise ValidationError("node_labels must have one entry per node")
            object.__setattr__(self, "node_labels", labels)

    @classmethod
    def from_dense(cls, adj, node_labels=None) -> "TemporalNetwork":
        """Build from an array of shape ``(T+1, N, N)``."""
        adj = np.asarray(adj)
        if adj.ndim == 2:
            adj = adj[None]
        if adj.ndim != 3 or adj.shape[1] != adj.shape[2]:
            raise ValidationError("dense adjacency must have shape (T+1, N, N)")
        return cls(adj.shape[1], tuple(sp.csr_matrix(a) for a in adj), node_labels)

    @property
    def n_steps(self) -> int:
        return len(self.snapshots)

    @property
    def T(self) -> int:
        return len(self.snapshots) - 1

    @property
    def labels(self) -> Tuple[str, ...]:
        if self.node_labels is not None:
            return self.node_labels
        return tuple(str(i) for i in range(self.n_nodes))

    def dense(self, binary: bool = False) -> np.ndarray:
        out = np.stack([m.toarray() for m in self.snapshots]) if self.n_nodes else \
            np.zeros((self.n_steps, 0, 0), dtype=np.int64)
        return (out > 0).astype(np.int64) if binary else out

    def is_binary(self) -> bool:
        return all(m.nnz == 0 or m.data.max() <= 1 for m in self.snapshots)

    def binarized(self) -> "TemporalNetwork":
        snaps = []
        for m in self.snapshots:
            b = m.copy()
            b.data = np.minimum(b.data, 1)
            snaps.append(b)
        return TemporalNetwork(self.n_nodes, tuple(snaps), self.node_labels)

    def truncated(self, n_steps: int) -> "TemporalNetwork":
        """Keep the first ``n_steps`` snapshots, i.e. ``A(0..n_steps-1)``."""
        if not 1 <= n_steps <= self.n_steps:
            raise ValidationError(f"cannot keep {n_steps} of {self.n_steps} snapshots")
        return TemporalNetwork(self.n_nodes, self.snapshots[:n_steps], self.node_labels)

    def aggregate(self) -> sp.csr_matrix:
        total = sp.csr_matrix((self.n_nodes, self.n_nodes), dtype=np.int64)
        for m in self.snapshots:
            total = total + m
        return total.tocsr()

    def subgraph(self, keep: np.ndarray) -> "TemporalNetwork":
        """Restrict to the node indices in ``keep`` (re-densified, order preserved)."""
        keep = np.asarray(keep, dtype=np.int64)
        snaps = tuple(m[keep][:, keep] for m in self.snapshots)
        labels = tuple(self.labels[i] for i in keep)
        return TemporalNetwork(len(keep), snaps, labels)

    def n_edges(self, t: int) -> int:
        return int(self.snapshots[t].nnz)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TemporalNetwork):
            return NotImplemented
        if self.n_nodes != other.n_nodes or self.n_steps != other.n_steps:
            return False
        if self.labels != other.labels:
            return False
        return all((a != b).nnz == 0 for a, b in zip(self.snapshots, other.snapshots))

    __hash__ = None


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------

def _as_text_lines(source) -> Iterable[str]:
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(source.decode("utf-8"))
    if isinstance(source, str):
        return io.StringIO(source)
    if isinstance(source, io.TextIOBase):
        return source
    # binary stream; read eagerly so no wrapper outlives the call
    return io.StringIO(source.read().decode("utf-8"))


def _parse_int(tok: str, what: str, lineno: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"{what} {tok!r} is not an integer", lineno) from None


def load_edgelist(source: Union[str, bytes, IO], binarize: bool = True) -> TemporalNetwork:
    """Read a temporal edge list.

    Parameters
    ----------
    source : str, bytes or file-like
        Edge-list content (``str``/``bytes``) or an open text/binary stream.
        Use :func:`read_edgelist` for paths.
    binarize : bool
        Clamp every positive weight to 1.

    Returns
    -------
    TemporalNetwork
        Node indices follow first-appearance order (source before target).
    """
    index = {}
    records = []
    for lineno, raw in enumerate(_as_text_lines(source), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        toks = line.split()
        if len(toks) not in (3, 4):
            raise ParseError(f"expected 't src dst [weight]', got {len(toks)} fields", lineno)
        t = _parse_int(toks[0], "time", lineno)
        w = _parse_int(toks[3], "weight", lineno) if len(toks) == 4 else 1
        if t < 0:
            raise ValidationError(f"line {lineno}: negative time {t}")
        if w < 0:
            raise ValidationError(f"line {lineno}: negative weight {w}")
        for name in toks[1:3]:
            if name not in index:
                index[name] = len(index)
        records.append((t, index[toks[1]], index[toks[2]], w))

    if not records:
        raise EmptyNetworkError("edge list contains no records")
    n = len(index)
    n_steps = max(r[0] for r in records) + 1
    arr = np.array(records, dtype=np.int64)
    snaps = []
    for t in range(n_steps):
        sel = arr[arr[:, 0] == t]
        m = sp.coo_matrix((sel[:, 3], (sel[:, 1], sel[:, 2])), shape=(n, n)).tocsr()
        m.sum_duplicates()
        if binarize:
            m.data = np.minimum(m.data, 1)
        snaps.append(m)
    labels = tuple(sorted(index, key=index.get))
    return TemporalNetwork(n, tuple(snaps), labels)


def read_edgelist(path, binarize: bool = True) -> TemporalNetwork:
    with open(path, encoding="utf-8") as fh:
        return load_edgelist(fh, binarize=binarize)


def dump_edgelist(net: TemporalNetwork) -> str:
    """Serialize to the edge-list format.

    Every node is declared first with a zero-weight record at ``t=0`` (so
    isolated nodes and index order survive a round trip), and a zero-weight
    record at the last step pins ``T`` when trailing snapshots are empty.
    """
    labels = net.labels
    for lab in labels:
        if not lab or any(c.isspace() for c in lab) or lab.startswith("#"):
            raise ValidationError(f"node label {lab!r} cannot be written to an edge list")
    lines = [f"# n_nodes={net.n_nodes} n_steps={net.n_steps}"]
    lines += [f"0 {lab} {lab} 0" for lab in labels]
    for t, m in enumerate(net.snapshots):
        coo = m.tocoo()
        order = np.lexsort((coo.col, coo.row))
        for r, c, w in zip(coo.row[order], coo.col[order], coo.data[order]):
            lines.append(f"{t} {labels[r]} {labels[c]} {w}")
    if net.T > 0 and net.snapshots[-1].nnz == 0 and net.n_nodes:
        lines.append(f"{net.T} {labels[0]} {labels[0]} 0")
    return "\n".join(lines) + "\n"


def write_edgelist(net: TemporalNetwork, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_edgelist(net))


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

@dataclass
class PreprocessReport:
    nodes_removed: int
    self_loops_removed: int
    component_kept_size: int
    rule_trace: List[dict]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @property
    def changed(self) -> bool:
        return bool(self.nodes_removed or self.self_loops_removed)


def preprocess(net: TemporalNetwork) -> Tuple[TemporalNetwork, PreprocessReport]:
    """Remove self-loops, keep nodes with both in- and out-edges, keep the giant component.

    The in/out-degree rule is applied on the time-aggregated graph and
    repeated until no node violates it; the giant component uses weak
    connectivity of the aggregated graph.
    """
    n0 = net.n_nodes
    if n0 == 0:
        raise EmptyNetworkError("network has no nodes")
    trace = []

    snaps = []
    loops = 0
    for m in net.snapshots:
        diag = m.diagonal()
        loops += int(np.count_nonzero(diag))
        m = m.tolil(copy=True)
        m.setdiag(0)
        snaps.append(m.tocsr())
    cur = TemporalNetwork(n0, tuple(snaps), net.labels)
    trace.append({"rule": "remove_self_loops", "edges_removed": loops})

    while True:
        agg = cur.aggregate()
        out_deg = np.diff(agg.indptr)
        in_deg = np.diff(agg.tocsc().indptr)
        keep = np.flatnonzero((out_deg > 0) & (in_deg > 0))
        dropped = cur.n_nodes - len(keep)
        trace.append({"rule": "in_out_degree_filter", "nodes_removed": int(dropped)})
        if dropped == 0:
            break
        if len(keep) == 0:
            raise EmptyNetworkError("no node has both an incoming and an outgoing edge")
        cur = cur.subgraph(keep)

    _, comp = connected_components(cur.aggregate(), directed=True, connection="weak")
    sizes = np.bincount(comp)
    giant = int(np.argmax(sizes))
    keep = np.flatnonzero(comp == giant)
    trace.append({"rule": "giant_component", "nodes_removed": int(cur.n_nodes - len(keep))})
    if len(keep) < cur.n_nodes:
        cur = cur.subgraph(keep)

    report = PreprocessReport(
        nodes_removed=n0 - cur.n_nodes,
        self_loops_removed=loops,
        component_kept_size=cur.n_nodes,
        rule_trace=trace,
    )
    return cur, report


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def reciprocity(net: TemporalNetwork, t: int) -> float:
    """Fraction of (binarized, non-loop) edges of ``A(t)`` whose reverse edge also exists."""
    if not 0 <= t < net.n_steps:
        raise ValidationError(f"step {t} out of range [0, {net.n_steps})")
    a = (net.snapshots[t] > 0).astype(np.int64).tolil()
    a.setdiag(0)
    a = a.tocsr()
    a.eliminate_zeros()
    if a.nnz == 0:
        return 0.0
    mutual = a.multiply(a.T).nnz
    return mutual / a.nnz


def reciprocity_series(net: TemporalNetwork) -> np.ndarray:
    return np.array([reciprocity(net, t) for t in range(net.n_steps)])


def mean_out_degree(net: TemporalNetwork, t: int) -> float:
    if net.n_nodes == 0:
        return 0.0
    return float(net.snapshots[t].sum()) / net.n_nodes

