"""Static contact networks over 2n typed nodes."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"TSGR"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")

DEFAULT_EDGE_BUDGET = 200_000_000


class CapacityError(MemoryError):
    """Expected edge count exceeds the configured budget."""


class GraphFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph in compressed sparse row form.

    Nodes ``0..2n-1``; ``node_type[v]`` is 1 or 2 with exactly n of each.
    Neighbors of ``v`` are ``indices[indptr[v]:indptr[v+1]]``, sorted.
    """

    n: int
    node_type: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def num_nodes(self) -> int:
        return 2 * self.n

    @property
    def edge_count(self) -> int:
        return len(self.indices) // 2

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def edges(self) -> np.ndarray:
        """Sorted ``(u, v)`` pairs with ``u < v``."""
        src = np.repeat(np.arange(self.num_nodes, dtype=np.int64), self.degrees())
        keep = src < self.indices
        return np.column_stack([src[keep], self.indices[keep]])

    def check(self) -> None:
        """Raise AssertionError if any structural invariant is violated."""
        nn = self.num_nodes
        assert len(self.node_type) == nn and len(self.indptr) == nn + 1
        assert np.count_nonzero(self.node_type == 1) == self.n
        assert np.count_nonzero(self.node_type == 2) == self.n
        src = np.repeat(np.arange(nn), self.degrees())
        assert not np.any(src == self.indices), "self-loop"
        for v in range(nn):
            nb = self.neighbors(v)
            assert np.all(np.diff(nb) > 0), f"unsorted or duplicate neighbors at {v}"
        dst = self.indices.astype(np.int64)
        fwd = src * nn + dst
        rev = dst * nn + src
        assert np.array_equal(np.sort(fwd), np.sort(rev)), "asymmetric adjacency"

    def same(self, other: "Graph") -> bool:
        return (self.n == other.n and np.array_equal(self.node_type, other.node_type)
                and np.array_equal(self.indptr, other.indptr) and np.array_equal(self.indices, other.indices))


def from_edges(n: int, node_type: np.ndarray, u: np.ndarray, v: np.ndarray, meta: dict | None = None) -> Graph:
    """Build a CSR graph from an undirected edge list (deduplicated, loops dropped)."""
    nn = 2 * n
    u = np.asarray(u, dtype=np.int64)
    v = np.asarray(v, dtype=np.int64)
    keep = u != v
    lo, hi = np.minimum(u[keep], v[keep]), np.maximum(u[keep], v[keep])
    key = np.unique(lo * nn + hi)
    lo, hi = key // nn, key % nn
    src = np.concatenate([lo, hi])
    dst = np.concatenate([hi, lo])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(nn + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=nn), out=indptr[1:])
    return Graph(n, np.asarray(node_type, dtype=np.int8), indptr, dst.astype(np.int32), dict(meta or {}))


def _bernoulli_pairs(total: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Indices in ``[0, total)`` kept independently with probability p, by geometric gap skipping."""
    if p <= 0 or total <= 0:
        return np.empty(0, dtype=np.int64)
    if p >= 1:
        return np.arange(total, dtype=np.int64)
    mean = total * p
    chunk = min(int(mean + 6.0 * math.sqrt(mean) + 64), 1 << 22)
    out = []
    pos = -1
    while True:
        gaps = rng.geometric(p, size=chunk)
        idx = pos + np.cumsum(gaps)
        stop = np.searchsorted(idx, total)
        out.append(idx[:stop])
        if stop < chunk:
            break
        pos = int(idx[-1])
    return np.concatenate(out)


def _decode_triangle(k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map the linear index of a strict upper-triangle pair to ``(row, col)``, col > row.

    Pairs are enumerated column by column: ``k = col*(col-1)/2 + row``.
    """
    col = np.floor((1.0 + np.sqrt(1.0 + 8.0 * k.astype(np.float64))) / 2.0).astype(np.int64)
    # correct float rounding on either side
    col -= (col * (col - 1) // 2) > k
    col += ((col + 1) * col // 2) <= k
    row = k - col * (col - 1) // 2
    return row, col


def _check_budget(expected: float, budget: int) -> None:
    if expected > budget:
        raise CapacityError(f"expected {expected:.3g} edges exceeds budget {budget}")


def gen_two_community_er(n: int, c: float, c_cross: float | None = None, rng_seed=0,
                         edge_budget: int = DEFAULT_EDGE_BUDGET) -> Graph:
    """Two-community Erdos-Renyi graph: within-type pairs with probability c/n,
    cross-type pairs with probability c_cross/n.  Nodes ``[0, n)`` have type 1."""
    if c_cross is None:
        c_cross = c
    if n < 2 or c < 0 or c_cross < 0:
        raise ValueError("need n >= 2 and nonnegative c, c_cross")
    if c / n > 1 or c_cross / n > 1:
        raise ValueError("edge probabilities must not exceed 1")
    within = n * (n - 1) // 2
    _check_budget(2 * within * c / n + n * n * c_cross / n, edge_budget)
    rng = np.random.default_rng(rng_seed)
    us, vs = [], []
    for offset in (0, n):
        k = _bernoulli_pairs(within, c / n, rng)
        row, col = _decode_triangle(k)
        us.append(row + offset)
        vs.append(col + offset)
    k = _bernoulli_pairs(n * n, c_cross / n, rng)
    us.append(k // n)
    vs.append(k % n + n)
    node_type = np.repeat(np.array([1, 2], dtype=np.int8), n)
    meta = {"generator": "two_community_er", "n": n, "c": c, "c_cross": c_cross, "seed": _seed_repr(rng_seed)}
    return from_edges(n, node_type, np.concatenate(us), np.concatenate(vs), meta)


def gen_configuration_geometric(n: int, mean_degree: float, rng_seed=0,
                                edge_budget: int = DEFAULT_EDGE_BUDGET) -> Graph:
    """Configuration model with i.i.d. geometric degrees on {0, 1, ...}.

    Self-loops are erased and multi-edges collapsed; types form a uniformly
    random balanced partition.
    """
    if n < 2 or mean_degree < 0:
        raise ValueError("need n >= 2 and nonnegative mean_degree")
    _check_budget(n * mean_degree, edge_budget)
    rng = np.random.default_rng(rng_seed)
    nn = 2 * n
    node_type = np.repeat(np.array([1, 2], dtype=np.int8), n)
    meta = {"generator": "configuration_geometric", "n": n, "mean_degree": mean_degree,
            "seed": _seed_repr(rng_seed)}
    if mean_degree == 0:
        meta.update(raw_mean_degree=0.0, removed_fraction=0.0)
        return from_edges(n, node_type, np.empty(0), np.empty(0), meta)
    p = 1.0 / (1.0 + mean_degree)
    deg = rng.geometric(p, size=nn) - 1
    while deg.sum() % 2:
        deg[rng.integers(nn)] = rng.geometric(p) - 1
    stubs = np.repeat(np.arange(nn, dtype=np.int64), deg)
    rng.shuffle(stubs)
    u, v = stubs[0::2], stubs[1::2]
    rng.shuffle(node_type)
    g = from_edges(n, node_type, u, v)
    raw = len(u)
    meta.update(raw_mean_degree=float(deg.mean()),
                removed_fraction=(raw - g.edge_count) / raw if raw else 0.0)
    return Graph(g.n, g.node_type, g.indptr, g.indices, meta)


def _seed_repr(seed):
    return seed if isinstance(seed, (int, str)) or seed is None else repr(seed)


def dump(graph: Graph, path: str | Path) -> None:
    """Binary dump: header, sorted u32 edge pairs, one type byte per node; plus a JSON sidecar."""
    path = Path(path)
    edges = graph.edges().astype("<u4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, graph.num_nodes, len(edges)))
        fh.write(edges.tobytes())
        fh.write(graph.node_type.astype(np.uint8).tobytes())
    side = dict(graph.meta, num_nodes=graph.num_nodes, edge_count=graph.edge_count, format_version=FORMAT_VERSION)
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(side, indent=2, sort_keys=True))


def load(path: str | Path) -> Graph:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise GraphFormatError("truncated header")
    magic, version, nn, m = _HEADER.unpack_from(data)
    if magic != MAGIC or version != FORMAT_VERSION:
        raise GraphFormatError(f"unsupported graph file (magic={magic!r}, version={version})")
    if nn % 2 or len(data) != _HEADER.size + 8 * m + nn:
        raise GraphFormatError("size mismatch")
    edges = np.frombuffer(data, dtype="<u4", count=2 * m, offset=_HEADER.size).reshape(m, 2).astype(np.int64)
    node_type = np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size + 8 * m).astype(np.int8)
    side = path.with_suffix(path.suffix + ".json")
    meta = json.loads(side.read_text()) if side.exists() else {}
    return from_edges(nn // 2, node_type, edges[:, 0], edges[:, 1], meta)


def expected_edge_count(n: int, c: float, c_cross: float) -> tuple[float, float]:
    """Mean and standard deviation of the ER edge count."""
    within = n * (n - 1) // 2
    p, q = c / n, c_cross / n
    mean = 2 * within * p + n * n * q
    var = 2 * within * p * (1 - p) + n * n * q * (1 - q)
    return mean, math.sqrt(var)
