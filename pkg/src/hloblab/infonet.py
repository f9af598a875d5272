"""Volume binning, mutual information, TMFG construction, and head inputs.

Vertex indexing is fixed everywhere: 0-9 are ask volume levels 1-10, 10-19
are bid volume levels 1-10. Mutual information is the plug-in estimator in
nats; the diagonal of an MI matrix carries the empirical entropy of each
column.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import (
    AsymmetricInput,
    EmptyList,
    IndexOutOfRange,
    LengthMismatch,
    TooFewVertices,
)
from .lob import ASK_V, BID_V, LobSeries, N_LEVELS

log = logging.getLogger(__name__)

N_VERTICES = 2 * N_LEVELS  # 20 volume levels
DEFAULT_BINS = 32
DEFAULT_BOOTSTRAP = 10


@dataclass(frozen=True)
class BinnedVolumes:
    """Integer bin indices for the 20 volume columns of one day."""

    indices: np.ndarray  # (T, 20) int
    n_bins: int
    bin_width: float


@dataclass(frozen=True)
class Tmfg:
    """Greedy maximally filtered planar graph over 20 volume levels."""

    n: int
    seed_tetrahedron: tuple[int, int, int, int]
    insertions: tuple[tuple[int, tuple[int, int, int]], ...]  # (vertex, host face)
    edges: tuple[tuple[int, int], ...]
    faces: tuple[tuple[int, int, int], ...]  # triangular faces at termination


@dataclass(frozen=True)
class SimplicialComplex:
    """The TMFG's tetrahedra, triangles, and edges in canonical order."""

    tetrahedra: np.ndarray  # (n-3, 4)
    triangles: np.ndarray   # (3n-8, 3)
    edges: np.ndarray       # (3n-6, 2)


def volume_columns(series: LobSeries) -> np.ndarray:
    """The day's (T, 20) volume matrix: ask levels 1-10 then bid levels 1-10."""
    return np.concatenate(
        [series.book[:, ASK_V::4], series.book[:, BID_V::4]], axis=1
    )


def bin_volumes(series: LobSeries, n_bins: int = DEFAULT_BINS) -> BinnedVolumes:
    """Equally spaced binning, one width shared by all 20 volume columns."""
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    vols = volume_columns(series).astype(np.float64)
    lo, hi = vols.min(), vols.max()
    if hi == lo:
        log.warning("degenerate volume range (%s); all samples in bin 0", lo)
        return BinnedVolumes(np.zeros(vols.shape, np.int64), n_bins, 1.0)
    width = (hi - lo) / n_bins
    idx = np.minimum(np.floor((vols - lo) / width).astype(np.int64), n_bins - 1)
    return BinnedVolumes(idx, n_bins, width)


def mutual_information(x: np.ndarray, y: np.ndarray) -> float:
    """Plug-in MI in nats from two equal-length integer columns.

    MI(x, x) equals the empirical entropy H(x).
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise LengthMismatch(f"{x.shape} vs {y.shape}")
    return _mi_from_joint(_joint_counts(x, y))


def _joint_counts(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    nx = int(x.max()) + 1
    ny = int(y.max()) + 1
    return np.bincount(x * ny + y, minlength=nx * ny).reshape(nx, ny)


def _mi_from_joint(counts: np.ndarray) -> float:
    total = counts.sum()
    p = counts / total
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    mask = p > 0
    terms = p[mask] * np.log(p[mask] / (px @ py)[mask])
    # canonical summation order makes MI(x, y) == MI(y, x) bit-exact
    return float(np.sort(terms).sum())


def mi_matrix(binned_indices: np.ndarray) -> np.ndarray:
    """Full symmetric pairwise MI matrix; diagonal holds column entropies."""
    t, k = binned_indices.shape
    out = np.zeros((k, k))
    for i in range(k):
        for j in range(i, k):
            v = _mi_from_joint(_joint_counts(binned_indices[:, i],
                                             binned_indices[:, j]))
            out[i, j] = out[j, i] = v
    return out


def daily_mi_matrix(binned: BinnedVolumes, n_bootstrap: int = DEFAULT_BOOTSTRAP,
                    rng_seed: int = 0, resample: bool = True) -> np.ndarray:
    """Bootstrap-averaged daily MI matrix.

    With ``resample=False`` (test hook) the estimate reduces to the plain
    plug-in matrix regardless of ``n_bootstrap``.
    """
    if n_bootstrap < 1:
        raise ValueError("n_bootstrap must be >= 1")
    if not resample:
        return mi_matrix(binned.indices)
    rng = np.random.default_rng(rng_seed)
    t = binned.indices.shape[0]
    acc = np.zeros((N_VERTICES, N_VERTICES))
    for _ in range(n_bootstrap):
        rows = rng.integers(0, t, size=t)
        acc += mi_matrix(binned.indices[rows])
    return acc / n_bootstrap


def average_mi(daily: list[np.ndarray]) -> np.ndarray:
    """Element-wise arithmetic mean of daily MI matrices."""
    if not daily:
        raise EmptyList("no daily MI matrices")
    shape = daily[0].shape
    for m in daily:
        if m.shape != shape:
            raise LengthMismatch(f"{m.shape} vs {shape}")
    return np.mean(daily, axis=0)


def _check_symmetric(w: np.ndarray) -> None:
    scale = max(float(np.abs(w).max()), 1.0)
    if float(np.abs(w - w.T).max()) > 1e-12 * scale:
        raise AsymmetricInput("similarity matrix is not symmetric")


def build_tmfg(w: np.ndarray) -> Tmfg:
    """Greedy TMFG: max-weight seed tetrahedron, then best (vertex, face) inserts.

    Ties break deterministically: lexicographically smallest vertex set for
    the seed, smallest (vertex index, face discovery index) for insertions.
    The diagonal is ignored.
    """
    w = np.asarray(w, np.float64)
    n = w.shape[0]
    if w.ndim != 2 or w.shape[1] != n:
        raise AsymmetricInput(f"expected square matrix, got {w.shape}")
    if n < 4:
        raise TooFewVertices(f"need >= 4 vertices, got {n}")
    _check_symmetric(w)
    w = w.copy()
    np.fill_diagonal(w, 0.0)

    best_seed = None
    best_sum = -np.inf
    for quad in itertools.combinations(range(n), 4):
        s = sum(w[a, b] for a, b in itertools.combinations(quad, 2))
        if s > best_sum:
            best_sum, best_seed = s, quad
    seed = tuple(best_seed)

    faces: list[tuple[int, int, int]] = [tuple(f) for f in itertools.combinations(seed, 3)]
    alive = [True] * len(faces)
    edges = {tuple(sorted(e)) for e in itertools.combinations(seed, 2)}
    outside = sorted(set(range(n)) - set(seed))
    insertions: list[tuple[int, tuple[int, int, int]]] = []

    while outside:
        best = None  # (gain, vertex, face index)
        for v in outside:
            for fi, face in enumerate(faces):
                if not alive[fi]:
                    continue
                gain = w[v, face[0]] + w[v, face[1]] + w[v, face[2]]
                if best is None or gain > best[0] or (
                        gain == best[0] and (v, fi) < best[1:]):
                    best = (gain, v, fi)
        _, v, fi = best
        face = faces[fi]
        insertions.append((v, face))
        alive[fi] = False
        for pair in itertools.combinations(face, 2):
            faces.append(tuple(sorted(pair + (v,))))
            alive.append(True)
        for u in face:
            edges.add(tuple(sorted((u, v))))
        outside.remove(v)

    live_faces = tuple(f for f, a in zip(faces, alive) if a)
    return Tmfg(
        n=n,
        seed_tetrahedron=seed,
        insertions=tuple(insertions),
        edges=tuple(sorted(edges)),
        faces=live_faces,
    )


def extract_simplices(g: Tmfg) -> SimplicialComplex:
    """Tetrahedra, triangles, and edges of the TMFG in discovery order.

    Every maximal clique of a TMFG is a tetrahedron: the seed plus one per
    insertion. Triangles and edges are enumerated from the tetrahedra in
    construction order, keeping first occurrences, ascending vertex index
    within each simplex.
    """
    tetrahedra = [tuple(sorted(g.seed_tetrahedron))]
    for v, face in g.insertions:
        tetrahedra.append(tuple(sorted(face + (v,))))

    triangles: list[tuple[int, ...]] = []
    edges: list[tuple[int, ...]] = []
    seen_tri: set = set()
    seen_edge: set = set()
    for tet in tetrahedra:
        for tri in itertools.combinations(tet, 3):
            if tri not in seen_tri:
                seen_tri.add(tri)
                triangles.append(tri)
        for edge in itertools.combinations(tet, 2):
            if edge not in seen_edge:
                seen_edge.add(edge)
                edges.append(edge)

    return SimplicialComplex(
        tetrahedra=np.array(tetrahedra, np.int64),
        triangles=np.array(triangles, np.int64),
        edges=np.array(edges, np.int64),
    )


def graph_score(w: np.ndarray, g: Tmfg) -> float:
    """Total similarity weight retained by the graph's edges."""
    w = np.asarray(w, np.float64)
    return float(sum(w[a, b] for a, b in g.edges))


def head_column_indices(complex_: SimplicialComplex) -> tuple[np.ndarray, ...]:
    """Flattened book-column gather indices for the three heads.

    Vertex v maps to (price, volume) columns of its level and side in the
    LOBSTER 40-column layout: level = v % 10, ask side for v < 10.
    """
    def price_col(v: int) -> int:
        if not 0 <= v < N_VERTICES:
            raise IndexOutOfRange(f"vertex {v} out of range")
        level = v % N_LEVELS
        return 4 * level + (0 if v < N_LEVELS else 2)

    out = []
    for simplices in (complex_.tetrahedra, complex_.triangles, complex_.edges):
        cols: list[int] = []
        for simplex in simplices:
            for v in simplex:
                p = price_col(int(v))
                cols.extend([p, p + 1])  # (price, volume) pair order
        out.append(np.array(cols, np.int64))
    return tuple(out)


def assemble_head_inputs(window: np.ndarray,
                         complex_: SimplicialComplex) -> tuple[np.ndarray, ...]:
    """Gather a (100, 40) window into the three flattened head tensors.

    Pure gather: widths are 17*4*2 = 136, 52*3*2 = 312, 54*2*2 = 216.
    """
    idx = head_column_indices(complex_)
    if window.shape[1] <= int(max(i.max() for i in idx)):
        raise IndexOutOfRange("window has too few columns for the complex")
    return tuple(window[:, i] for i in idx)


# --- serialization ---

def mi_matrix_to_json(m: np.ndarray, config_digest: str = "") -> str:
    return json.dumps(
        {"shape": list(m.shape), "data": m.flatten().tolist(),
         "config_digest": config_digest},
        sort_keys=True,
    )


def mi_matrix_from_json(text: str) -> tuple[np.ndarray, str]:
    obj = json.loads(text)
    m = np.array(obj["data"], np.float64).reshape(obj["shape"])
    return m, obj.get("config_digest", "")


def mi_matrix_to_csv(m: np.ndarray) -> str:
    return "\n".join(",".join(repr(float(v)) for v in row) for row in m) + "\n"


def simplices_to_json(complex_: SimplicialComplex, config_digest: str = "") -> str:
    return json.dumps(
        {
            "tetrahedra": complex_.tetrahedra.tolist(),
            "triangles": complex_.triangles.tolist(),
            "edges": complex_.edges.tolist(),
            "config_digest": config_digest,
        },
        sort_keys=True,
    )


def simplices_from_json(text: str) -> tuple[SimplicialComplex, str]:
    obj = json.loads(text)
    return SimplicialComplex(
        tetrahedra=np.array(obj["tetrahedra"], np.int64),
        triangles=np.array(obj["triangles"], np.int64),
        edges=np.array(obj["edges"], np.int64),
    ), obj.get("config_digest", "")
