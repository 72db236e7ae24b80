"""Exact kNN search and the kNN transition matrix used for label propagation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .cospace import FeatureSpace

UNDERFLOW_FLOOR = 1e-300


class DegenerateGeometryError(ValueError):
    """Every sample coincides with all of its neighbours."""


@dataclass(frozen=True, eq=False)
class KnnIndex:
    """``indices[i]`` are the K nearest rows of sample ``i`` (self excluded),
    ascending by Euclidean distance, ties by ascending sample id."""

    ids: tuple[str, ...]
    indices: np.ndarray
    distances: np.ndarray

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    def neighbors(self, sid: str) -> list[tuple[str, float]]:
        i = self.ids.index(sid)
        return [(self.ids[j], float(d)) for j, d in zip(self.indices[i], self.distances[i])]


def id_ranks(ids) -> np.ndarray:
    """Position of each id in lexicographic order."""
    order = sorted(range(len(ids)), key=ids.__getitem__)
    ranks = np.empty(len(ids), dtype=np.int64)
    ranks[order] = np.arange(len(ids))
    return ranks


def nearest_rows(
    queries: np.ndarray,
    points: np.ndarray,
    k: int,
    ranks: np.ndarray,
    exclude: np.ndarray | None = None,
    block_size: int = 256,
    ordered: bool = True,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Exact k nearest ``points`` for each query row.

    Squared distances from the dot-product expansion only screen candidates;
    every candidate within a small slack of the k-th value is re-measured
    directly, and ties are broken by ``ranks`` (ascending).  ``exclude[q]``
    names a point index to skip for query ``q`` (-1 for none).

    With ``ordered=False`` only the neighbour *sets* are exact: rows are left
    in arbitrary order and no distances are returned.
    """
    center = points.mean(axis=0) if points.size else 0.0
    queries = queries - center
    points = points - center
    nq = queries.shape[0]
    out_idx = np.empty((nq, k), dtype=np.int64)
    out_dist = np.empty((nq, k)) if ordered else None
    sq_p = np.einsum("ij,ij->i", points, points)
    sq_max = float(sq_p.max()) if sq_p.size else 0.0
    for start in range(0, nq, block_size):
        q = queries[start : start + block_size]
        sq_q = np.einsum("ij,ij->i", q, q)
        # squared distance minus the per-row constant |q|^2 (ranking is unchanged)
        d2 = q @ points.T
        d2 *= -2.0
        d2 += sq_p
        if exclude is not None:
            ex = exclude[start : start + block_size]
            rows = np.flatnonzero(ex >= 0)
            d2[rows, ex[rows]] = np.inf
        part = np.argpartition(d2, k - 1, axis=1)[:, :k]
        kth = np.take_along_axis(d2, part, axis=1).max(axis=1)
        slack = 1e-9 * (sq_q + sq_max) + 1e-300
        within = (d2 <= (kth + slack)[:, None]).sum(axis=1)
        # rows with no near-tie at the k-th distance: candidates are exactly `part`
        fast = np.flatnonzero(within == k)
        if fast.size and not ordered:
            out_idx[start + fast] = part[fast]
        elif fast.size:
            cand = part[fast]
            diff = points[cand] - q[fast, None, :]
            exact = np.sqrt(np.einsum("rkd,rkd->rk", diff, diff))
            order = np.lexsort((ranks[cand], exact), axis=-1)
            out_idx[start + fast] = np.take_along_axis(cand, order, axis=1)
            out_dist[start + fast] = np.take_along_axis(exact, order, axis=1)
        for r in np.flatnonzero(within != k):
            cand = np.flatnonzero(d2[r] <= kth[r] + slack[r])
            diff = points[cand] - q[r]
            exact = np.sqrt(np.einsum("ij,ij->i", diff, diff))
            order = np.lexsort((ranks[cand], exact))[:k]
            out_idx[start + r] = cand[order]
            if ordered:
                out_dist[start + r] = exact[order]
    return out_idx, out_dist


def build_knn(space: FeatureSpace, k: int) -> KnnIndex:
    if k < 1:
        raise ValueError("K must be positive")
    if k >= space.n:
        raise ValueError(f"K={k} must be smaller than the number of samples ({space.n})")
    x = space.vectors
    idx, dist = nearest_rows(x, x, k, id_ranks(space.ids), exclude=np.arange(space.n))
    idx.setflags(write=False)
    dist.setflags(write=False)
    return KnnIndex(space.ids, idx, dist)


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Row-stochastic sparse kNN transition matrix over ``ids``."""

    ids: tuple[str, ...]
    matrix: sp.csr_matrix
    sigma: np.ndarray
    mu: float
    delta: float
    k: int

    @property
    def n(self) -> int:
        return len(self.ids)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def bandwidths(knn: KnnIndex, delta: float = 1.0) -> np.ndarray:
    """Per-sample kernel width: ``delta`` times the mean distance to the K neighbours.

    Zero widths (all neighbours coincide with the sample) take the smallest
    positive width in the dataset.
    """
    sigma = knn.distances.mean(axis=1)
    positive = sigma > 0
    if not np.any(positive):
        raise DegenerateGeometryError("degenerate geometry: all kNN distances are zero")
    if not np.all(positive):
        sigma = np.where(positive, sigma, sigma[positive].min())
    return delta * sigma


def build_transition(space: FeatureSpace, knn: KnnIndex, mu: float = 1.0, delta: float = 1.0) -> TransitionMatrix:
    """Heat-kernel weights over each sample's kNN, normalized per row.

    ``W(i, j) = exp(-d(i, j)^2 / (mu * sigma_i^2))`` for ``j`` in Knn(i),
    normalized over the row, then normalized again (a no-op unless entries
    fell under the underflow floor).
    """
    if mu <= 0 or delta <= 0:
        raise ValueError("mu and delta must be positive")
    if knn.ids != space.ids:
        raise ValueError("kNN index was built over a different sample set")
    sigma = bandwidths(knn, delta)
    z = knn.distances**2 / (mu * sigma[:, None] ** 2)
    w = np.exp(-(z - z.min(axis=1, keepdims=True)))
    w /= w.sum(axis=1, keepdims=True)
    w[w < UNDERFLOW_FLOOR] = 0.0
    w /= w.sum(axis=1, keepdims=True)

    n, k = knn.indices.shape
    indptr = np.arange(0, n * k + 1, k)
    mat = sp.csr_matrix((w.ravel(), knn.indices.ravel(), indptr), shape=(n, n))
    mat.sort_indices()
    mat.eliminate_zeros()
    return TransitionMatrix(space.ids, mat, sigma, float(mu), float(delta), k)


def transition_from_space(space: FeatureSpace, k: int, mu: float = 1.0, delta: float = 1.0) -> TransitionMatrix:
    return build_transition(space, build_knn(space, k), mu, delta)


def dump_transition(tm: TransitionMatrix, path: str | Path) -> None:
    """Coordinate text dump, one ``i<TAB>j<TAB>value`` line per nonzero."""
    coo = tm.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    lines = [f"{coo.row[t]}\t{coo.col[t]}\t{float(coo.data[t])!r}\n" for t in order]
    Path(path).write_text("".join(lines), encoding="utf-8", newline="\n")
