"""Per-class change of the local labeled geometry across a feature transformation.

For an unlabeled sample ``x`` and a class ``y`` we estimate the covariance of
the class-``y`` labeled samples nearest to ``x`` (with ``x`` itself included at
weight ``k``) in each Co-Space side, compare the two zero-mean Gaussians with
the Hellinger distance, and turn the distances of the locally dominant classes
into a diagonal class-weighting matrix.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .cospace import CoSpace, FeatureSpace
from .dataset import Partition
from .graph import id_ranks, nearest_rows

RIDGE_REL = 1e-6
RIDGE_ABS = 1e-9


class NumericDegeneracyError(ArithmeticError):
    """A covariance matrix is not positive definite even after regularization."""


@dataclass(frozen=True, eq=False)
class LocalCovariance:
    sigma: np.ndarray
    class_id: int
    center_sample: str
    neighbor_count: int
    k_weight: float


@dataclass(frozen=True, eq=False)
class TransformationMatrix:
    """Diagonal of the class-weighting matrix; zero outside ``support``."""

    diag: np.ndarray
    support: tuple[int, ...]
    rho: Mapping[int, float] = field(default_factory=dict)

    @property
    def minable(self) -> bool:
        return len(self.support) > 0

    def as_matrix(self) -> np.ndarray:
        return np.diag(self.diag)


# ---------------------------------------------------------------------------
# Covariance and Hellinger distance
# ---------------------------------------------------------------------------


def ridge(sigma: np.ndarray) -> float:
    d = sigma.shape[-1]
    return max(RIDGE_REL * float(np.trace(sigma)) / d, RIDGE_ABS)


def grouped_covariances(
    center: np.ndarray,
    members: np.ndarray,
    sizes: Sequence[int],
    k_weight: float,
    regularize: bool = True,
) -> np.ndarray:
    """One weighted covariance per consecutive group of ``members`` rows.

    Each group's scatter includes ``center`` at weight ``k_weight`` about the
    weighted mean, divided by ``len(group) + k_weight - 1``; ``eps * I`` is
    added when ``regularize`` is set.  Returns a ``(groups, D, D)`` stack.
    """
    center = np.asarray(center, dtype=np.float64)
    d = center.shape[0]
    members = np.asarray(members, dtype=np.float64).reshape(-1, d)
    sizes = np.asarray(sizes, dtype=np.int64)
    denom = sizes + k_weight - 1.0
    if np.any(denom <= 0):
        raise ValueError(f"covariance undefined for group sizes {sizes.tolist()} with k={k_weight}")
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    nonempty = sizes > 0
    sums = np.zeros((sizes.size, d))
    if members.shape[0]:
        sums[nonempty] = np.add.reduceat(members, starts[nonempty], axis=0)
    mean = (k_weight * center + sums) / (sizes + k_weight)[:, None]
    dm = members - np.repeat(mean, sizes, axis=0)
    scatter = np.zeros((sizes.size, d, d))
    for g in np.flatnonzero(nonempty):
        block = dm[starts[g] : starts[g] + sizes[g]]
        scatter[g] = block.T @ block
    dc = center - mean
    sigma = (k_weight * dc[:, :, None] * dc[:, None, :] + scatter) / denom[:, None, None]
    sigma = 0.5 * (sigma + np.swapaxes(sigma, 1, 2))
    if regularize:
        eps = np.maximum(RIDGE_REL * np.trace(sigma, axis1=1, axis2=2) / d, RIDGE_ABS)
        sigma[:, np.arange(d), np.arange(d)] += eps[:, None]
    return sigma


def weighted_covariance(center: np.ndarray, members: np.ndarray, k_weight: float, regularize: bool = True) -> np.ndarray:
    """Covariance of ``members`` with ``center`` included at weight ``k_weight``."""
    members = np.asarray(members, dtype=np.float64).reshape(-1, np.shape(center)[0])
    return grouped_covariances(center, members, [members.shape[0]], k_weight, regularize)[0]


def local_covariance(
    space: FeatureSpace,
    x: str,
    members: Sequence[str],
    k_weight: float = 1.0,
    class_id: int = -1,
    regularize: bool = True,
) -> LocalCovariance:
    sigma = weighted_covariance(space.rows([x])[0], space.rows(members), k_weight, regularize)
    return LocalCovariance(sigma, class_id, x, len(members), float(k_weight))


def _as_array(s) -> np.ndarray:
    return s.sigma if isinstance(s, LocalCovariance) else np.asarray(s, dtype=np.float64)


def _logdet(sigma: np.ndarray) -> np.ndarray:
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise NumericDegeneracyError("covariance is not positive definite") from None
    return 2.0 * np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(axis=-1)


def coefficient_exponent(sigma_b, sigma_a) -> np.ndarray:
    """Log of ``2^(D/2) |Sb|^(1/4) |Sa|^(1/4) / |Sb + Sa|^(1/2)``.

    The ``2^(D/2)`` factor is folded into the determinant of the averaged
    covariance, so identical inputs cancel exactly instead of leaving a
    rounding residue that the square root in :func:`hellinger` would blow
    up to ~1e-8.  Broadcasts over leading batch dimensions.
    """
    sb, sa = _as_array(sigma_b), _as_array(sigma_a)
    if sb.shape != sa.shape or sb.shape[-1] != sb.shape[-2]:
        raise ValueError("covariances must be square with matching shapes")
    return 0.25 * _logdet(sb) + 0.25 * _logdet(sa) - 0.5 * _logdet(0.5 * (sb + sa))


def bhattacharyya_coefficient(sigma_b, sigma_a):
    """Overlap of the zero-mean Gaussians, clipped to [0, 1]."""
    return np.clip(np.exp(coefficient_exponent(sigma_b, sigma_a)), 0.0, 1.0)


def hellinger(sigma_b, sigma_a):
    """Hellinger distance between N(0, sigma_b) and N(0, sigma_a), in [0, 1]."""
    h = np.sqrt(1.0 - bhattacharyya_coefficient(sigma_b, sigma_a))
    return float(h) if np.ndim(h) == 0 else h


# ---------------------------------------------------------------------------
# Labeled neighbourhoods and class weighting
# ---------------------------------------------------------------------------


def _top_s(count_b: np.ndarray, count_a: np.ndarray, s: int) -> np.ndarray:
    shared = np.flatnonzero((count_b > 0) & (count_a > 0))
    total = count_b[shared] + count_a[shared]
    return shared[np.lexsort((shared, -total))][:s]


def top_s_classes(before_nb: Mapping[int, object], after_nb: Mapping[int, object], s: int) -> tuple[int, ...]:
    """Classes present in both neighbourhoods, most members first (before + after).

    Neighbourhood values may be member lists or counts.  Ties go to the
    lower class index.
    """
    if s < 1:
        raise ValueError("s must be positive")

    def counts(nb):
        size = max(list(before_nb) + list(after_nb), default=-1) + 1
        out = np.zeros(size, dtype=np.int64)
        for c, v in nb.items():
            out[c] = v if isinstance(v, (int, np.integer)) else len(v)
        return out

    return tuple(int(c) for c in _top_s(counts(before_nb), counts(after_nb), s))


def kappa(rho: Sequence[float]) -> np.ndarray:
    """``exp(-rho_y) / sum exp(-rho_y')`` over the supplied classes."""
    rho = np.asarray(rho, dtype=np.float64)
    if rho.size == 0:
        return rho
    w = np.exp(-(rho - rho.min()))
    return w / w.sum()


@dataclass(frozen=True, eq=False)
class _LabeledIndex:
    """Labeled rows of one side, with class codes and id ranks for tie-breaks."""

    ids: tuple[str, ...]
    rows: np.ndarray
    classes: np.ndarray
    ranks: np.ndarray


def _labeled_index(space: FeatureSpace, partition: Partition) -> _LabeledIndex:
    lab = partition.labeled
    if not lab:
        raise ValueError("no labeled samples exist")
    return _LabeledIndex(
        lab,
        space.rows(lab),
        np.array([partition.labels[i] for i in lab], dtype=np.int64),
        id_ranks(lab),
    )


def _nearest_labeled(
    space: FeatureSpace, index: _LabeledIndex, queries: Sequence[str], n_max: int, ordered: bool = True
):
    k = min(n_max, len(index.ids))
    q = space.rows(queries)
    nbr, _ = nearest_rows(q, index.rows, k, index.ranks, ordered=ordered)
    return nbr


def labeled_neighborhood(space: FeatureSpace, x: str, partition: Partition, n_max: int = 300) -> dict[int, list[str]]:
    """The ``n_max`` labeled samples nearest to ``x``, grouped by class.

    Members within a class keep ascending-distance order.
    """
    if n_max < 1:
        raise ValueError("N_max must be positive")
    if partition.is_labeled(x):
        raise ValueError(f"{x!r} is labeled")
    index = _labeled_index(space, partition)
    nbr = _nearest_labeled(space, index, [x], n_max)[0]
    out: dict[int, list[str]] = {}
    for j in nbr:
        out.setdefault(int(index.classes[j]), []).append(index.ids[j])
    return dict(sorted(out.items()))


CHUNK = 128  # samples per vectorized batch; fixed so results never depend on thread count


def _support(cls_b: np.ndarray, cls_a: np.ndarray, num_classes: int, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise top-s shared classes: ``(classes, valid)``, both ``(rows, s)``."""
    rows, m = cls_b.shape[0], num_classes
    offset = (np.arange(rows) * m)[:, None]
    cnt_b = np.bincount((offset + cls_b).ravel(), minlength=rows * m).reshape(rows, m)
    cnt_a = np.bincount((offset + cls_a).ravel(), minlength=rows * m).reshape(rows, m)
    # larger combined count first, then the lower class index
    key = np.where((cnt_b > 0) & (cnt_a > 0), (cnt_b + cnt_a) * m + (m - 1 - np.arange(m)), -1)
    order = np.argsort(-key, axis=1, kind="stable")[:, : min(s, m)]
    return order, np.take_along_axis(key, order, axis=1) >= 0


def _support_covariances(y: np.ndarray, members: np.ndarray, k_weight: float) -> tuple[np.ndarray, np.ndarray]:
    """Regularized covariances for every (sample, support class) pair of a batch.

    ``y`` is ``(rows, N, D)`` and holds each sample's neighbours relative to
    the sample itself, so the sample sits at the origin and enters only
    through the mean.  ``members`` is a ``(rows, s, N)`` mask.  With
    ``W = size + k`` and ``c = sum(y) / W`` the scatter is
    ``sum(y y^T) - W c c^T``.  Returns the covariances and member counts.
    """
    rows, s, _ = members.shape
    d = y.shape[-1]
    sizes = members.sum(axis=-1)
    sums = members.astype(np.float64) @ y
    # the masks are sparse (one class each), so gathering beats a masked product
    second = np.zeros((rows, s, d, d))
    for r, c in zip(*np.nonzero(sizes)):
        part = y[r, members[r, c]]
        second[r, c] = part.T @ part
    total = sizes + k_weight
    mean = sums / np.where(total > 0, total, 1.0)[..., None]
    scatter = second - total[..., None, None] * mean[..., :, None] * mean[..., None, :]
    denom = np.where(total > 1.0, total - 1.0, 1.0)  # undefined pairs are masked by the caller
    sigma = scatter / denom[..., None, None]
    sigma = 0.5 * (sigma + np.swapaxes(sigma, -1, -2))
    eps = np.maximum(RIDGE_REL * np.trace(sigma, axis1=-2, axis2=-1) / d, RIDGE_ABS)
    sigma[..., np.arange(d), np.arange(d)] += eps[..., None]
    return sigma, sizes


def _batch_matrices(
    qb: np.ndarray,
    qa: np.ndarray,
    nbr_b: np.ndarray,
    nbr_a: np.ndarray,
    index_b: _LabeledIndex,
    index_a: _LabeledIndex,
    num_classes: int,
    s: int,
    k_weight: float,
    shared_members: bool,
) -> list[TransformationMatrix]:
    rows = nbr_b.shape[0]
    cls_b, cls_a = index_b.classes[nbr_b], index_a.classes[nbr_a]
    support, valid = _support(cls_b, cls_a, num_classes, s)

    w_b = (cls_b[:, None, :] == support[:, :, None]) & valid[:, :, None]
    if shared_members:
        # the same member set on both sides: before-neighbours also in the after-neighbourhood
        in_a = np.zeros((rows, len(index_a.ids)), dtype=bool)
        in_a[np.arange(rows)[:, None], nbr_a] = True
        w_b &= np.take_along_axis(in_a, nbr_b, axis=1)[:, None, :]
        w_a, pts_a = w_b, index_a.rows[nbr_b]
    else:
        w_a = (cls_a[:, None, :] == support[:, :, None]) & valid[:, :, None]
        pts_a = index_a.rows[nbr_a]
    covs_b, size_b = _support_covariances(index_b.rows[nbr_b] - qb[:, None], w_b, k_weight)
    covs_a, size_a = _support_covariances(pts_a - qa[:, None], w_a, k_weight)
    keep = valid & (size_b + k_weight > 1.0) & (size_a + k_weight > 1.0)

    out = [TransformationMatrix(np.zeros(num_classes), ()) for _ in range(rows)]
    if not np.any(keep):
        return out
    rho = np.zeros(keep.shape)
    rho[keep] = np.sqrt(1.0 - bhattacharyya_coefficient(covs_b[keep], covs_a[keep]))
    low = np.where(keep, rho, np.inf).min(axis=1, keepdims=True)
    w = np.where(keep, np.exp(-(rho - np.where(np.isfinite(low), low, 0.0))), 0.0)
    for r in np.flatnonzero(keep.any(axis=1)):
        kept = support[r][keep[r]]
        diag = np.zeros(num_classes)
        diag[kept] = w[r][keep[r]] / w[r].sum()
        out[r] = TransformationMatrix(
            diag, tuple(int(c) for c in kept), {int(c): float(v) for c, v in zip(kept, rho[r][keep[r]])}
        )
    return out


def transformation_matrices(
    cs: CoSpace,
    partition: Partition,
    s: int = 5,
    n_max: int = 300,
    k_weight: float = 1.0,
    shared_members: bool = False,
    samples: Sequence[str] | None = None,
    threads: int = 1,
) -> dict[str, TransformationMatrix]:
    """Class-weighting matrices for ``samples`` (default: every unlabeled id).

    The labeled pool and its ids must be identical on both sides; both
    neighbourhood searches use the same id-ordered tie-break.
    """
    if n_max < 1:
        raise ValueError("N_max must be positive")
    if k_weight < 0:
        raise ValueError("k_weight must be non-negative")
    samples = list(partition.unlabeled if samples is None else samples)
    for x in samples:
        if partition.is_labeled(x):
            raise ValueError(f"{x!r} is labeled")
    if not samples:
        return {}
    index_b = _labeled_index(cs.before, partition)
    index_a = _labeled_index(cs.after, partition)
    # only neighbourhood membership matters below, not the order within it
    nb_b = _nearest_labeled(cs.before, index_b, samples, n_max, ordered=False)
    nb_a = _nearest_labeled(cs.after, index_a, samples, n_max, ordered=False)
    qb_all = cs.before.rows(samples)
    qa_all = cs.after.rows(samples)
    m = partition.num_classes

    def work(lo):
        hi = min(lo + CHUNK, len(samples))
        return _batch_matrices(
            qb_all[lo:hi], qa_all[lo:hi], nb_b[lo:hi], nb_a[lo:hi],
            index_b, index_a, m, s, k_weight, shared_members,
        )

    starts = range(0, len(samples), CHUNK)
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(lo) for lo in starts]
    mats = [tm for part in parts for tm in part]
    return dict(zip(samples, mats))


def transformation_matrix(
    cs: CoSpace,
    x: str,
    partition: Partition,
    s: int = 5,
    n_max: int = 300,
    k_weight: float = 1.0,
    shared_members: bool = False,
) -> TransformationMatrix:
    return transformation_matrices(cs, partition, s, n_max, k_weight, shared_members, samples=[x])[x]


def dump_diagnostics(mats: Mapping[str, TransformationMatrix], path: str | Path) -> None:
    """One ``sample_id<TAB>class<TAB>rho<TAB>kappa`` line per supported class."""
    lines = []
    for sid, tm in mats.items():
        for c in tm.support:
            lines.append(f"{sid}\t{c}\t{float(tm.rho[c])!r}\t{float(tm.diag[c])!r}\n")
    Path(path).write_text("".join(lines), encoding="utf-8", newline="\n")
