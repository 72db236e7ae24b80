"""Confidence scoring, selection and the iterative mining loop."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .cospace import REDUCE_METHODS, CoSpace, FeatureProvider, make_cospace, reduce_cospace
from .dataset import Partition, augment
from .propagation import intrinsic_variation
from .variation import TransformationMatrix, transformation_matrices

log = logging.getLogger(__name__)

CRITERIA = ("full", "ablation")


class UnminableError(ValueError):
    """The sample cannot be scored this iteration."""


@dataclass(frozen=True, eq=False)
class Confidence:
    sample: str
    score: float
    contribution: np.ndarray
    pseudo_label: int
    criterion: str = "full"

    def __eq__(self, other):
        if not isinstance(other, Confidence):
            return NotImplemented
        return (
            self.sample == other.sample
            and self.score == other.score
            and self.pseudo_label == other.pseudo_label
            and self.criterion == other.criterion
            and np.array_equal(self.contribution, other.contribution)
        )

    __hash__ = None


@dataclass(frozen=True)
class MiningResult:
    selections: tuple[Confidence, ...]
    iteration: int
    threshold_used: float
    cap_used: int
    scored_count: int = 0
    unminable_count: int = 0

    def __len__(self):
        return len(self.selections)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(c.sample for c in self.selections)

    @property
    def labels(self) -> dict[str, int]:
        return {c.sample: c.pseudo_label for c in self.selections}

    @property
    def mean_confidence(self) -> float | None:
        if not self.selections:
            return None
        return float(np.mean([c.score for c in self.selections]))


@dataclass(frozen=True)
class MiningConfig:
    """Hyper-parameters of one mining run.

    ``knn`` is the graph degree, ``delta`` scales the per-sample kernel width,
    ``lp_iters`` the propagation steps, ``labeled_neighbors`` and ``top_s``
    bound the class-weighting neighbourhood, ``cap`` the selections per
    iteration.
    """

    knn: int = 10
    mu: float = 1.0
    delta: float = 0.9
    lp_iters: int = 50
    lp_tol: float | None = None
    labeled_neighbors: int = 300
    top_s: int = 5
    k_weight: float = 1.0
    reduce_dim: int = 15
    reduce_method: str = "pca"
    threshold: float = 0.7
    cap: int = 1000
    max_iterations: int = 10
    seed: int = 0
    criterion: str = "full"
    shared_members: bool = False
    threads: int = 1

    def __post_init__(self):
        for name in ("knn", "lp_iters", "labeled_neighbors", "top_s", "reduce_dim", "cap", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("mu", "delta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.k_weight < 0:
            raise ValueError("k_weight must be non-negative")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")
        if self.reduce_method not in REDUCE_METHODS:
            raise ValueError(f"reduce_method must be one of {REDUCE_METHODS}")
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}")

    def replace(self, **changes) -> "MiningConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MiningConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


def _diag(m) -> np.ndarray:
    if isinstance(m, TransformationMatrix):
        return m.diag
    m = np.asarray(m, dtype=np.float64)
    return np.diagonal(m).copy() if m.ndim == 2 else m


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if not norm > 0:
        raise UnminableError("zero vector after class weighting")
    return v / norm


def _score(r_b: np.ndarray, r_a: np.ndarray, sample: str, criterion: str) -> Confidence:
    v = r_b * r_a
    score = float(min(max(v.sum(), 0.0), 1.0))
    return Confidence(sample, score, v, int(np.argmax(v)), criterion)


def confidence(y_b, y_a, M, sample: str = "") -> Confidence:
    """Cosine of the two soft labels after reweighting each by ``sqrt(M)``.

    The pseudo-label is the largest entry of the elementwise product of the
    two reweighted unit vectors (ties to the lower class).
    """
    w = np.sqrt(_diag(M))
    if not np.any(w > 0):
        raise UnminableError("empty class support")
    # the score ignores the scale of M; dividing it out makes c*I match the plain cosine bit for bit
    w = w / w.max()
    r_b = _unit(w * np.asarray(y_b, dtype=np.float64))
    r_a = _unit(w * np.asarray(y_a, dtype=np.float64))
    return _score(r_b, r_a, sample, "full")


def confidence_ablation(y_b, y_a, sample: str = "") -> Confidence:
    """Plain cosine of the soft labels; the contribution vector is the
    product of the two unit vectors."""
    r_b = _unit(np.asarray(y_b, dtype=np.float64))
    r_a = _unit(np.asarray(y_a, dtype=np.float64))
    return _score(r_b, r_a, sample, "ablation")


def select(
    scores: Iterable[Confidence],
    threshold: float,
    cap: int,
    excluded: Iterable[str] = (),
    iteration: int = 0,
) -> MiningResult:
    """Keep scores ``>= threshold`` not in ``excluded``, best first, at most ``cap``."""
    if cap < 1:
        raise ValueError("cap must be positive")
    excluded = set(excluded)
    scores = list(scores)
    ids = [c.sample for c in scores]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate sample in scores")
    keep = [c for c in scores if c.score >= threshold and c.sample not in excluded]
    keep.sort(key=lambda c: (-c.score, c.sample))
    return MiningResult(tuple(keep[:cap]), iteration, float(threshold), int(cap), scored_count=len(scores))


# ---------------------------------------------------------------------------
# Iteration and loop
# ---------------------------------------------------------------------------


def score_samples(
    cs: CoSpace,
    partition: Partition,
    cfg: MiningConfig,
    excluded: Iterable[str] = (),
    criterion: str | None = None,
) -> tuple[list[Confidence], int]:
    """Score every minable unlabeled sample of an already reduced Co-Space.

    Returns the scores and the number of candidates skipped as unminable.
    """
    criterion = criterion or cfg.criterion
    excluded = set(excluded)
    candidates = [i for i in partition.unlabeled if i not in excluded]
    if not candidates:
        return [], 0
    if not partition.labeled:
        return [], len(candidates)
    soft_b, soft_a = intrinsic_variation(
        cs, partition, cfg.knn, cfg.mu, cfg.delta, cfg.lp_iters, cfg.lp_tol, cfg.threads
    )
    row = {sid: r for r, sid in enumerate(soft_b.ids)}
    yb, ya = soft_b.normalized(), soft_a.normalized()
    reached = soft_b.reached & soft_a.reached
    minable = [i for i in candidates if reached[row[i]]]
    unminable = len(candidates) - len(minable)

    mats = {}
    if criterion == "full" and minable:
        mats = transformation_matrices(
            cs, partition, cfg.top_s, cfg.labeled_neighbors, cfg.k_weight,
            cfg.shared_members, samples=minable, threads=cfg.threads,
        )
    scores = []
    for sid in minable:
        r = row[sid]
        try:
            if criterion == "full":
                scores.append(confidence(yb[r], ya[r], mats[sid], sid))
            else:
                scores.append(confidence_ablation(yb[r], ya[r], sid))
        except UnminableError:
            unminable += 1
    return scores, unminable


def mine_iteration(
    cs: CoSpace,
    partition: Partition,
    cfg: MiningConfig,
    excluded: Iterable[str] = (),
    iteration: int = 1,
    criterion: str | None = None,
) -> MiningResult:
    """Reduce, propagate on both sides, weight classes, score and select."""
    if set(cs.ids) != set(partition.ids):
        raise ValueError("Co-Space and partition cover different sample sets")
    if not partition.unlabeled:
        return MiningResult((), iteration, cfg.threshold, cfg.cap)
    reduced = reduce_cospace(cs, cfg.reduce_dim, cfg.reduce_method, cfg.seed)
    scores, unminable = score_samples(reduced, partition, cfg, excluded, criterion)
    result = select(scores, cfg.threshold, cfg.cap, excluded, iteration)
    if unminable:
        log.info("iteration %d: %d unlabeled samples unminable", iteration, unminable)
    return replace(result, unminable_count=unminable)


def run_loop(
    provider: FeatureProvider | Sequence,
    initial: Partition,
    cfg: MiningConfig,
    criterion: str | None = None,
    callback: Callable[[MiningResult, Partition], None] | None = None,
) -> tuple[list[MiningResult], Partition]:
    """Mine consecutive Co-Spaces of ``provider`` until exhausted or
    ``cfg.max_iterations`` is reached, growing the labeled pool each time."""
    results: list[MiningResult] = []
    partition = initial
    selected: set[str] = set()
    if cfg.max_iterations == 0:
        return results, partition
    spaces = iter(provider)
    prev = next(spaces, None)
    if prev is None:
        return results, partition
    ids = set(initial.ids)
    for t, cur in enumerate(spaces, start=1):
        if set(cur.ids) != ids or set(prev.ids) != ids:
            raise ValueError(f"provider space {t} does not cover the partition's sample set")
        cs = make_cospace(prev, cur)
        result = mine_iteration(cs, partition, cfg, selected, t, criterion)
        partition = augment(partition, result)
        selected.update(result.ids)
        results.append(result)
        log.info(
            "iteration %d: selected %d, labeled pool %d", t, len(result), len(partition.labeled)
        )
        if callback is not None:
            callback(result, partition)
        if t >= cfg.max_iterations:
            break
        prev = cur
    return results, partition
