"""Feature spaces, Co-Space pairs, feature providers and dimensionality reduction.

A :class:`FeatureSpace` is one embedding of the sample set (one row per sample
id).  A :class:`CoSpace` pairs the embeddings produced before and after one
model update, aligned by sample id.
"""

from __future__ import annotations

import abc
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

REDUCE_METHODS = ("pca", "random-projection", "identity")


class RankDeficiencyWarning(UserWarning):
    """PCA found fewer informative directions than requested."""


@dataclass(frozen=True, eq=False)
class FeatureSpace:
    """Immutable ``n x D`` embedding keyed by sample id."""

    ids: tuple[str, ...]
    vectors: np.ndarray

    def __post_init__(self):
        ids = tuple(self.ids)
        vectors = np.array(self.vectors, dtype=np.float64, copy=True)
        if vectors.ndim != 2:
            raise ValueError(f"vectors must be 2-D, got shape {vectors.shape}")
        if len(ids) != vectors.shape[0]:
            raise ValueError(f"{len(ids)} ids for {vectors.shape[0]} rows")
        if any(not isinstance(i, str) or not i for i in ids):
            raise ValueError("sample ids must be non-empty strings")
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate sample id in feature space")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("feature vectors contain non-finite values")
        vectors.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "vectors", vectors)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @cached_property
    def index(self) -> dict[str, int]:
        return {sid: i for i, sid in enumerate(self.ids)}

    def rows(self, ids: Iterable[str]) -> np.ndarray:
        idx = [self.index[i] for i in ids]
        return self.vectors[idx]

    def reorder(self, ids: Sequence[str]) -> "FeatureSpace":
        """Return the same space with rows in the order of ``ids``."""
        if tuple(ids) == self.ids:
            return self
        if len(ids) != self.n or set(ids) != set(self.ids):
            raise ValueError("reorder requires exactly the same id set")
        return FeatureSpace(tuple(ids), self.rows(ids))

    def scaled(self, c: float) -> "FeatureSpace":
        return FeatureSpace(self.ids, self.vectors * c)

    def __eq__(self, other):
        if not isinstance(other, FeatureSpace):
            return NotImplemented
        return self.ids == other.ids and np.array_equal(self.vectors, other.vectors)

    __hash__ = None

    def __repr__(self):
        return f"FeatureSpace(n={self.n}, dim={self.dim})"


@dataclass(frozen=True)
class CoSpace:
    """Feature spaces before and after one transformation, rows aligned by id."""

    before: FeatureSpace
    after: FeatureSpace

    def __post_init__(self):
        if self.before.ids != self.after.ids:
            raise ValueError("CoSpace sides must share the same id order; use make_cospace")

    @property
    def ids(self) -> tuple[str, ...]:
        return self.before.ids

    @property
    def n(self) -> int:
        return self.before.n


def make_cospace(before: FeatureSpace, after: FeatureSpace) -> CoSpace:
    """Pair two spaces by sample id, re-ordering ``after`` to ``before``'s order."""
    if set(before.ids) != set(after.ids):
        missing = set(before.ids) ^ set(after.ids)
        sample = sorted(missing)[:5]
        raise ValueError(f"Co-Space id sets differ ({len(missing)} ids, e.g. {sample})")
    return CoSpace(before, after.reorder(before.ids))


# ---------------------------------------------------------------------------
# Dimensionality reduction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PCAModel:
    mean: np.ndarray
    components: np.ndarray  # (target_dim, D); zero rows for padded components
    explained_variance: np.ndarray
    total_variance: float

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        if self.total_variance == 0.0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / self.total_variance

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) @ self.components.T


def fix_signs(components: np.ndarray) -> np.ndarray:
    """Flip each row so that its largest-magnitude coordinate is positive.

    Ties in magnitude resolve to the lowest coordinate index.
    """
    components = np.array(components, dtype=np.float64, copy=True)
    for row in components:
        if not np.any(row):
            continue
        pivot = int(np.argmax(np.abs(row)))
        if row[pivot] < 0:
            row *= -1.0
    return components


def pca_fit(x: np.ndarray, target_dim: int) -> PCAModel:
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if target_dim > d:
        raise ValueError(f"target_dim {target_dim} exceeds feature dimension {d}")
    if n < 2:
        raise ValueError("PCA needs at least two samples")
    mean = x.mean(axis=0)
    centered = x - mean
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    variances = svals**2 / (n - 1)
    total = float(variances.sum())
    tol = max(n, d) * np.finfo(np.float64).eps * (svals[0] if svals.size else 0.0)
    rank = int(np.sum(svals > tol))
    keep = min(target_dim, rank)
    components = np.zeros((target_dim, d))
    components[:keep] = fix_signs(vt[:keep])
    explained = np.zeros(target_dim)
    explained[:keep] = variances[:keep]
    if keep < target_dim:
        warnings.warn(
            f"PCA rank {rank} < target_dim {target_dim}; padding with zero components",
            RankDeficiencyWarning,
            stacklevel=3,
        )
    return PCAModel(mean, components, explained, total)


def _random_projection(x: np.ndarray, target_dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    proj = rng.standard_normal((x.shape[1], target_dim)) / np.sqrt(target_dim)
    return x @ proj


def reduce(space: FeatureSpace, target_dim: int, method: str = "pca", seed: int = 0) -> FeatureSpace:
    """Reduce ``space`` to ``target_dim`` columns.

    ``identity`` returns the input unchanged and therefore requires
    ``target_dim == space.dim``.
    """
    if method not in REDUCE_METHODS:
        raise ValueError(f"unknown reduce method {method!r}; expected one of {REDUCE_METHODS}")
    if target_dim < 1:
        raise ValueError("target_dim must be positive")
    if target_dim > space.dim:
        raise ValueError(f"target_dim {target_dim} exceeds feature dimension {space.dim}")
    if method == "identity":
        if target_dim != space.dim:
            raise ValueError("identity reduction requires target_dim == dim")
        return space
    if method == "pca":
        model = pca_fit(space.vectors, target_dim)
        return FeatureSpace(space.ids, model.transform(space.vectors))
    return FeatureSpace(space.ids, _random_projection(space.vectors, target_dim, seed))


def reduce_cospace(cs: CoSpace, target_dim: int, method: str = "pca", seed: int = 0) -> CoSpace:
    """Reduce each side of the Co-Space independently (each fitted on itself)."""
    if method == "identity" and cs.before.dim == cs.after.dim:
        target_dim = cs.before.dim
    for side in (cs.before, cs.after):
        if target_dim > side.dim:
            raise ValueError(f"target_dim {target_dim} exceeds side dimension {side.dim}")
    return CoSpace(
        reduce(cs.before, target_dim, method, seed),
        reduce(cs.after, target_dim, method, seed),
    )


# ---------------------------------------------------------------------------
# Feature providers
# ---------------------------------------------------------------------------


class FeatureProvider(abc.ABC):
    """Source of successive embeddings ``f_0(D), f_1(D), ...`` of one sample set."""

    @abc.abstractmethod
    def __iter__(self) -> Iterator[FeatureSpace]:
        ...


@dataclass(frozen=True)
class InMemoryProvider(FeatureProvider):
    spaces: tuple[FeatureSpace, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "spaces", tuple(self.spaces))

    def __iter__(self):
        return iter(self.spaces)

    def __len__(self):
        return len(self.spaces)


class FileSequenceProvider(FeatureProvider):
    """Reads a manifest listing one feature-file path per iteration.

    Relative paths resolve against the manifest's directory; blank lines and
    ``#`` comments are skipped.  Files are loaded lazily, in order.
    """

    def __init__(self, manifest: str | Path):
        self.manifest = Path(manifest)
        base = self.manifest.parent
        paths = []
        for line in self.manifest.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            p = Path(line)
            paths.append(p if p.is_absolute() else base / p)
        self.paths = paths

    def __iter__(self):
        from .dataset import load_features

        for p in self.paths:
            yield load_features(p)

    def __len__(self):
        return len(self.paths)
