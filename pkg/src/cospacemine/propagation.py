"""Clamped label propagation and its two-sided Co-Space run."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cospace import CoSpace
from .dataset import Partition
from .graph import TransitionMatrix, transition_from_space

UNREACHED_MASS = 1e-12


@dataclass(frozen=True, eq=False)
class SoftLabelMatrix:
    """Propagated label mass for every sample (labeled rows are clamped one-hots)."""

    ids: tuple[str, ...]
    values: np.ndarray
    labeled: np.ndarray
    iterations_run: int

    @property
    def num_classes(self) -> int:
        return self.values.shape[1]

    def row(self, sid: str) -> np.ndarray:
        return self.values[self.ids.index(sid)]

    @property
    def reached(self) -> np.ndarray:
        return self.values.sum(axis=1) >= UNREACHED_MASS

    def normalized(self) -> np.ndarray:
        """Rows rescaled to sum 1; unreached rows stay zero."""
        mass = self.values.sum(axis=1, keepdims=True)
        out = np.zeros_like(self.values)
        ok = mass[:, 0] >= UNREACHED_MASS
        out[ok] = self.values[ok] / mass[ok]
        return out


def propagate(
    tm: TransitionMatrix,
    partition: Partition,
    T: int = 50,
    tol: float | None = None,
) -> SoftLabelMatrix:
    """Run ``Y <- P Y`` then reset labeled rows, ``T`` times, from ``Y0 = [Y_L; 0]``.

    With ``tol`` set, stops early once the largest elementwise change drops
    below it.
    """
    if T < 1:
        raise ValueError("T must be positive")
    if len(tm.ids) != len(partition.ids) or set(tm.ids) != set(partition.ids):
        raise ValueError("transition matrix and partition cover different sample sets")
    y_l = partition.label_matrix(tm.ids)
    lab = np.array([partition.is_labeled(i) for i in tm.ids], dtype=bool)
    clamp = y_l[lab]
    y = y_l.copy()
    p = tm.matrix
    run = 0
    for _ in range(T):
        nxt = p @ y
        nxt[lab] = clamp
        run += 1
        if tol is not None and np.max(np.abs(nxt - y), initial=0.0) < tol:
            y = nxt
            break
        y = nxt
    y.setflags(write=False)
    return SoftLabelMatrix(tm.ids, y, lab, run)


def intrinsic_variation(
    cs: CoSpace,
    partition: Partition,
    K: int = 10,
    mu: float = 1.0,
    delta: float = 0.9,
    T: int = 50,
    tol: float | None = None,
    threads: int = 1,
) -> tuple[SoftLabelMatrix, SoftLabelMatrix]:
    """Propagate the same clamped labels over the graph of each Co-Space side."""
    if cs.before.dim != cs.after.dim:
        raise ValueError("Co-Space sides must be reduced to the same dimension")

    def side(space):
        return propagate(transition_from_space(space, K, mu, delta), partition, T, tol)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            fb, fa = pool.submit(side, cs.before), pool.submit(side, cs.after)
            return fb.result(), fa.result()
    return side(cs.before), side(cs.after)


def dump_soft_labels(soft: SoftLabelMatrix, path: str | Path) -> None:
    lines = ["\t".join([sid, *(repr(float(v)) for v in row)]) + "\n" for sid, row in zip(soft.ids, soft.values)]
    Path(path).write_text("".join(lines), encoding="utf-8", newline="\n")
