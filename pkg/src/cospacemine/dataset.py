"""Sample bookkeeping: labeled/unlabeled partitions and the text file formats.

Feature file::

    #cospace-features v1 n=<n> d=<d>
    sample_id<TAB>f1<TAB>...<TAB>fd

Label file: ``sample_id<TAB>class_index`` (0-based).
Pseudo-label file: ``sample_id<TAB>class_index<TAB>confidence<TAB>iteration``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

from .cospace import FeatureSpace

FEATURE_HEADER_RE = re.compile(r"^#cospace-features v1 n=(\d+) d=(\d+)$")


class DataFormatError(ValueError):
    """Malformed or inconsistent input file."""


@dataclass(frozen=True)
class PseudoLabel:
    """Provenance of a label assigned by the miner, not by ground truth."""

    iteration: int
    confidence: float


@dataclass(frozen=True, eq=False)
class Partition:
    """Labeled and unlabeled pools over a fixed, ordered sample set.

    ``labels`` maps each labeled id to its hard class index; ``provenance``
    marks the subset of labeled ids whose label came from mining.
    """

    ids: tuple[str, ...]
    labels: Mapping[str, int]
    num_classes: int
    provenance: Mapping[str, PseudoLabel] = field(default_factory=dict)

    def __post_init__(self):
        ids = tuple(self.ids)
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate sample id in partition")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        known = set(ids)
        labels = dict(self.labels)
        for sid, c in labels.items():
            if sid not in known:
                raise DataFormatError(f"label for unknown sample id {sid!r}")
            if not 0 <= c < self.num_classes:
                raise DataFormatError(f"class index {c} out of range for {sid!r} (m={self.num_classes})")
        provenance = dict(self.provenance)
        if not set(provenance) <= set(labels):
            raise ValueError("provenance given for unlabeled ids")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "labels", MappingProxyType(labels))
        object.__setattr__(self, "provenance", MappingProxyType(provenance))

    @cached_property
    def labeled(self) -> tuple[str, ...]:
        return tuple(i for i in self.ids if i in self.labels)

    @cached_property
    def unlabeled(self) -> tuple[str, ...]:
        return tuple(i for i in self.ids if i not in self.labels)

    def is_labeled(self, sid: str) -> bool:
        return sid in self.labels

    def label_vector(self, sid: str) -> np.ndarray:
        y = np.zeros(self.num_classes)
        y[self.labels[sid]] = 1.0
        return y

    def label_matrix(self, ids: Iterable[str]) -> np.ndarray:
        """One-hot rows for labeled ids, zero rows for the rest."""
        ids = list(ids)
        y = np.zeros((len(ids), self.num_classes))
        for r, sid in enumerate(ids):
            c = self.labels.get(sid)
            if c is not None:
                y[r, c] = 1.0
        return y

    def ground_truth_ids(self) -> tuple[str, ...]:
        return tuple(i for i in self.labeled if i not in self.provenance)

    def reorder(self, ids) -> "Partition":
        if set(ids) != set(self.ids) or len(ids) != len(self.ids):
            raise ValueError("reorder requires the same id set")
        return Partition(tuple(ids), self.labels, self.num_classes, self.provenance)

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return (
            self.ids == other.ids
            and dict(self.labels) == dict(other.labels)
            and self.num_classes == other.num_classes
            and dict(self.provenance) == dict(other.provenance)
        )

    __hash__ = None

    def __repr__(self):
        return (
            f"Partition(n={len(self.ids)}, labeled={len(self.labeled)}, "
            f"unlabeled={len(self.unlabeled)}, m={self.num_classes})"
        )


def make_partition(ids: Iterable[str], labels: Mapping[str, int], num_classes: int) -> Partition:
    return Partition(tuple(ids), labels, num_classes)


def augment(partition: Partition, selections) -> Partition:
    """Move selected samples into the labeled pool with their pseudo-labels.

    ``selections`` is a MiningResult (or any iterable of objects with
    ``sample``, ``pseudo_label`` and ``score``); the iteration recorded in the
    provenance comes from ``selections.iteration`` when present.
    """
    iteration = getattr(selections, "iteration", 0)
    items = getattr(selections, "selections", selections)
    labels = dict(partition.labels)
    provenance = dict(partition.provenance)
    for conf in items:
        sid = conf.sample
        if sid in labels:
            raise ValueError(f"selected sample {sid!r} is already labeled")
        if sid not in partition.ids:
            raise ValueError(f"selected sample {sid!r} is not in the partition")
        labels[sid] = int(conf.pseudo_label)
        provenance[sid] = PseudoLabel(iteration, float(conf.score))
    if len(labels) == len(partition.labels):
        return partition
    return Partition(partition.ids, labels, partition.num_classes, provenance)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def _format_float(x: float) -> str:
    return repr(float(x))


def load_features(path: str | Path) -> FeatureSpace:
    path = Path(path)
    with open(path, encoding="utf-8", newline="\n") as fh:
        header = fh.readline().rstrip("\n")
        m = FEATURE_HEADER_RE.match(header)
        if m is None:
            raise DataFormatError(f"{path}: malformed header {header!r}")
        n, d = int(m.group(1)), int(m.group(2))
        ids: list[str] = []
        seen: set[str] = set()
        rows = np.empty((n, d))
        lineno = 1
        for line in fh:
            lineno += 1
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            sid = parts[0]
            if not sid:
                raise DataFormatError(f"{path}:{lineno}: empty sample id")
            if len(parts) - 1 != d:
                raise DataFormatError(f"{path}:{lineno}: expected {d} values, got {len(parts) - 1}")
            if sid in seen:
                raise DataFormatError(f"{path}:{lineno}: duplicate sample id {sid!r}")
            if len(ids) >= n:
                raise DataFormatError(f"{path}: more than n={n} rows")
            try:
                values = [float(tok) for tok in parts[1:]]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in values):
                raise DataFormatError(f"{path}:{lineno}: non-finite value")
            rows[len(ids)] = values
            ids.append(sid)
            seen.add(sid)
    if len(ids) != n:
        raise DataFormatError(f"{path}: header says n={n}, found {len(ids)} rows")
    return FeatureSpace(tuple(ids), rows)


def write_features(space: FeatureSpace, path: str | Path) -> None:
    lines = [f"#cospace-features v1 n={space.n} d={space.dim}"]
    for sid, row in zip(space.ids, space.vectors):
        lines.append("\t".join([sid, *(_format_float(v) for v in row)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_labels(path: str | Path, num_classes: int) -> dict[str, int]:
    """Read a label file into ``{sample_id: class_index}``."""
    if num_classes < 1:
        raise ValueError("num_classes must be positive")
    path = Path(path)
    labels: dict[str, int] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0]:
            raise DataFormatError(f"{path}:{lineno}: expected 'sample_id<TAB>class_index'")
        sid, tok = parts
        try:
            c = int(tok)
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: bad class index {tok!r}") from None
        if not 0 <= c < num_classes:
            raise DataFormatError(f"{path}:{lineno}: class index {c} out of range [0, {num_classes})")
        if sid in labels:
            raise DataFormatError(f"{path}:{lineno}: duplicate sample id {sid!r}")
        labels[sid] = c
    return labels


def write_labels(labels: Mapping[str, int], path: str | Path, ids: Iterable[str] | None = None) -> None:
    order = list(ids) if ids is not None else list(labels)
    text = "".join(f"{sid}\t{labels[sid]}\n" for sid in order if sid in labels)
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def write_pseudo_labels(result, path: str | Path) -> None:
    iteration = result.iteration
    text = "".join(
        f"{c.sample}\t{c.pseudo_label}\t{_format_float(c.score)}\t{iteration}\n" for c in result.selections
    )
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def read_pseudo_labels(path: str | Path) -> list[tuple[str, int, float, int]]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataFormatError(f"{path}:{lineno}: expected 4 tab-separated fields")
        sid, c, conf, it = parts
        out.append((sid, int(c), float(conf), int(it)))
    return out
