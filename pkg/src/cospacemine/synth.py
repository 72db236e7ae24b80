"""Synthetic drifting feature sequences and the full-vs-ablation comparison.

Each emitted space places every sample at its class centre plus a fixed
per-sample noise vector.  Across iterations the centres move apart
(``separation_schedule``) and the whole space is rotated
(``rotation_schedule``).  A fraction of unlabeled samples are *migrators*:
their centre is a mix of their own class centre and one other class centre,
with the mixing weight redrawn from the noise at every iteration, so they
wander between clusters.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .cospace import FeatureSpace, InMemoryProvider
from .dataset import Partition
from .mining import MiningConfig, MiningResult, run_loop

GroundTruth = Mapping[str, int]


@dataclass(frozen=True)
class DriftScenario:
    num_classes: int = 5
    samples_per_class: int = 200
    dim: int = 15
    labeled_fraction: float = 0.1
    separation_schedule: tuple[float, ...] = (1.0, 1.25, 1.5, 1.75, 2.0, 2.25, 2.5)
    rotation_schedule: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
    noise_sigma: float = 1.0
    outlier_fraction: float = 0.1
    migration_strength: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "separation_schedule", tuple(float(v) for v in self.separation_schedule))
        object.__setattr__(self, "rotation_schedule", tuple(float(v) for v in self.rotation_schedule))
        if len(self.separation_schedule) != len(self.rotation_schedule):
            raise ValueError("separation and rotation schedules must have equal length")
        if not self.separation_schedule:
            raise ValueError("schedules must be non-empty")
        for name in ("labeled_fraction", "outlier_fraction", "migration_strength"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.num_classes < 1 or self.samples_per_class < 1 or self.dim < 1:
            raise ValueError("num_classes, samples_per_class and dim must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if round(self.labeled_fraction * self.samples_per_class) < 1:
            raise ValueError("labeled_fraction gives no labeled sample for some class")

    @property
    def num_spaces(self) -> int:
        return len(self.separation_schedule)

    def replace(self, **changes) -> "DriftScenario":
        d = asdict(self)
        d.update(changes)
        return DriftScenario(**d)


def rotation(dim: int, angle: float) -> np.ndarray:
    """Rotate every consecutive coordinate pair (0,1), (2,3), ... by ``angle``."""
    r = np.eye(dim)
    c, s = np.cos(angle), np.sin(angle)
    for i in range(0, dim - 1, 2):
        r[i, i], r[i, i + 1], r[i + 1, i], r[i + 1, i + 1] = c, -s, s, c
    return r


def generate(scenario: DriftScenario) -> tuple[InMemoryProvider, Partition, dict[str, int]]:
    """Emit the feature sequence, initial partition and true classes."""
    sc = scenario
    rng = np.random.default_rng(sc.seed)
    m, per, d = sc.num_classes, sc.samples_per_class, sc.dim
    n = m * per

    directions = rng.standard_normal((m, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    centers = directions * np.sqrt(d)
    truth_arr = np.repeat(np.arange(m), per)
    perm = rng.permutation(n)
    ids = tuple(f"s{i:05d}" for i in range(n))
    truth_arr = truth_arr[perm]
    noise = rng.standard_normal((n, d))

    n_lab = int(round(sc.labeled_fraction * per))
    labeled = np.zeros(n, dtype=bool)
    for c in range(m):
        members = np.flatnonzero(truth_arr == c)
        labeled[rng.choice(members, size=n_lab, replace=False)] = True

    pool = np.flatnonzero(~labeled)
    n_mig = int(round(sc.outlier_fraction * pool.size))
    migrators = np.sort(rng.choice(pool, size=n_mig, replace=False)) if n_mig else np.array([], dtype=int)
    targets = (truth_arr[migrators] + rng.integers(1, m, size=n_mig)) % m if m > 1 else truth_arr[migrators]

    spaces = []
    for sep, angle in zip(sc.separation_schedule, sc.rotation_schedule):
        mix = np.zeros(n)
        # a fresh half-normal draw per iteration, so zero noise freezes them too
        mix[migrators] = sc.migration_strength * np.minimum(sc.noise_sigma * np.abs(rng.standard_normal(n_mig)), 1.0)
        where = centers[truth_arr]
        if n_mig:
            where = where.copy()
            where[migrators] = (1.0 - mix[migrators, None]) * centers[truth_arr[migrators]] + mix[
                migrators, None
            ] * centers[targets]
        x = sep * where + sc.noise_sigma * noise
        spaces.append(FeatureSpace(ids, x @ rotation(d, angle).T))

    truth = {sid: int(c) for sid, c in zip(ids, truth_arr)}
    partition = Partition(ids, {ids[i]: int(truth_arr[i]) for i in np.flatnonzero(labeled)}, m)
    return InMemoryProvider(spaces), partition, truth


def class_mean_distances(space: FeatureSpace, truth: GroundTruth, num_classes: int) -> np.ndarray:
    """Pairwise distances between class means, upper triangle, row-major."""
    cls = np.array([truth[i] for i in space.ids])
    means = np.stack([space.vectors[cls == c].mean(axis=0) for c in range(num_classes)])
    iu = np.triu_indices(num_classes, 1)
    return np.linalg.norm(means[:, None] - means[None], axis=-1)[iu]


def evaluate(results: Iterable[MiningResult], truth: GroundTruth) -> list[float | None]:
    """Fraction of each iteration's selections whose pseudo-label is correct."""
    out = []
    for r in results:
        if not r.selections:
            out.append(None)
            continue
        hits = 0
        for c in r.selections:
            if c.sample not in truth:
                raise KeyError(f"no ground truth for {c.sample!r}")
            hits += truth[c.sample] == c.pseudo_label
        out.append(hits / len(r.selections))
    return out


@dataclass
class Comparison:
    """Per-iteration paired accuracies and selection counts of the two criteria."""

    criteria: tuple[str, ...]
    accuracy: dict[str, list[float | None]] = field(default_factory=dict)
    counts: dict[str, list[int]] = field(default_factory=dict)
    results: dict[str, list[MiningResult]] = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return max((len(v) for v in self.counts.values()), default=0)

    def rows(self) -> list[dict]:
        rows = []
        for t in range(self.iterations):
            row = {"iteration": t + 1}
            for crit in ("full", "ablation"):
                acc = self.accuracy.get(crit, [])
                cnt = self.counts.get(crit, [])
                row[f"acc_{crit}"] = acc[t] if t < len(acc) else None
                row[f"count_{crit}"] = cnt[t] if t < len(cnt) else None
            rows.append(row)
        return rows


def compare_criteria(
    scenario: DriftScenario,
    cfg: MiningConfig,
    criteria: Sequence[str] = ("full", "ablation"),
) -> Comparison:
    """Run the mining loop once per criterion on the same generated data."""
    provider, partition, truth = generate(scenario)
    cmp = Comparison(tuple(criteria))
    for crit in criteria:
        results, _ = run_loop(provider, partition, cfg.replace(criterion=crit), criterion=crit)
        cmp.results[crit] = results
        cmp.accuracy[crit] = evaluate(results, truth)
        cmp.counts[crit] = [len(r) for r in results]
    return cmp


COMPARISON_COLUMNS = ("iteration", "acc_full", "acc_ablation", "count_full", "count_ablation")


def _cell(v) -> str:
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_comparison_csv(cmp: Comparison, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARISON_COLUMNS)
        for row in cmp.rows():
            w.writerow([_cell(row[c]) for c in COMPARISON_COLUMNS])


def write_gnuplot_data(cmp: Comparison, path: str | Path) -> None:
    """Whitespace-separated columns with ``NaN`` for missing values."""
    lines = ["# " + " ".join(COMPARISON_COLUMNS)]
    for row in cmp.rows():
        lines.append(" ".join("NaN" if row[c] is None else _cell(row[c]) for c in COMPARISON_COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Scenario files: ``key = value`` lines; ``mining.<field>`` keys override the
# mining configuration.
# ---------------------------------------------------------------------------


def _coerce(value: str, kind):
    value = value.strip()
    if kind is bool:
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if kind in ("float | None", "Optional[float]"):
        return None if value.lower() in ("", "none") else float(value)
    if kind == "tuple[float, ...]":
        return tuple(float(v) for v in value.split(",") if v.strip())
    if kind in (int, "int"):
        return int(value)
    if kind in (float, "float"):
        return float(value)
    if kind in ("bool",):
        return _coerce(value, bool)
    return value


def parse_scenario_text(text: str) -> tuple[DriftScenario, dict]:
    scen_types = {f.name: f.type for f in fields(DriftScenario)}
    mining_types = {f.name: f.type for f in fields(MiningConfig)}
    scen, mining = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key.startswith("mining."):
            name = key[len("mining.") :]
            if name not in mining_types:
                raise ValueError(f"line {lineno}: unknown mining key {name!r}")
            mining[name] = _coerce(value, mining_types[name])
        elif key in scen_types:
            scen[key] = _coerce(value, scen_types[key])
        else:
            raise ValueError(f"line {lineno}: unknown scenario key {key!r}")
    return DriftScenario(**scen), mining


def load_scenario(path: str | Path | None = None) -> tuple[DriftScenario, dict]:
    """Read a scenario file; ``None`` loads the packaged default."""
    if path is None:
        text = resources.files("cospacemine").joinpath("data/default_scenario.cfg").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_scenario_text(text)


def scenario_text(scenario: DriftScenario, mining: Mapping | None = None) -> str:
    lines = []
    for k, v in asdict(scenario).items():
        lines.append(f"{k} = {', '.join(repr(x) for x in v) if isinstance(v, tuple) else v}")
    for k, v in (mining or {}).items():
        lines.append(f"mining.{k} = {'none' if v is None else v}")
    return "\n".join(lines) + "\n"
