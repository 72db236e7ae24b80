"""Command-line entry point.

Machine-readable outputs go to files in ``--out``; logging goes to stderr.
Exit status is 0 on success, 1 on a runtime or data error and 2 on a
configuration error (bad flag values, missing input files, bad manifests).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__
from .cospace import REDUCE_METHODS, FileSequenceProvider, make_cospace, reduce, reduce_cospace
from .dataset import (
    DataFormatError,
    Partition,
    load_features,
    load_labels,
    read_pseudo_labels,
    write_pseudo_labels,
)
from .graph import dump_transition, transition_from_space
from .mining import MiningConfig, run_loop
from .propagation import dump_soft_labels, intrinsic_variation
from .synth import compare_criteria, load_scenario, scenario_text, write_comparison_csv, write_gnuplot_data
from .variation import dump_diagnostics, transformation_matrices

log = logging.getLogger("cospacemine")

MANIFEST_NAME = "run_manifest.json"
METRICS_COLUMNS = ("iteration", "selected_count", "mean_confidence", "labeled_pool_size")


class ConfigError(Exception):
    """Bad invocation: exit status 2."""


# flag name, MiningConfig field, type
_CONFIG_FLAGS = (
    ("--knn", "knn", int),
    ("--mu", "mu", float),
    ("--delta", "delta", float),
    ("--lp-iters", "lp_iters", int),
    ("--lp-tol", "lp_tol", float),
    ("--labeled-neighbors", "labeled_neighbors", int),
    ("--top-s", "top_s", int),
    ("--k-weight", "k_weight", float),
    ("--reduce-dim", "reduce_dim", int),
    ("--reduce-method", "reduce_method", str),
    ("--threshold", "threshold", float),
    ("--cap", "cap", int),
    ("--max-iterations", "max_iterations", int),
    ("--seed", "seed", int),
    ("--threads", "threads", int),
)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    defaults = MiningConfig()
    g = p.add_argument_group("mining configuration")
    for flag, name, kind in _CONFIG_FLAGS:
        kw = {"type": kind, "default": None, "dest": f"cfg_{name}"}
        if name == "reduce_method":
            kw["choices"] = REDUCE_METHODS
        g.add_argument(flag, help=f"default {getattr(defaults, name)}", **kw)
    g.add_argument("--shared-members", dest="cfg_shared_members", action="store_const", const=True, default=None,
                   help="use only class members present in both neighbourhoods")


def _add_common(p: argparse.ArgumentParser, needs_out: bool = True) -> None:
    p.add_argument("--from-manifest", type=Path, default=None, metavar="JSON",
                   help="replay the run recorded in a manifest (other inputs are taken from it)")
    p.add_argument("--out", type=Path, required=False, default=None,
                   help="output directory" if needs_out else "output file")
    p.add_argument("--no-plots", action="store_true", help="skip the PNG figures")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cospacemine", description="Co-Space pseudo-label mining.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("-q", "--quiet", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    for name, help_ in (("mine", "iterative mining with the full criterion"),
                        ("ablate", "iterative mining with the plain-cosine criterion")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--features", type=Path, help="manifest listing one feature file per iteration")
        p.add_argument("--labels", type=Path, help="initial label file")
        p.add_argument("--num-classes", type=int)
        p.add_argument("--truth", type=Path, default=None, help="ground-truth labels for a selection_accuracy column")
        if name == "mine":
            p.add_argument("--criterion", choices=("full", "ablation"), default="full")
        _add_common(p)
        _add_config_flags(p)

    p = sub.add_parser("propagate", help="soft labels on both sides of one Co-Space")
    p.add_argument("--before", type=Path)
    p.add_argument("--after", type=Path)
    p.add_argument("--labels", type=Path)
    p.add_argument("--num-classes", type=int)
    p.add_argument("--diagnostics", action="store_true", help="also dump per-class rho and kappa")
    _add_common(p)
    _add_config_flags(p)

    p = sub.add_parser("simulate", help="full vs ablation on a synthetic drift scenario")
    p.add_argument("--scenario", type=Path, default=None, help="scenario file (default: packaged scenario)")
    p.add_argument("--criterion", choices=("both", "full", "ablation"), default="both")
    _add_common(p)
    _add_config_flags(p)

    p = sub.add_parser("eval", help="selection accuracy of selected_*.tsv files against ground truth")
    p.add_argument("--selected", type=Path, nargs="+", help="selected_<t>.tsv files or run directories")
    p.add_argument("--truth", type=Path)
    p.add_argument("--num-classes", type=int)
    p.add_argument("--out", type=Path, default=None, help="CSV file (default: stdout)")

    p = sub.add_parser("dump-graph", help="kNN transition matrix of one feature file")
    p.add_argument("--features", type=Path)
    p.add_argument("--reduce", action="store_true", help="apply the configured reducer first")
    _add_common(p, needs_out=False)
    _add_config_flags(p)
    return ap


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def resolve_config(args, base: dict | None = None) -> MiningConfig:
    """MiningConfig defaults, then ``base`` overrides, then explicit flags."""
    values = dict(base or {})
    for f in fields(MiningConfig):
        v = getattr(args, f"cfg_{f.name}", None)
        if v is not None:
            values[f.name] = v
    try:
        return MiningConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _require(args, *names) -> None:
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise ConfigError(f"missing required option(s): {flags}")


def _existing(path: Path, what: str) -> Path:
    if not path.is_file():
        raise ConfigError(f"{what} not found: {path}")
    return path.resolve()


def _out_dir(args) -> Path:
    _require(args, "out")
    out = args.out.resolve()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _warn_default_threshold(args) -> None:
    if getattr(args, "cfg_threshold", None) is None:
        log.warning("threshold left at its default %.2f; it is a tuning knob, set --threshold explicitly",
                    MiningConfig().threshold)


def _write_manifest(
    out: Path, command: str, cfg: MiningConfig | None, inputs: dict, options: dict, target: Path | None = None
) -> None:
    """Record everything needed to replay the run; ``target`` overrides the
    default ``<out>/run_manifest.json`` location."""
    manifest = {
        "tool": "cospacemine",
        "version": __version__,
        "command": command,
        "config": cfg.to_dict() if cfg is not None else None,
        "seed": cfg.seed if cfg is not None else None,
        "inputs": {k: (str(v) if v is not None else None) for k, v in inputs.items()},
        "options": options,
        "output_dir": str(out),
    }
    (target or out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _apply_manifest(args) -> dict | None:
    """Load ``--from-manifest`` into ``args``; returns the recorded config dict."""
    path = getattr(args, "from_manifest", None)
    if path is None:
        return None
    try:
        manifest = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
    if manifest.get("command") != args.command:
        raise ConfigError(f"manifest records command {manifest.get('command')!r}, not {args.command!r}")
    for k, v in manifest.get("inputs", {}).items():
        setattr(args, k, None if v is None else Path(v))
    for k, v in manifest.get("options", {}).items():
        setattr(args, k, v)
    if args.out is None and manifest.get("output_dir"):
        args.out = Path(manifest["output_dir"])
    # the recorded config is complete; flags given on the command line are ignored
    for f in fields(MiningConfig):
        setattr(args, f"cfg_{f.name}", None)
    args.cfg_threshold = manifest.get("config", {}).get("threshold") if manifest.get("config") else None
    return manifest.get("config")


def _load_partition(ids, labels_path: Path, num_classes: int) -> Partition:
    labels = load_labels(labels_path, num_classes)
    return Partition(tuple(ids), labels, num_classes)


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_mine(args) -> int:
    recorded = _apply_manifest(args)
    _require(args, "features", "labels", "num_classes")
    criterion = "ablation" if args.command == "ablate" else args.criterion
    features = _existing(args.features, "feature manifest")
    labels_path = _existing(args.labels, "label file")
    truth_path = _existing(args.truth, "ground-truth file") if args.truth is not None else None
    if args.num_classes < 1:
        raise ConfigError("--num-classes must be positive")
    cfg = resolve_config(args, recorded).replace(criterion=criterion)
    _warn_default_threshold(args)
    out = _out_dir(args)

    provider = FileSequenceProvider(features)
    first = next(iter(provider), None)
    if first is None:
        raise DataFormatError(f"feature manifest {features} lists no files")
    partition = _load_partition(first.ids, labels_path, args.num_classes)
    truth = load_labels(truth_path, args.num_classes) if truth_path is not None else None

    _write_manifest(
        out, args.command, cfg,
        {"features": features, "labels": labels_path, "truth": truth_path},
        {"num_classes": args.num_classes, **({"criterion": criterion} if args.command == "mine" else {})},
    )
    pools: list[int] = []

    def record(result, part):
        write_pseudo_labels(result, out / f"selected_{result.iteration}.tsv")
        pools.append(len(part.labeled))

    results, final = run_loop(provider, partition, cfg, criterion=criterion, callback=record)

    columns = list(METRICS_COLUMNS) + (["selection_accuracy"] if truth is not None else [])
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r, pool in zip(results, pools):
            row = [r.iteration, len(r), _fmt(r.mean_confidence), pool]
            if truth is not None:
                acc = None
                if r.selections:
                    acc = sum(truth.get(c.sample) == c.pseudo_label for c in r.selections) / len(r)
                row.append(_fmt(acc))
            w.writerow(row)
    if results and not args.no_plots:
        from .plotting import plot_metrics

        plot_metrics(results, pools, out / "metrics.png")
    log.info("%d iterations, %d samples pseudo-labeled, outputs in %s",
             len(results), len(final.provenance), out)
    return 0


def cmd_propagate(args) -> int:
    recorded = _apply_manifest(args)
    _require(args, "before", "after", "labels", "num_classes")
    before_path = _existing(args.before, "feature file")
    after_path = _existing(args.after, "feature file")
    labels_path = _existing(args.labels, "label file")
    cfg = resolve_config(args, recorded)
    out = _out_dir(args)

    cs = make_cospace(load_features(before_path), load_features(after_path))
    partition = _load_partition(cs.ids, labels_path, args.num_classes)
    reduced = reduce_cospace(cs, cfg.reduce_dim, cfg.reduce_method, cfg.seed)
    _write_manifest(
        out, "propagate", cfg,
        {"before": before_path, "after": after_path, "labels": labels_path},
        {"num_classes": args.num_classes, "diagnostics": bool(args.diagnostics)},
    )
    soft_b, soft_a = intrinsic_variation(
        reduced, partition, cfg.knn, cfg.mu, cfg.delta, cfg.lp_iters, cfg.lp_tol, cfg.threads
    )
    dump_soft_labels(soft_b, out / "soft_before.tsv")
    dump_soft_labels(soft_a, out / "soft_after.tsv")
    if args.diagnostics and partition.unlabeled and partition.labeled:
        mats = transformation_matrices(
            reduced, partition, cfg.top_s, cfg.labeled_neighbors, cfg.k_weight, cfg.shared_members,
            threads=cfg.threads,
        )
        dump_diagnostics(mats, out / "diagnostics.tsv")
    return 0


def cmd_simulate(args) -> int:
    recorded = _apply_manifest(args)
    scenario_path = _existing(args.scenario, "scenario file") if args.scenario is not None else None
    try:
        scenario, overrides = load_scenario(scenario_path)
    except ValueError as exc:
        raise ConfigError(f"bad scenario: {exc}") from exc
    cfg = resolve_config(args, recorded if recorded is not None else overrides)
    out = _out_dir(args)
    criteria = ("full", "ablation") if args.criterion == "both" else (args.criterion,)

    _write_manifest(out, "simulate", cfg, {"scenario": scenario_path}, {"criterion": args.criterion})
    (out / "scenario.cfg").write_text(scenario_text(scenario), encoding="utf-8")
    cmp = compare_criteria(scenario, cfg, criteria)
    write_comparison_csv(cmp, out / "comparison.csv")
    write_gnuplot_data(cmp, out / "comparison.dat")
    if not args.no_plots:
        from .plotting import plot_comparison

        plot_comparison(cmp, out / "comparison.png")
    for row in cmp.rows():
        log.info("iteration %d: %s", row["iteration"],
                 ", ".join(f"{c} acc={_fmt(row['acc_' + c])} n={row['count_' + c]}" for c in criteria))
    return 0


def _selected_files(paths) -> list[Path]:
    files = []
    for p in paths:
        if p.is_dir():
            found = sorted(p.glob("selected_*.tsv"), key=lambda q: int(q.stem.split("_")[-1]))
            files.extend(found)
        elif p.is_file():
            files.append(p)
        else:
            raise ConfigError(f"not found: {p}")
    return files


def cmd_eval(args) -> int:
    _require(args, "selected", "truth", "num_classes")
    truth = load_labels(_existing(args.truth, "ground-truth file"), args.num_classes)
    rows = []
    for path in _selected_files(args.selected):
        entries = read_pseudo_labels(path)
        unknown = [sid for sid, *_ in entries if sid not in truth]
        if unknown:
            raise DataFormatError(f"{path}: no ground truth for {unknown[0]!r}")
        iterations = {it for *_, it in entries}
        it = iterations.pop() if len(iterations) == 1 else path.stem.split("_")[-1]
        acc = sum(truth[sid] == c for sid, c, *_ in entries) / len(entries) if entries else None
        rows.append([it, len(entries), _fmt(acc)])
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "selected_count", "selection_accuracy"])
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_dump_graph(args) -> int:
    recorded = _apply_manifest(args)
    _require(args, "features", "out")
    features = _existing(args.features, "feature file")
    cfg = resolve_config(args, recorded)
    space = load_features(features)
    if args.reduce:
        space = reduce(space, cfg.reduce_dim, cfg.reduce_method, cfg.seed)
    tm = transition_from_space(space, cfg.knn, cfg.mu, cfg.delta)
    out = args.out.resolve()
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_manifest(out, "dump-graph", cfg, {"features": features}, {"reduce": bool(args.reduce)},
                    target=out.with_name(out.name + ".manifest.json"))
    dump_transition(tm, out)
    ids_path = out.with_name(out.name + ".ids")
    ids_path.write_text("".join(f"{i}\t{sid}\n" for i, sid in enumerate(tm.ids)), encoding="utf-8")
    return 0


COMMANDS = {
    "mine": cmd_mine,
    "ablate": cmd_mine,
    "propagate": cmd_propagate,
    "simulate": cmd_simulate,
    "eval": cmd_eval,
    "dump-graph": cmd_dump_graph,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose > 1 else logging.INFO)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True)
    logging.captureWarnings(True)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        log.error("%s", exc)
        return 2
    except (DataFormatError, ValueError, ArithmeticError, KeyError, OSError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
