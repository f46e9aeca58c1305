"""Command-line entry point: ``fedlogit {run,generate,verify,preset}``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .cohort import CohortError, SyntheticCohortSpec, emit_csv, generate_synthetic
from .config import VALID_KEYS, ExperimentConfig, from_mapping, load_file
from .evaluation import METRICS, ExperimentResult, run_experiment
from .model import ConfigError, DivergenceError
from .topology import TopologyError
from .trainers import GLOBAL, TrainerKind, TrainingError

log = logging.getLogger("fedlogit")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED, EXIT_MISMATCH = 0, 1, 2, 3, 4

ALPHA_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
ETA_GRID = (10.0, 1.0, 0.1)
DEGREE_GRID = (3, 10)

# preset -> (base keys, sweep axis name or None, [(case, sweep keys)])
PRESETS: dict[str, tuple[dict, str | None, list[tuple[str, dict]]]] = {
    "baseline": ({}, None, [("baseline", {})]),
    "site-wise": ({"synthetic": {"fixed_sites": [[30, 1]]}}, None, [("site-wise", {})]),
    "alpha-sweep": (
        {"kinds": ["fedgd"]},
        "alpha",
        [(f"alpha={a}", {"alpha": a}) for a in ALPHA_GRID],
    ),
    "eta-sweep": ({"kinds": ["fedavg"]}, "eta", [(f"eta={e}", {"eta": e}) for e in ETA_GRID]),
    "normalization": (
        {"synthetic": {"site_shift_scale": 1.0}},
        None,
        [
            ("fedgd-neighborhood", {"kinds": ["fedgd"], "normalization": {"fedgd": "neighborhood"}}),
            ("fedgd-per-site", {"kinds": ["fedgd"], "normalization": {"fedgd": "per-site"}}),
            ("fedavg-simple", {"kinds": ["fedavg"], "normalization": {"fedavg": "federated-simple"}}),
            ("fedavg-decomposed", {"kinds": ["fedavg"], "normalization": {"fedavg": "federated-decomposed"}}),
        ],
    ),
    "degree-sweep": (
        {"kinds": ["fedgd"], "topology": "random-regular"},
        "degree",
        [(f"degree={k}", {"degree": k}) for k in DEGREE_GRID],
    ),
}


# ---------------------------------------------------------------- execution


def execute(config: ExperimentConfig) -> ExperimentResult:
    cohort = config.load_cohort()
    log.info("cohort: K=%d n=%d positives=%d d=%d", cohort.K, cohort.n, cohort.positives, cohort.d)
    return run_experiment(
        cohort,
        config.kinds,
        config.topology,
        config.solver,
        config.folds,
        config.seed,
        normalization=config.normalization,
        cutoff=config.cutoff,
        workers=config.workers,
    )


def result_json(config: ExperimentConfig, result: ExperimentResult) -> str:
    payload = result.to_dict()
    payload["experiment"] = config.to_dict()
    payload["config_hash"] = config.hash
    return json.dumps(payload, sort_keys=True, indent=1) + "\n"


def _tsv(path: Path, chash: str, header: Sequence[str], rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# config_hash={chash}\n")
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join("" if v is None else str(v) for v in row) + "\n")


def write_outputs(out: Path, config: ExperimentConfig, result: ExperimentResult, case: str = "default") -> None:
    out.mkdir(parents=True, exist_ok=True)
    chash = config.hash
    (out / "config.json").write_text(
        json.dumps({"experiment": config.to_dict(), "config_hash": chash}, sort_keys=True, indent=1) + "\n"
    )
    (out / "result.json").write_text(result_json(config, result))
    with open(out / "result.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["case", "kind", "site", "fold", "metric", "value", "config_hash"])
        for row in result.rows(case):
            w.writerow([*row, chash])

    summary = result.summary()
    _tsv(
        out / "summary.tsv",
        chash,
        ["kind", "metric", "mean", "std"],
        [(k, m, summary[k][GLOBAL][m]["mean"], summary[k][GLOBAL][m]["std"]) for k in summary for m in METRICS],
    )
    for kind, scopes in summary.items():
        if not TrainerKind(kind).per_site:
            continue
        for m in METRICS:
            _tsv(
                out / f"sites_{kind}_{m}.tsv",
                chash,
                ["x", "y", "yerr"],
                [(sc, v[m]["mean"], v[m]["std"]) for sc, v in scopes.items() if sc != GLOBAL],
            )
    timing = {
        k: {
            "seconds_per_fold": v,
            "seconds_per_round": float(np.mean(v)) / result.rounds[k],
        }
        for k, v in result.timings.items()
    }
    (out / "timing.json").write_text(json.dumps({"config_hash": chash, "timing": timing}, indent=1, sort_keys=True) + "\n")


def run(config: ExperimentConfig, out: Path | None = None, case: str = "default") -> int:
    """Execute one experiment and write its artifacts; returns a process exit code."""
    out = Path(out) if out is not None else config.resolved_output_dir()
    try:
        result = execute(config)
        write_outputs(out, config, result, case)
    except DivergenceError as exc:
        log.error("training diverged: %s", exc)
        return EXIT_DIVERGED
    except (OSError, CohortError) as exc:
        log.error("input/output failure: %s", exc)
        return EXIT_IO
    except (ConfigError, TopologyError, TrainingError, ValueError) as exc:
        log.error("invalid experiment: %s", exc)
        return EXIT_CONFIG
    log.info("wrote %s (config %s)", out, config.hash)
    return EXIT_OK


def run_preset(name: str, base: dict, flags: dict, out: Path | None) -> int:
    defaults, axis, points = PRESETS[name]
    cases = []
    for case, sweep in points:
        raw = _deep_merge({"synthetic": "standard"}, defaults)
        raw = _deep_merge(raw, base)
        raw = _deep_merge(raw, flags)
        raw = _deep_merge(raw, sweep)
        if "csv" in raw:
            raw.pop("synthetic", None)
        cases.append((case, sweep, from_mapping(raw)))

    root = Path(out) if out is not None else cases[0][2].resolved_output_dir().parent / f"preset-{name}"
    results = []
    for case, sweep, cfg in cases:
        log.info("preset %s: case %s", name, case)
        try:
            res = execute(cfg)
            write_outputs(root / case, cfg, res, case)
        except DivergenceError as exc:
            log.error("case %s diverged: %s", case, exc)
            return EXIT_DIVERGED
        except (OSError, CohortError) as exc:
            log.error("input/output failure: %s", exc)
            return EXIT_IO
        results.append((case, sweep, cfg, res))

    if axis is not None:
        _write_sweep(root, name, axis, results)
    log.info("preset %s written to %s", name, root)
    return EXIT_OK


def _write_sweep(root: Path, name: str, axis: str, results) -> None:
    chash = ",".join(cfg.hash for _, _, cfg, _ in results)
    if axis == "degree":
        rows = []
        for _, sweep, _, res in results:
            per_round = np.array(res.timings["fedgd"]) / res.rounds["fedgd"]
            rows.append((sweep[axis], float(per_round.mean()), float(per_round.std())))
        _tsv(root / "sweep_seconds_per_round.tsv", chash, ["x", "y", "yerr"], rows)
    for m in METRICS:
        rows = []
        for _, sweep, cfg, res in results:
            kind = cfg.kinds[0].value
            summ = res.summary()[kind][GLOBAL][m]
            spread = res.across_site_std(kind, m) if TrainerKind(kind).per_site else summ["std"]
            rows.append((sweep[axis], summ["mean"], spread))
        _tsv(root / f"sweep_{m}.tsv", chash, ["x", "y", "yerr"], rows)


def verify(out: Path) -> int:
    """Re-run every experiment recorded under ``out`` and compare result JSON byte for byte."""
    configs = sorted(Path(out).rglob("config.json"))
    if not configs:
        log.error("no config.json under %s", out)
        return EXIT_IO
    ok = True
    for path in configs:
        echo = json.loads(path.read_text())
        cfg = from_mapping(echo["experiment"])
        fresh = result_json(cfg, execute(cfg))
        stored = (path.parent / "result.json").read_text()
        same = fresh == stored
        ok &= same
        print(f"{'OK' if same else 'MISMATCH'}\t{path.parent}\t{cfg.hash}")
    return EXIT_OK if ok else EXIT_MISMATCH


# ---------------------------------------------------------------- argument parsing


def _deep_merge(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        elif k == "synthetic" and isinstance(v, dict) and out.get(k) == "standard":
            out[k] = dict(v)
        elif k == "synthetic" and v == "standard" and isinstance(out.get(k), dict):
            pass
        else:
            out[k] = v
    return out


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML file of key: value settings")
    p.add_argument("--csv", help=VALID_KEYS["csv"])
    p.add_argument("--synthetic", action="store_const", const="standard", help="use the standard synthetic cohort")
    p.add_argument("--merge-min-size", type=int)
    p.add_argument("--kinds", help="comma-separated trainers")
    p.add_argument("--topology")
    p.add_argument("--degree", type=int)
    p.add_argument("--topology-seed", type=int)
    p.add_argument("--edges", help="edge-list file for the explicit topology")
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--local-iterations", type=int)
    p.add_argument("--global-iterations", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--normalization", help="e.g. fedgd=per-site,fedavg=federated-decomposed")
    p.add_argument("--cutoff", type=float)
    p.add_argument("--output-dir", type=Path)
    p.add_argument("--workers", type=int)


def _flag_overrides(args: argparse.Namespace) -> dict[str, Any]:
    out = {}
    for key in VALID_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            out[key] = str(v) if isinstance(v, Path) else v
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedlogit", description=__doc__)
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one cross-validated experiment")
    _add_experiment_flags(p)

    p = sub.add_parser("preset", help="run one of the predefined experiment families")
    p.add_argument("name", choices=sorted(PRESETS))
    _add_experiment_flags(p)

    p = sub.add_parser("generate", help="write a synthetic cohort to CSV")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--summary", type=Path, help="also write per-site JSON summary here")
    p.add_argument("--config", type=Path, help="YAML file whose 'synthetic' mapping is used")
    for f in ("seed", "K", "d", "size_min", "size_max"):
        p.add_argument(f"--{f.replace('_', '-')}", dest=f, type=int)
    for f in ("size_shape", "pos_rate_min", "pos_rate_max", "separation", "site_shift_scale"):
        p.add_argument(f"--{f.replace('_', '-')}", dest=f, type=float)

    p = sub.add_parser("verify", help="re-run recorded experiments and check byte-identical results")
    p.add_argument("output_dir", type=Path)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "run":
            raw = load_file(args.config)
            flags = _flag_overrides(args)
            # a cohort source given on the command line replaces the file's
            if "csv" in flags:
                raw.pop("synthetic", None)
            if "synthetic" in flags:
                raw.pop("csv", None)
                if isinstance(raw.get("synthetic"), dict):
                    flags.pop("synthetic")
            raw.update(flags)
            cfg = from_mapping(raw)
            return run(cfg)
        if args.command == "preset":
            flags = _flag_overrides(args)
            out = flags.pop("output_dir", None)
            return run_preset(args.name, load_file(args.config), flags, out)
        if args.command == "generate":
            syn = dict(load_file(args.config).get("synthetic") or {})
            syn.update({k: getattr(args, k) for k in ("seed", "K", "d", "size_min", "size_max", "size_shape",
                                                      "pos_rate_min", "pos_rate_max", "separation",
                                                      "site_shift_scale") if getattr(args, k) is not None})
            if "fixed_sites" in syn:
                syn["fixed_sites"] = tuple(tuple(x) for x in syn["fixed_sites"])
            cohort = generate_synthetic(SyntheticCohortSpec(**syn))
            emit_csv(cohort, args.out)
            if args.summary:
                args.summary.write_text(cohort.summary_json() + "\n")
            log.info("wrote %s: K=%d n=%d", args.out, cohort.K, cohort.n)
            return EXIT_OK
        if args.command == "verify":
            return verify(args.output_dir)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except CohortError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG if args.command == "generate" else EXIT_IO
    except OSError as exc:
        log.error("input/output failure: %s", exc)
        return EXIT_IO
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
