"""Experiment configuration: YAML file plus flag overrides, validated into one dataclass."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .cohort import Cohort, GenerationError, SyntheticCohortSpec, generate_synthetic, ingest_csv, merge_small_sites
from .evaluation import config_hash
from .model import ConfigError, SolverConfig
from .normalize import NormalizationMode
from .topology import TopologyError, TopologyKind, TopologySpec, read_edge_list
from .trainers import TrainerKind

OUTPUT_ROOT_ENV = "FEDLOGIT_OUTPUT_ROOT"

VALID_KEYS = {
    "csv": "path to a cohort CSV (id, site, label, f1..fd)",
    "synthetic": "mapping of synthetic generator fields, or 'standard'",
    "merge_min_size": "pool sites smaller than this before training",
    "kinds": "list of trainers: centralized, site-specific, fedavg, fedgd",
    "topology": "star | ring | random-regular | complete | explicit (FedGD graph)",
    "degree": "node degree for random-regular",
    "topology_seed": "seed for random-regular construction",
    "edges": "edge-list file for the explicit topology",
    "learning_rate": "gradient step size > 0",
    "local_iterations": "FedAvg local steps per round >= 1",
    "global_iterations": "rounds / iterations >= 1",
    "eta": "FedAvg prox strength > 0",
    "alpha": "FedGD neighbour coupling in [0, 1]",
    "folds": "cross-validation folds >= 2",
    "seed": "master seed for fold plans",
    "normalization": "mapping trainer -> normalization mode override",
    "cutoff": "decision threshold in [0, 1]",
    "output_dir": "where results are written",
    "workers": "threads used for fold rotations",
}

_SYNTH_FIELDS = {f.name for f in fields(SyntheticCohortSpec)}


@dataclass(frozen=True)
class ExperimentConfig:
    csv: Path | None = None
    synthetic: SyntheticCohortSpec | None = None
    merge_min_size: int | None = None
    kinds: tuple[TrainerKind, ...] = tuple(TrainerKind)
    topology: TopologySpec = field(default_factory=TopologySpec)
    solver: SolverConfig = field(default_factory=SolverConfig)
    folds: int = 10
    seed: int = 0
    normalization: Mapping[TrainerKind, NormalizationMode] = field(default_factory=dict)
    cutoff: float = 0.5
    output_dir: Path | None = None
    workers: int = 1

    def load_cohort(self) -> Cohort:
        cohort = ingest_csv(self.csv) if self.csv is not None else generate_synthetic(self.synthetic)
        if self.merge_min_size:
            cohort = merge_small_sites(cohort, self.merge_min_size)
        return cohort

    def to_dict(self) -> dict:
        """Flat key-value form accepted back by :func:`parse_config` (output_dir and workers omitted)."""
        out: dict[str, Any] = {}
        if self.csv is not None:
            out["csv"] = str(self.csv)
        if self.synthetic is not None:
            syn = asdict(self.synthetic)
            syn["fixed_sites"] = [list(x) for x in self.synthetic.fixed_sites]
            out["synthetic"] = syn
        if self.merge_min_size:
            out["merge_min_size"] = self.merge_min_size
        out["kinds"] = [k.value for k in self.kinds]
        out["topology"] = self.topology.kind.value
        out["degree"] = self.topology.degree
        out["topology_seed"] = self.topology.seed
        if self.topology.kind is TopologyKind.EXPLICIT:
            out["edges"] = [list(e) for e in self.topology.edges]
        out.update(self.solver.to_dict())
        out["folds"] = self.folds
        out["seed"] = self.seed
        out["normalization"] = {k.value: v.value for k, v in sorted(self.normalization.items())}
        out["cutoff"] = self.cutoff
        return out

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())

    def resolved_output_dir(self) -> Path:
        if self.output_dir is not None:
            return Path(self.output_dir)
        return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / self.hash


def load_file(path: str | Path | None) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a key-value mapping")
    return data


def parse_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Merge file keys with ``overrides`` (overrides win) and validate."""
    raw = load_file(path)
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return from_mapping(raw)


def _int(raw, key, lo=None):
    try:
        v = int(raw[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected an integer, got {raw[key]!r}") from None
    if lo is not None and v < lo:
        raise ConfigError(f"{key}: expected an integer >= {lo}, got {v}")
    return v


def _float(raw, key):
    try:
        return float(raw[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a number, got {raw[key]!r}") from None


def from_mapping(raw: Mapping[str, Any]) -> ExperimentConfig:
    unknown = sorted(set(raw) - set(VALID_KEYS))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown}; valid keys: {sorted(VALID_KEYS)}")

    if ("csv" in raw) == ("synthetic" in raw):
        raise ConfigError("exactly one cohort source is required: set either 'csv' or 'synthetic'")
    csv = synthetic = None
    if "csv" in raw:
        # existence is checked when the cohort is read, so a missing file is an I/O failure
        csv = Path(raw["csv"])
    else:
        syn = raw["synthetic"]
        if syn == "standard" or syn == {}:
            syn = {}
        if not isinstance(syn, Mapping):
            raise ConfigError("synthetic: expected a mapping of generator fields or 'standard'")
        bad = sorted(set(syn) - _SYNTH_FIELDS)
        if bad:
            raise ConfigError(f"synthetic: unknown field(s) {bad}; valid fields: {sorted(_SYNTH_FIELDS)}")
        syn = dict(syn)
        if "fixed_sites" in syn:
            syn["fixed_sites"] = tuple(tuple(int(v) for v in x) for x in syn["fixed_sites"])
        try:
            synthetic = SyntheticCohortSpec(**syn)
        except (GenerationError, TypeError) as exc:
            raise ConfigError(f"synthetic: {exc}") from None

    kinds = raw.get("kinds", [k.value for k in TrainerKind])
    if isinstance(kinds, str):
        kinds = [k.strip() for k in kinds.split(",") if k.strip()]
    try:
        kinds = tuple(TrainerKind(k) for k in kinds)
    except ValueError:
        raise ConfigError(f"kinds: expected a subset of {[k.value for k in TrainerKind]}, got {kinds}") from None
    if not kinds:
        raise ConfigError("kinds: at least one trainer is required")

    solver_kw = {k: raw[k] for k in ("learning_rate", "eta", "alpha") if k in raw}
    solver_kw = {k: _float(raw, k) for k in solver_kw}
    for k in ("local_iterations", "global_iterations"):
        if k in raw:
            solver_kw[k] = _int(raw, k, 1)
    solver = SolverConfig(**solver_kw)

    try:
        kind = TopologyKind(raw.get("topology", TopologyKind.RANDOM_REGULAR.value))
    except ValueError:
        raise ConfigError(f"topology: expected one of {[k.value for k in TopologyKind]}") from None
    edges: tuple = ()
    if kind is TopologyKind.EXPLICIT:
        if "edges" not in raw:
            raise ConfigError("topology 'explicit' needs 'edges'")
        e = raw["edges"]
        try:
            edges = read_edge_list(e) if isinstance(e, (str, Path)) else tuple((str(a), str(b), float(w)) for a, b, w in e)
        except (OSError, TopologyError) as exc:
            raise ConfigError(f"edges: {exc}") from None
    if kind is TopologyKind.STAR and TrainerKind.FEDGD in kinds:
        raise ConfigError("topology: FedGD needs a peer-to-peer topology, not 'star'")
    topology = TopologySpec(
        kind,
        degree=_int(raw, "degree", 1) if "degree" in raw else 3,
        seed=_int(raw, "topology_seed", 0) if "topology_seed" in raw else 0,
        edges=edges,
    )

    norm = raw.get("normalization") or {}
    if isinstance(norm, str):
        norm = dict(item.split("=", 1) for item in norm.split(",") if item)
    try:
        normalization = {TrainerKind(k): NormalizationMode(v) for k, v in norm.items()}
    except ValueError:
        raise ConfigError(
            f"normalization: expected trainer -> one of {[m.value for m in NormalizationMode]}, got {norm}"
        ) from None

    cutoff = _float(raw, "cutoff") if "cutoff" in raw else 0.5
    if not 0.0 <= cutoff <= 1.0:
        raise ConfigError(f"cutoff: expected a value in [0, 1], got {cutoff}")

    return ExperimentConfig(
        csv=csv,
        synthetic=synthetic,
        merge_min_size=_int(raw, "merge_min_size", 1) if raw.get("merge_min_size") else None,
        kinds=kinds,
        topology=topology,
        solver=solver,
        folds=_int(raw, "folds", 2) if "folds" in raw else 10,
        seed=_int(raw, "seed", 0) if "seed" in raw else 0,
        normalization=normalization,
        cutoff=cutoff,
        output_dir=Path(raw["output_dir"]) if raw.get("output_dir") else None,
        workers=_int(raw, "workers", 1) if "workers" in raw else 1,
    )
