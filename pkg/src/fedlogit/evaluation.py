"""Metrics, stratified fold plans and the cross-validated experiment runner."""
from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .cohort import Cohort, SiteDataset
from .model import SolverConfig, predict_scores
from .normalize import NormalizationMode, apply_zscore
from .topology import TopologyKind, TopologySpec, build_graph
from .trainers import (
    GLOBAL,
    TrainerKind,
    TrainingRun,
    train_centralized,
    train_fedavg,
    train_fedgd,
    train_site_specific,
)

log = logging.getLogger(__name__)

METRICS = ("auc", "balanced_accuracy", "sensitivity", "specificity")


class UndefinedMetricError(ValueError):
    pass


class StratificationError(ValueError):
    pass


# ---------------------------------------------------------------- metrics


def _binary(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError(f"scores {s.shape} and labels {y.shape} must be equal-length vectors")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    npos = int(y.sum())
    if npos == 0 or npos == y.size:
        raise UndefinedMetricError("metric undefined: labels contain a single class")
    return s, y.astype(bool)


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 * P(tie), via mid-ranks."""
    s, y = _binary(scores, labels)
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    # mid-rank for each run of tied scores
    _, start, counts = np.unique(sorted_s, return_index=True, return_counts=True)
    midranks = start + (counts + 1) / 2.0
    ranks = np.empty(s.size)
    ranks[order] = np.repeat(midranks, counts)
    P = int(y.sum())
    N = s.size - P
    u = ranks[y].sum() - P * (P + 1) / 2.0
    return float(u / (P * N))


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """False/true positive rates at every distinct threshold, from (0,0) to (1,1)."""
    s, y = _binary(scores, labels)
    thresholds = np.unique(s)[::-1]
    P, N = y.sum(), (~y).sum()
    tpr = [0.0] + [float((s[y] >= th).sum() / P) for th in thresholds]
    fpr = [0.0] + [float((s[~y] >= th).sum() / N) for th in thresholds]
    return np.array(fpr), np.array(tpr), thresholds


def trapezoid_auc(scores, labels) -> float:
    fpr, tpr, _ = roc_curve(scores, labels)
    return float(np.trapezoid(tpr, fpr))


@dataclass(frozen=True)
class MetricsReport:
    auc: float
    sensitivity: float
    specificity: float
    tp: int
    fp: int
    tn: int
    fn: int
    cutoff: float = 0.5
    scope: str = GLOBAL
    balanced_accuracy: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "balanced_accuracy", (self.sensitivity + self.specificity) / 2)

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "balanced_accuracy": self.balanced_accuracy,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "counts": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn},
            "cutoff": self.cutoff,
            "scope": self.scope,
        }


def classification_metrics(scores, labels, cutoff: float = 0.5, scope: str = GLOBAL) -> MetricsReport:
    s, y = _binary(scores, labels)
    pred = s >= cutoff
    tp = int((pred & y).sum())
    fn = int((~pred & y).sum())
    tn = int((~pred & ~y).sum())
    fp = int((pred & ~y).sum())
    return MetricsReport(
        auc=roc_auc(s, y.astype(int)),
        sensitivity=tp / (tp + fn),
        specificity=tn / (tn + fp),
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        cutoff=cutoff,
        scope=scope,
    )


# ---------------------------------------------------------------- folds


@dataclass(frozen=True)
class FoldPlan:
    fold_count: int
    assignments: Mapping[str, int]
    site_of_row: Mapping[str, str]
    test_fold: int = 0

    def rotate(self, test_fold: int) -> "FoldPlan":
        if not 0 <= test_fold < self.fold_count:
            raise ValueError(f"test fold {test_fold} outside 0..{self.fold_count - 1}")
        return replace(self, test_fold=test_fold)

    def split(self, cohort: Cohort) -> tuple[Cohort, SiteDataset, list[str]]:
        """Training cohort (sites minus test rows), the common test set, and ids of sites left empty."""
        train_sites, tests, dropped = [], [], []
        for s in cohort.sites:
            is_test = np.array([self.assignments[i] == self.test_fold for i in s.ids], dtype=bool)
            if is_test.any():
                tests.append(s.subset(is_test))
            if is_test.all():
                dropped.append(s.site_id)
            else:
                train_sites.append(s.subset(~is_test))
        test = SiteDataset(
            "test",
            tuple(i for t in tests for i in t.ids),
            np.vstack([t.X for t in tests]),
            np.concatenate([t.y for t in tests]),
        )
        return Cohort(tuple(train_sites), cohort.d), test, dropped


def make_fold_plan(cohort: Cohort, fold_count: int = 10, seed: int = 0) -> FoldPlan:
    """Stratified fold assignment.

    Each class is shuffled with a seeded generator and dealt round-robin;
    negatives continue the deal where positives stopped so fold sizes stay
    within one of each other.
    """
    if fold_count < 2:
        raise ValueError("fold_count must be >= 2")
    ids = [i for s in cohort.sites for i in s.ids]
    labels = np.concatenate([s.y for s in cohort.sites])
    site_of = {i: s.site_id for s in cohort.sites for i in s.ids}
    rng = np.random.default_rng(seed)
    assignments: dict[str, int] = {}
    offset = 0
    for cls in (1, 0):
        members = [ids[j] for j in np.flatnonzero(labels == cls)]
        if len(members) < fold_count:
            raise StratificationError(f"class {cls} has {len(members)} members, fewer than {fold_count} folds")
        perm = rng.permutation(len(members))
        for r, j in enumerate(perm):
            assignments[members[j]] = (offset + r) % fold_count
        offset = (offset + len(members)) % fold_count
    return FoldPlan(fold_count, {i: assignments[i] for i in ids}, site_of)


# ---------------------------------------------------------------- experiments


def train(
    kind: TrainerKind,
    cohort: Cohort,
    cfg: SolverConfig,
    topo: TopologySpec | None = None,
    normalization: NormalizationMode | None = None,
) -> TrainingRun:
    kind = TrainerKind(kind)
    if kind is TrainerKind.CENTRALIZED:
        return train_centralized(cohort, cfg)
    if kind is TrainerKind.SITE_SPECIFIC:
        return train_site_specific(cohort, cfg)
    if kind is TrainerKind.FEDAVG:
        graph = build_graph(cohort.site_ids, TopologySpec(TopologyKind.STAR))
        kw = {"normalization": normalization} if normalization is not None else {}
        return train_fedavg(cohort, graph, cfg, **kw)
    if topo is None:
        raise ValueError("FedGD needs a peer-to-peer topology")
    graph = build_graph(cohort.site_ids, topo)
    return train_fedgd(cohort, graph, cfg, normalization=normalization)


def evaluate(run: TrainingRun, test: SiteDataset, cutoff: float = 0.5) -> dict[str, MetricsReport]:
    """Score each of the run's models on the common test set, normalised with that model's statistics."""
    out = {}
    for key, w in run.weights.items():
        z = apply_zscore(test, run.stats[key])
        out[key] = classification_metrics(predict_scores(w, z), test.y, cutoff, scope=key)
    return out


def _mean_std(values: Sequence[float | None]) -> dict:
    present = [v for v in values if v is not None]
    return {
        "mean": float(np.mean(present)) if present else None,
        "std": float(np.std(present)) if present else None,
        "n": len(present),
        "missing": len(values) - len(present),
    }


@dataclass
class ExperimentResult:
    """Per-fold metric reports for each trainer, with mean/std summaries.

    ``folds[kind][f]`` maps scope (``"global"`` or a site id) to a report, or
    to ``None`` when the metric was undefined on that fold. For per-site
    trainers the ``"global"`` entry is the macro average over site models.
    """

    config: dict
    folds: dict[str, list[dict[str, dict | None]]]
    flags: dict[str, list[list[str]]]
    timings: dict[str, list[float]] = field(default_factory=dict)
    rounds: dict[str, int] = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    def values(self, kind: str, scope: str, metric: str) -> list[float | None]:
        out = []
        for fold in self.folds[kind]:
            rep = fold.get(scope)
            out.append(None if rep is None else rep[metric])
        return out

    def summary(self) -> dict:
        out: dict = {}
        for kind, folds in self.folds.items():
            scopes = sorted({s for f in folds for s in f}, key=lambda s: (s != GLOBAL, s))
            out[kind] = {sc: {m: _mean_std(self.values(kind, sc, m)) for m in METRICS} for sc in scopes}
        return out

    def mean(self, kind: str, metric: str = "auc", scope: str = GLOBAL) -> float:
        return self.summary()[kind][scope][metric]["mean"]

    def site_means(self, kind: str, metric: str = "auc") -> dict[str, float]:
        summ = self.summary()[kind]
        return {sc: v[metric]["mean"] for sc, v in summ.items() if sc != GLOBAL}

    def across_site_std(self, kind: str, metric: str = "auc") -> float:
        return float(np.std(list(self.site_means(kind, metric).values())))

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "config_hash": self.config_hash,
            "folds": self.folds,
            "flags": self.flags,
            "summary": self.summary(),
        }

    def to_json(self) -> str:
        # wall-clock timings are excluded so that reruns are byte-identical
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def rows(self, case: str = "default") -> Iterable[tuple]:
        for kind, folds in self.folds.items():
            for f, fold in enumerate(folds):
                for scope, rep in fold.items():
                    for m in METRICS:
                        yield (case, kind, scope, f, m, None if rep is None else rep[m])


def config_hash(config: Mapping) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _macro(reports: dict[str, MetricsReport | None]) -> dict | None:
    present = [r for r in reports.values() if r is not None]
    if not present:
        return None
    out = {m: float(np.mean([getattr(r, m) for r in present])) for m in METRICS}
    # keep the identity exact for the averaged report as well
    out["balanced_accuracy"] = (out["sensitivity"] + out["specificity"]) / 2
    out["scope"] = "macro"
    return out


def _run_fold(cohort, plan, f, kinds, topo, cfg, normalization, cutoff):
    train_cohort, test, dropped = plan.rotate(f).split(cohort)
    fold_out, flags, times = {}, {}, {}
    for kind in kinds:
        t0 = time.perf_counter()
        norm = normalization.get(kind) if normalization else None
        run = train(kind, train_cohort, cfg, topo, norm)
        times[kind.value] = time.perf_counter() - t0
        try:
            reports = evaluate(run, test, cutoff)
        except ValueError as exc:  # undefined metric on a degenerate fold
            log.warning("fold %d %s: %s", f, kind.value, exc)
            reports = {k: None for k in run.weights}
        entry = {k: (None if r is None else r.to_dict()) for k, r in reports.items()}
        if kind.per_site:
            entry[GLOBAL] = _macro(reports)
        fold_out[kind.value] = entry
        flags[kind.value] = list(run.flags) + [f"site {s} has no training rows" for s in dropped]
    return fold_out, flags, times


def run_experiment(
    cohort: Cohort,
    kinds: Sequence[TrainerKind],
    topo: TopologySpec | None = None,
    cfg: SolverConfig | None = None,
    folds: int = 10,
    seed: int = 0,
    *,
    normalization: Mapping[TrainerKind, NormalizationMode] | None = None,
    cutoff: float = 0.5,
    workers: int = 1,
) -> ExperimentResult:
    """Cross-validated comparison of trainers on a common held-out fold.

    Fold rotations are independent and may run on ``workers`` threads; results
    are merged in fold order, so the output does not depend on ``workers``.
    """
    cfg = cfg or SolverConfig()
    kinds = [TrainerKind(k) for k in kinds]
    if TrainerKind.FEDGD in kinds and topo is None:
        raise ValueError("FedGD needs a topology")
    normalization = {TrainerKind(k): NormalizationMode(v) for k, v in (normalization or {}).items()}
    plan = make_fold_plan(cohort, folds, seed)
    config = {
        "kinds": [k.value for k in kinds],
        "topology": None if topo is None else topo.to_dict(),
        "solver": cfg.to_dict(),
        "folds": folds,
        "seed": seed,
        "cutoff": cutoff,
        "normalization": {k.value: v.value for k, v in sorted(normalization.items())},
        "cohort": {"K": cohort.K, "n": cohort.n, "d": cohort.d, "positives": cohort.positives},
    }
    args = (kinds, topo, cfg, normalization, cutoff)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda f: _run_fold(cohort, plan, f, *args), range(folds)))
    else:
        parts = [_run_fold(cohort, plan, f, *args) for f in range(folds)]

    result = ExperimentResult(
        config=config,
        folds={k.value: [p[0][k.value] for p in parts] for k in kinds},
        flags={k.value: [p[1][k.value] for p in parts] for k in kinds},
        timings={k.value: [p[2][k.value] for p in parts] for k in kinds},
        rounds={k.value: cfg.global_iterations for k in kinds},
    )
    return result
