"""Centralized, site-specific, FedAvg (client-server) and FedGD (peer-to-peer) training.

Every trainer starts from the zero vector and runs a fixed iteration budget.
Federated rounds are synchronous: all sites read the weights of round ``t``
before anyone writes round ``t + 1``, so the per-site work inside a round is
vectorised across sites without changing the result.
"""
from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .cohort import Cohort, SiteDataset
from .model import DivergenceError, SolverConfig, _loss_and_grad, augment
from .normalize import (
    FeatureStats,
    IsolatedNodeWarning,
    NormalizationMode,
    centralized_stats,
    federated_stats,
    neighborhood_stats,
    site_stats,
    zscore_array,
)
from .topology import Architecture, EmpiricalGraph

log = logging.getLogger(__name__)

GLOBAL = "global"


class TrainingError(ValueError):
    pass


class TrainerKind(str, enum.Enum):
    CENTRALIZED = "centralized"
    SITE_SPECIFIC = "site-specific"
    FEDAVG = "fedavg"
    FEDGD = "fedgd"

    @property
    def per_site(self) -> bool:
        return self in (TrainerKind.SITE_SPECIFIC, TrainerKind.FEDGD)


@dataclass
class TrainingRun:
    kind: TrainerKind
    config: SolverConfig
    normalization: NormalizationMode
    weights: dict[str, np.ndarray]
    stats: dict[str, FeatureStats]
    loss_trace: np.ndarray
    consensus_trace: np.ndarray | None = None
    graph: EmpiricalGraph | None = None
    flags: list[str] = field(default_factory=list)
    # (rounds, d+1) for single-model kinds, (rounds, K, d+1) for per-site kinds
    history: np.ndarray | None = None

    def to_dict(self, every: int = 10) -> dict:
        sl = slice(every - 1, None, every)
        return {
            "kind": self.kind.value,
            "config": self.config.to_dict(),
            "normalization": self.normalization.value,
            "weights": {k: v.tolist() for k, v in self.weights.items()},
            "loss_trace": self.loss_trace[sl].tolist(),
            "consensus_trace": None if self.consensus_trace is None else self.consensus_trace[sl].tolist(),
            "trace_every": every,
            "flags": list(self.flags),
        }


def _require_both_classes(sites: Sequence[SiteDataset], what: str = "cohort") -> None:
    pos = sum(s.positives for s in sites)
    if pos == 0 or pos == sum(s.n for s in sites):
        raise TrainingError(f"{what} contains a single class; logistic regression is undefined")


def _gradient_descent(Xa, y, cfg: SolverConfig, history: list | None = None, where: str = ""):
    w = np.zeros(Xa.shape[1])
    trace = np.empty(cfg.global_iterations)
    _, g = _loss_and_grad(w, Xa, y)
    for t in range(cfg.global_iterations):
        w = w - cfg.learning_rate * g
        if not np.all(np.isfinite(w)):
            raise DivergenceError(t + 1, where)
        trace[t], g = _loss_and_grad(w, Xa, y)
        if history is not None:
            history.append(w)
    return w, trace


def train_centralized(cohort: Cohort, cfg: SolverConfig, *, record_history: bool = False) -> TrainingRun:
    """Pool every site, z-score with pooled statistics and run plain gradient descent."""
    _require_both_classes(cohort.sites)
    stats = centralized_stats(cohort)
    pooled = cohort.pooled()
    hist: list | None = [] if record_history else None
    w, trace = _gradient_descent(augment(zscore_array(pooled.X, stats)), pooled.y, cfg, hist, "centralized")
    return TrainingRun(
        TrainerKind.CENTRALIZED,
        cfg,
        NormalizationMode.CENTRALIZED_GLOBAL,
        {GLOBAL: w},
        {GLOBAL: stats},
        trace,
        history=np.array(hist) if record_history else None,
    )


def _minority_flags(sites: Sequence[SiteDataset]) -> list[str]:
    flags = []
    for s in sites:
        minority = min(s.positives, s.n - s.positives)
        if minority == 0:
            flags.append(f"single-class site {s.site_id}")
        elif minority == 1:
            flags.append(f"single-dominant-class site {s.site_id}")
    return flags


def train_site_specific(cohort: Cohort, cfg: SolverConfig, *, record_history: bool = False) -> TrainingRun:
    """Independent per-site normalisation and gradient descent; no communication."""
    weights, stats, traces, hists = {}, {}, [], []
    for s in cohort.sites:
        st = site_stats(s)
        hist: list | None = [] if record_history else None
        w, trace = _gradient_descent(augment(zscore_array(s.X, st)), s.y, cfg, hist, f"site {s.site_id}")
        weights[s.site_id], stats[s.site_id] = w, st
        traces.append(trace)
        if record_history:
            hists.append(hist)
    flags = _minority_flags(cohort.sites)
    for f in flags:
        log.info("site-specific training: %s", f)
    return TrainingRun(
        TrainerKind.SITE_SPECIFIC,
        cfg,
        NormalizationMode.PER_SITE,
        weights,
        stats,
        np.mean(traces, axis=0),
        flags=flags,
        history=np.stack([np.array(h) for h in hists], axis=1) if record_history else None,
    )


class _SiteStack:
    """Sites' augmented design matrices zero-padded into one ``(K, n_max, d+1)`` block.

    Padding rows carry zero features, zero labels and zero mask, so they
    contribute exact zeros to every per-site sum.
    """

    def __init__(self, blocks: Sequence[tuple[np.ndarray, np.ndarray]]):
        K = len(blocks)
        n_max = max(Xa.shape[0] for Xa, _ in blocks)
        p = blocks[0][0].shape[1]
        self.X = np.zeros((K, n_max, p))
        self.y = np.zeros((K, n_max))
        self.mask = np.zeros((K, n_max))
        for k, (Xa, y) in enumerate(blocks):
            n = Xa.shape[0]
            self.X[k, :n] = Xa
            self.y[k, :n] = y
            self.mask[k, :n] = 1.0
        self.inv_n = 1.0 / self.mask.sum(axis=1)

    def loss_and_grad(self, W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        m = np.matmul(self.X, W[:, :, None])[:, :, 0]
        losses = ((np.logaddexp(0.0, m) - self.y * m) * self.mask).sum(axis=1) * self.inv_n
        r = (expit(m) - self.y) * self.mask
        grads = np.matmul(r[:, None, :], self.X)[:, 0, :] * self.inv_n[:, None]
        return losses, grads


def _check_sites(graph: EmpiricalGraph, cohort: Cohort, arch: Architecture) -> None:
    if graph.architecture is not arch:
        raise TrainingError(f"expected a {arch.value} graph, got {graph.architecture.value}")
    nodes = set(graph.clients if arch is Architecture.CLIENT_SERVER else graph.nodes)
    if nodes != set(cohort.site_ids):
        raise TrainingError(
            f"graph/cohort site mismatch: only in graph {sorted(nodes - set(cohort.site_ids))}, "
            f"only in cohort {sorted(set(cohort.site_ids) - nodes)}"
        )


def _progress(kind: str, t: int, total: int, loss: float) -> None:
    if (t + 1) % 100 == 0:
        log.info("%s round %d/%d mean local loss %.6f", kind, t + 1, total, loss)


def train_fedavg(
    cohort: Cohort,
    graph: EmpiricalGraph,
    cfg: SolverConfig,
    *,
    normalization: NormalizationMode = NormalizationMode.FEDERATED_SIMPLE,
    record_history: bool = False,
) -> TrainingRun:
    """Client-server FedAvg with unweighted server averaging.

    Each round the server broadcasts ``w``; every site runs
    ``cfg.local_iterations`` gradient steps on its loss plus ``||w - v||^2 / eta``;
    the server replaces ``w`` with the plain mean of the returned vectors.
    ``consensus_trace[t]`` is the largest distance between a site's returned
    vector and the new average.
    """
    _check_sites(graph, cohort, Architecture.CLIENT_SERVER)
    _require_both_classes(cohort.sites)
    normalization = NormalizationMode(normalization)
    sites = sorted(cohort.sites, key=lambda s: s.site_id)
    local = [site_stats(s) for s in sites]
    if normalization in (NormalizationMode.FEDERATED_SIMPLE, NormalizationMode.FEDERATED_DECOMPOSED):
        gstats = federated_stats(local, normalization)
    elif normalization is NormalizationMode.CENTRALIZED_GLOBAL:
        gstats = centralized_stats(cohort)
    else:
        raise TrainingError(f"FedAvg trains one global model; normalization {normalization.value} is not supported")

    stack = _SiteStack([(augment(zscore_array(s.X, gstats)), s.y) for s in sites])
    K, p = len(sites), cohort.d + 1
    lr, c = cfg.learning_rate, 2.0 / cfg.eta
    T = cfg.global_iterations
    loss_trace = np.empty(T)
    consensus = np.empty(T)
    hist = np.empty((T, p)) if record_history else None

    w = np.zeros(p)
    for t in range(T):
        V = np.broadcast_to(w, (K, p))
        anchor = V
        with np.errstate(over="ignore", invalid="ignore"):
            for s in range(cfg.local_iterations):
                losses, G = stack.loss_and_grad(V)
                if s == 0 and t > 0:
                    loss_trace[t - 1] = losses.mean()
                V = V - lr * (G + c * (V - anchor))
        if not np.all(np.isfinite(V)):
            raise DivergenceError(t + 1, "fedavg")
        w = V.mean(axis=0)
        consensus[t] = np.sqrt(((V - w) ** 2).sum(axis=1)).max()
        if hist is not None:
            hist[t] = w
        if t > 0:
            _progress("fedavg", t - 1, T, loss_trace[t - 1])
    loss_trace[T - 1] = stack.loss_and_grad(np.broadcast_to(w, (K, p)))[0].mean()

    return TrainingRun(
        TrainerKind.FEDAVG,
        cfg,
        normalization,
        {GLOBAL: w},
        {GLOBAL: gstats},
        loss_trace,
        consensus,
        graph=graph,
        flags=_minority_flags(sites),
        history=hist,
    )


def node_stats(
    cohort: Cohort, graph: EmpiricalGraph, mode: NormalizationMode
) -> tuple[dict[str, FeatureStats], list[str]]:
    """Statistics each peer normalises with, plus flags for isolated nodes."""
    own = {s.site_id: site_stats(s) for s in cohort.sites}
    flags: list[str] = []
    if mode is NormalizationMode.PER_SITE:
        return own, flags
    if mode is NormalizationMode.NEIGHBORHOOD:
        out = {}
        for k in cohort.site_ids:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", IsolatedNodeWarning)
                out[k] = neighborhood_stats(k, graph, own)
            if caught:
                flags.append(f"isolated node {k}: own statistics")
        return out, flags
    if mode in (NormalizationMode.FEDERATED_SIMPLE, NormalizationMode.FEDERATED_DECOMPOSED):
        g = federated_stats([own[k] for k in sorted(own)], mode)
        return {k: g for k in own}, flags
    if mode is NormalizationMode.CENTRALIZED_GLOBAL:
        g = centralized_stats(cohort)
        return {k: g for k in own}, flags
    raise TrainingError(f"unsupported normalization {mode}")


def train_fedgd(
    cohort: Cohort,
    graph: EmpiricalGraph,
    cfg: SolverConfig,
    *,
    normalization: NormalizationMode | None = None,
    record_history: bool = False,
) -> TrainingRun:
    """Peer-to-peer gradient descent on the sum of local losses plus a graph penalty.

    Every site takes one synchronous step on
    ``L_k(w_k) + alpha * sum_j A_kj ||w_k - w_j||^2`` per round, reading its
    neighbours' previous-round weights; each edge contributes
    ``2 * alpha * A_kj * (w_k - w_j)`` to node ``k``'s gradient.
    Normalisation defaults to neighbourhood statistics when ``alpha > 0`` and
    per-site statistics when ``alpha == 0``.
    """
    _check_sites(graph, cohort, Architecture.PEER_TO_PEER)
    if normalization is None:
        normalization = NormalizationMode.NEIGHBORHOOD if cfg.alpha > 0 else NormalizationMode.PER_SITE
    normalization = NormalizationMode(normalization)
    sites = list(cohort.sites)
    ids = [s.site_id for s in sites]
    stats, flags = node_stats(cohort, graph, normalization)
    if cfg.alpha > 0:
        flags += [f"isolated node {k}: trained site-specifically" for k in ids if graph.degree(k) == 0]
    flags += _minority_flags(sites)

    stack = _SiteStack([(augment(zscore_array(s.X, stats[s.site_id])), s.y) for s in sites])
    index = {k: i for i, k in enumerate(ids)}
    a = np.array([index[e[0]] for e in graph.edges], dtype=int)
    b = np.array([index[e[1]] for e in graph.edges], dtype=int)
    A = np.array([e[2] for e in graph.edges])
    # directed message lists: each undirected edge is a message in both directions
    src = np.concatenate([a, b])
    dst = np.concatenate([b, a])
    Aw = np.concatenate([A, A])[:, None]

    K, p = len(sites), cohort.d + 1
    lr, two_alpha = cfg.learning_rate, 2.0 * cfg.alpha
    T = cfg.global_iterations
    loss_trace = np.empty(T)
    consensus = np.zeros(T)
    hist = np.empty((T, K, p)) if record_history else None

    W = np.zeros((K, p))
    losses, G = stack.loss_and_grad(W)
    for t in range(T):
        coupling = np.zeros((K, p))
        np.add.at(coupling, src, Aw * (W[src] - W[dst]))
        W = W - lr * (G + two_alpha * coupling)
        if not np.all(np.isfinite(W)):
            raise DivergenceError(t + 1, "fedgd")
        if len(a):
            consensus[t] = np.sqrt(((W[a] - W[b]) ** 2).sum(axis=1)).max()
        if hist is not None:
            hist[t] = W
        losses, G = stack.loss_and_grad(W)
        loss_trace[t] = losses.mean()
        _progress("fedgd", t, T, loss_trace[t])

    return TrainingRun(
        TrainerKind.FEDGD,
        cfg,
        normalization,
        {k: W[i].copy() for i, k in enumerate(ids)},
        stats,
        loss_trace,
        consensus,
        graph=graph,
        flags=flags,
        history=hist,
    )
