"""Z-scoring under per-site, pooled, federated and neighbourhood statistics."""
from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .cohort import Cohort, SiteDataset

DEFAULT_EPSILON = 1e-8


class NormalizationMode(str, enum.Enum):
    PER_SITE = "per-site"
    CENTRALIZED_GLOBAL = "centralized-global"
    FEDERATED_SIMPLE = "federated-simple"
    FEDERATED_DECOMPOSED = "federated-decomposed"
    NEIGHBORHOOD = "neighborhood"


class IsolatedNodeWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class FeatureStats:
    mean: np.ndarray
    variance: np.ndarray
    source: str = "site"

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float)
        var = np.array(self.variance, dtype=float)
        if mean.ndim != 1 or mean.shape != var.shape:
            raise ValueError(f"mean/variance shapes {mean.shape} and {var.shape} must be equal 1-D")
        if np.any(var < 0):
            raise ValueError("variance must be non-negative")
        mean.setflags(write=False)
        var.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "variance": self.variance.tolist(), "source": self.source}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: Mapping) -> "FeatureStats":
        return cls(np.asarray(obj["mean"]), np.asarray(obj["variance"]), obj.get("source", "site"))

    def __eq__(self, other):
        if not isinstance(other, FeatureStats):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.variance, other.variance)

    __hash__ = None


def site_stats(site: SiteDataset) -> FeatureStats:
    """Mean and population variance of each feature column."""
    mean = site.X.mean(axis=0)
    var = ((site.X - mean) ** 2).mean(axis=0)
    return FeatureStats(mean, var, f"site {site.site_id}")


def centralized_stats(cohort: Cohort) -> FeatureStats:
    s = site_stats(cohort.pooled())
    return FeatureStats(s.mean, s.variance, "global")


def federated_stats(
    stats: Sequence[FeatureStats],
    mode: NormalizationMode = NormalizationMode.FEDERATED_SIMPLE,
    source: str = "global",
) -> FeatureStats:
    """Combine site statistics without access to raw rows.

    Means and variances are averaged with equal weight per site. The
    decomposed mode adds the between-site spread of the means to the variance.
    """
    mode = NormalizationMode(mode)
    if mode not in (NormalizationMode.FEDERATED_SIMPLE, NormalizationMode.FEDERATED_DECOMPOSED):
        raise ValueError(f"federated_stats does not handle mode {mode.value}")
    if not stats:
        raise ValueError("need at least one site's stats")
    d = stats[0].d
    if any(s.d != d for s in stats):
        raise ValueError(f"dimension mismatch among site stats: {[s.d for s in stats]}")
    means = np.stack([s.mean for s in stats])
    variances = np.stack([s.variance for s in stats])
    mu = means.mean(axis=0)
    var = variances.mean(axis=0)
    if mode is NormalizationMode.FEDERATED_DECOMPOSED:
        var = var + ((means - mu) ** 2).mean(axis=0)
    return FeatureStats(mu, var, source)


def neighborhood_stats(k: str, graph, all_stats: Mapping[str, FeatureStats]) -> FeatureStats:
    """Simple-rule average over node ``k`` and its neighbours.

    A node without neighbours keeps its own statistics and an
    :class:`IsolatedNodeWarning` is emitted.
    """
    nbrs = [j for j, _ in graph.neighbors(k)]
    if not nbrs:
        warnings.warn(f"node {k!r} has no neighbours; using its own statistics", IsolatedNodeWarning, stacklevel=2)
        own = all_stats[k]
        return FeatureStats(own.mean, own.variance, f"neighborhood of {k}")
    members = sorted([k, *nbrs])
    return federated_stats([all_stats[j] for j in members], NormalizationMode.FEDERATED_SIMPLE, f"neighborhood of {k}")


def apply_zscore(data: SiteDataset, stats: FeatureStats, epsilon: float = DEFAULT_EPSILON) -> SiteDataset:
    if stats.d != data.d:
        raise ValueError(f"stats have d={stats.d}, data has d={data.d}")
    return data.with_features(zscore_array(data.X, stats, epsilon))


def zscore_array(X: np.ndarray, stats: FeatureStats, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    return (X - stats.mean) / np.maximum(stats.std, epsilon)
