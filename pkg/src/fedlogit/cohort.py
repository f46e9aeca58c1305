"""Multi-site binary-labelled cohorts: data model, CSV I/O, site merging, synthetic generation."""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np


class CohortError(ValueError):
    """Base class for cohort construction failures."""


class SchemaError(CohortError):
    pass


class ParseError(CohortError):
    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class IntegrityError(CohortError):
    pass


class GenerationError(CohortError):
    pass


class SmallCohortWarning(UserWarning):
    pass


class Participant(NamedTuple):
    id: str
    features: np.ndarray
    label: int


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SiteDataset:
    """One site's participants, stored column-wise.

    ``X`` has shape ``(n_k, d)``; ``y`` holds 0/1 labels. Arrays are copied and
    made read-only on construction.
    """

    site_id: str
    ids: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y)
        if X.ndim != 2:
            raise CohortError(f"site {self.site_id}: features must be 2-D, got shape {X.shape}")
        if X.shape[0] < 1:
            raise CohortError(f"site {self.site_id}: a site needs at least one participant")
        if y.shape != (X.shape[0],) or len(self.ids) != X.shape[0]:
            raise CohortError(f"site {self.site_id}: ids, features and labels differ in length")
        if not np.all(np.isfinite(X)):
            raise CohortError(f"site {self.site_id}: non-finite feature value")
        if not np.all((y == 0) | (y == 1)):
            raise CohortError(f"site {self.site_id}: labels must be 0 or 1")
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y.astype(np.int64)))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def positives(self) -> int:
        return int(self.y.sum())

    @property
    def participants(self) -> Iterator[Participant]:
        for pid, x, label in zip(self.ids, self.X, self.y):
            yield Participant(pid, x, int(label))

    def subset(self, mask: np.ndarray, site_id: str | None = None) -> "SiteDataset":
        mask = np.asarray(mask, dtype=bool)
        return SiteDataset(
            site_id if site_id is not None else self.site_id,
            tuple(i for i, keep in zip(self.ids, mask) if keep),
            self.X[mask],
            self.y[mask],
        )

    def with_features(self, X: np.ndarray) -> "SiteDataset":
        return SiteDataset(self.site_id, self.ids, X, self.y)

    def __eq__(self, other):
        if not isinstance(other, SiteDataset):
            return NotImplemented
        return (
            self.site_id == other.site_id
            and self.ids == other.ids
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
        )

    __hash__ = None


@dataclass(frozen=True, eq=True)
class Cohort:
    sites: tuple[SiteDataset, ...]
    d: int

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(self.sites))
        if not self.sites:
            raise CohortError("a cohort needs at least one site")
        seen_sites: set[str] = set()
        seen_ids: set[str] = set()
        for s in self.sites:
            if s.d != self.d:
                raise CohortError(f"site {s.site_id} has d={s.d}, cohort declares d={self.d}")
            if s.site_id in seen_sites:
                raise IntegrityError(f"duplicate site id {s.site_id!r}")
            seen_sites.add(s.site_id)
            for pid in s.ids:
                if pid in seen_ids:
                    raise IntegrityError(f"duplicate participant id {pid!r}")
                seen_ids.add(pid)

    @property
    def n(self) -> int:
        return sum(s.n for s in self.sites)

    @property
    def K(self) -> int:
        return len(self.sites)

    @property
    def site_ids(self) -> list[str]:
        return [s.site_id for s in self.sites]

    @property
    def positives(self) -> int:
        return sum(s.positives for s in self.sites)

    def site(self, site_id: str) -> SiteDataset:
        for s in self.sites:
            if s.site_id == site_id:
                return s
        raise KeyError(site_id)

    def pooled(self, site_id: str = "pooled") -> SiteDataset:
        return SiteDataset(
            site_id,
            tuple(i for s in self.sites for i in s.ids),
            np.vstack([s.X for s in self.sites]),
            np.concatenate([s.y for s in self.sites]),
        )

    def summary(self) -> list[dict]:
        return [{"site_id": s.site_id, "n_k": s.n, "positives": s.positives} for s in self.sites]

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


# ---------------------------------------------------------------- CSV


@dataclass(frozen=True)
class CsvSchema:
    id: str = "id"
    site: str = "site"
    label: str = "label"
    features: tuple[str, ...] | None = None  # None: every other column, in file order


def ingest_csv(path: str | Path, schema: CsvSchema | None = None) -> Cohort:
    """Read a cohort from a UTF-8 CSV with a header row.

    Sites appear in order of first occurrence; rows keep file order within a site.
    Rows with empty cells are rejected (no imputation).
    """
    schema = schema or CsvSchema()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        feature_cols = schema.features
        if feature_cols is None:
            feature_cols = tuple(h for h in header if h not in (schema.id, schema.site, schema.label))
        missing = [c for c in (schema.id, schema.site, schema.label, *feature_cols) if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}; header is {header}")
        if not feature_cols:
            raise SchemaError(f"{path}: no feature columns")
        col = {h: i for i, h in enumerate(header)}
        fidx = [col[c] for c in feature_cols]

        rows: dict[str, tuple[list[str], list[list[float]], list[int]]] = {}
        seen: set[str] = set()
        # row numbers count the header as row 1, matching what a spreadsheet shows
        for rowno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise ParseError(rowno, f"expected {len(header)} cells, found {len(rec)}")
            pid = rec[col[schema.id]].strip()
            site = rec[col[schema.site]].strip()
            if not pid or not site:
                raise ParseError(rowno, "empty id or site cell")
            lab = rec[col[schema.label]].strip()
            if lab not in ("0", "1", "0.0", "1.0"):
                raise ParseError(rowno, f"label {lab!r} is not 0 or 1")
            try:
                feats = [float(rec[i]) for i in fidx]
            except ValueError:
                bad = next(rec[i] for i in fidx if not _is_float(rec[i]))
                raise ParseError(rowno, f"non-numeric feature cell {bad!r}") from None
            if not all(math.isfinite(v) for v in feats):
                raise ParseError(rowno, "non-finite feature value")
            if pid in seen:
                raise IntegrityError(f"row {rowno}: duplicate participant id {pid!r}")
            seen.add(pid)
            ids, xs, ys = rows.setdefault(site, ([], [], []))
            ids.append(pid)
            xs.append(feats)
            ys.append(int(float(lab)))

    if not rows:
        raise SchemaError(f"{path}: no data rows")
    sites = tuple(SiteDataset(s, tuple(ids), np.array(xs), np.array(ys)) for s, (ids, xs, ys) in rows.items())
    return Cohort(sites, len(feature_cols))


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def emit_csv(cohort: Cohort, path: str | Path) -> None:
    """Write ``id, site, label, f1..fd`` with 17 significant digits, the inverse of :func:`ingest_csv`."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "site", "label", *(f"f{j + 1}" for j in range(cohort.d))])
        for s in cohort.sites:
            for pid, x, label in zip(s.ids, s.X, s.y):
                w.writerow([pid, s.site_id, int(label), *(f"{v:.17g}" for v in x)])


# ---------------------------------------------------------------- merging


def merge_small_sites(cohort: Cohort, min_size: int = 10) -> Cohort:
    """Pool sites with fewer than ``min_size`` participants.

    Undersized sites are visited in ascending site-id order and accumulated
    into a pool; the pool is closed as a new site once it reaches
    ``min_size``. Leftovers that never reach the threshold form one residual
    pool. Pooled site ids join the member ids with ``+``.
    """
    if min_size < 1:
        raise ValueError("min_size must be >= 1")
    if cohort.n < min_size:
        warnings.warn(
            f"cohort has {cohort.n} participants, fewer than min_size={min_size}; pooling everything",
            SmallCohortWarning,
            stacklevel=2,
        )
        ordered = sorted(cohort.sites, key=lambda s: s.site_id)
        return Cohort((_concat(ordered),), cohort.d)

    large = [s for s in cohort.sites if s.n >= min_size]
    small = sorted((s for s in cohort.sites if s.n < min_size), key=lambda s: s.site_id)
    if not small:
        return cohort

    pools: list[SiteDataset] = []
    bucket: list[SiteDataset] = []
    for s in small:
        bucket.append(s)
        if sum(b.n for b in bucket) >= min_size:
            pools.append(_concat(bucket))
            bucket = []
    if bucket:
        pools.append(_concat(bucket))
    return Cohort(tuple(sorted(large + pools, key=lambda s: s.site_id)), cohort.d)


def _concat(sites: Sequence[SiteDataset]) -> SiteDataset:
    if len(sites) == 1:
        return sites[0]
    return SiteDataset(
        "+".join(s.site_id for s in sites),
        tuple(i for s in sites for i in s.ids),
        np.vstack([s.X for s in sites]),
        np.concatenate([s.y for s in sites]),
    )


# ---------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class SyntheticCohortSpec:
    """Parameters of the synthetic multi-site generator.

    Site sizes follow a bounded Pareto law on ``[size_min, size_max]`` with
    tail index ``size_shape``; each site's positive rate is uniform on
    ``[pos_rate_min, pos_rate_max]``. Classes are spherical unit Gaussians
    whose means sit ``separation`` apart along a random direction. Every
    feature of every site is offset by ``+-site_shift_scale``.

    ``fixed_sites`` pins ``(size, positives)`` for the first sites, which is
    how a deliberately weak site is planted.
    """

    seed: int = 0
    K: int = 28
    d: int = 15
    size_min: int = 10
    size_max: int = 60
    size_shape: float = 1.0
    pos_rate_min: float = 0.1
    pos_rate_max: float = 0.7
    separation: float = 2.0
    site_shift_scale: float = 0.3
    fixed_sites: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        if self.K < 1:
            raise GenerationError("K must be >= 1")
        if self.d < 1:
            raise GenerationError("d must be >= 1")
        if not 1 <= self.size_min <= self.size_max:
            raise GenerationError("need 1 <= size_min <= size_max")
        if self.size_shape <= 0:
            raise GenerationError("size_shape must be > 0")
        if not 0.0 <= self.pos_rate_min <= self.pos_rate_max <= 1.0:
            raise GenerationError("positive-rate range must lie within [0, 1]")
        if self.separation < 0 or self.site_shift_scale < 0:
            raise GenerationError("separation and site_shift_scale must be >= 0")
        if len(self.fixed_sites) > self.K:
            raise GenerationError("more fixed sites than K")
        for size, pos in self.fixed_sites:
            if size < 1 or not 0 <= pos <= size:
                raise GenerationError(f"bad fixed site {(size, pos)}")


def site_sizes(spec: SyntheticCohortSpec, rng: np.random.Generator) -> np.ndarray:
    """Bounded-Pareto site sizes via inverse-CDF sampling."""
    lo, hi, a = float(spec.size_min), float(spec.size_max), spec.size_shape
    u = rng.random(spec.K)
    raw = lo * (1.0 - u * (1.0 - (lo / hi) ** a)) ** (-1.0 / a)
    return np.clip(np.floor(raw), spec.size_min, spec.size_max).astype(int)


def generate_synthetic(spec: SyntheticCohortSpec) -> Cohort:
    rng = np.random.default_rng(spec.seed)
    sizes = site_sizes(spec, rng)
    rates = rng.uniform(spec.pos_rate_min, spec.pos_rate_max, spec.K)
    direction = rng.standard_normal(spec.d)
    direction /= np.linalg.norm(direction)
    shifts = spec.site_shift_scale * rng.choice([-1.0, 1.0], size=(spec.K, spec.d))

    npos = np.rint(rates * sizes).astype(int)
    for k, (size, pos) in enumerate(spec.fixed_sites):
        sizes[k], npos[k] = size, pos
    if npos.sum() == 0 or (sizes - npos).sum() == 0:
        raise GenerationError("generator settings yield a single-class cohort; widen the positive-rate range")

    width = len(str(spec.K - 1))
    sites = []
    for k in range(spec.K):
        y = np.zeros(sizes[k], dtype=int)
        y[: npos[k]] = 1
        y = rng.permutation(y)
        centre = (y[:, None] - 0.5) * spec.separation * direction + shifts[k]
        X = centre + rng.standard_normal((sizes[k], spec.d))
        sid = f"site{k:0{width}d}"
        ids = tuple(f"{sid}-p{i:03d}" for i in range(sizes[k]))
        sites.append(SiteDataset(sid, ids, X, y))
    return Cohort(tuple(sites), spec.d)


def standard_spec(seed: int = 0, **overrides) -> SyntheticCohortSpec:
    """The reference 28-site cohort used throughout the experiments."""
    return SyntheticCohortSpec(seed=seed, **overrides)
