"""Statistical-simulation synthetic load generation plus the fidelity and
memorization checks used before any synthetic dataset leaves the platform.

The generator is deliberately simple and desk-scale verifiable: cluster
per-meter daily profiles, keep per-cluster hourly mean/std over member
days, and sample households as clamped normal draws around a cluster
profile plus Poisson-arriving appliance events. Neural generators are a
non-goal here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .meterdata import (
    EnergyQuantity,
    FeederDataset,
    MeterReading,
    ReadingSeries,
)

HOURS_PER_DAY = 24
SECONDS_PER_DAY = 86400
_REL_ERR_FLOOR = 1e-9
_KMEANS_ITERATIONS = 25
_HIST_BINS = 50


class SyntheticError(Exception):
    pass


class TooFewSeries(SyntheticError):
    pass


class EmptySeries(SyntheticError):
    pass


class EmptyDataset(SyntheticError):
    pass


@dataclass(frozen=True)
class ClusterProfile:
    weight: float
    hourly_mean: tuple[float, ...]  # kWh per hour, 24 entries
    hourly_std: tuple[float, ...]

    def __post_init__(self):
        if len(self.hourly_mean) != HOURS_PER_DAY or len(self.hourly_std) != HOURS_PER_DAY:
            raise ValueError("hourly profiles must have 24 entries")
        if any(s < 0 for s in self.hourly_std):
            raise ValueError("stds must be non-negative")


@dataclass(frozen=True)
class ApplianceEventModel:
    rate_per_day: float
    magnitude_kwh: float
    duration_intervals: int

    def __post_init__(self):
        if self.rate_per_day < 0:
            raise ValueError("rate_per_day must be non-negative")
        if self.magnitude_kwh <= 0:
            raise ValueError("magnitude_kwh must be positive")
        if self.duration_intervals < 1:
            raise ValueError("duration_intervals must be >= 1")


NO_EVENTS = ApplianceEventModel(rate_per_day=0.0, magnitude_kwh=1.0, duration_intervals=1)


@dataclass(frozen=True)
class GeneratorModel:
    clusters: tuple[ClusterProfile, ...]
    appliance_events: ApplianceEventModel = NO_EVENTS

    def __post_init__(self):
        total = sum(c.weight for c in self.clusters)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"cluster weights must sum to 1, got {total}")


@dataclass(frozen=True)
class FidelityReport:
    per_hour_mean_rel_err: tuple[float, ...]
    hist_l1: float  # L1 distance between normalized histograms, in [0, 2]
    peak_dist_rel_err: float


@dataclass(frozen=True)
class PrivacyCheckReport:
    min_nn_distance: float  # normalized RMS to the nearest real series
    memorization_flag: bool
    distinguisher_auc: float


def _hourly_day_rows(dataset: FeederDataset) -> list[np.ndarray]:
    """Per-meter matrices of complete-day hourly kWh, one row per day."""
    per_day_expected = SECONDS_PER_DAY // dataset.interval_s
    if per_day_expected * dataset.interval_s != SECONDS_PER_DAY or dataset.interval_s > 3600:
        raise SyntheticError("interval must divide one hour for hourly profiling")
    rows = []
    for s in dataset.series:
        days: dict[int, np.ndarray] = {}
        counts: dict[int, int] = {}
        for r in s.readings:
            day = r.timestamp // SECONDS_PER_DAY
            hour = (r.timestamp % SECONDS_PER_DAY) // 3600
            if day not in days:
                days[day] = np.zeros(HOURS_PER_DAY)
                counts[day] = 0
            days[day][hour] += r.energy.kwh
            counts[day] += 1
        complete = [days[d] for d in sorted(days) if counts[d] == per_day_expected]
        if not complete:
            raise EmptySeries(f"series {s.meter_id!r} has no complete day")
        rows.append(np.stack(complete))
    return rows


def fit(real: FeederDataset, n_clusters: int, seed: int) -> GeneratorModel:
    """Cluster per-meter average daily profiles and summarize each cluster.

    Seeded centroid clustering with a fixed iteration count; per-cluster
    hourly mean/std are computed over all member days, and weights are
    member fractions.
    """
    if n_clusters < 1:
        raise ValueError("n_clusters must be >= 1")
    if len(real.series) < n_clusters:
        raise TooFewSeries(f"{len(real.series)} series < {n_clusters} clusters")
    day_rows = _hourly_day_rows(real)
    profiles = np.stack([rows.mean(axis=0) for rows in day_rows])

    rng = np.random.default_rng(seed)
    init = rng.choice(len(profiles), size=n_clusters, replace=False)
    centroids = profiles[init].copy()
    assignment = np.zeros(len(profiles), dtype=int)
    for _ in range(_KMEANS_ITERATIONS):
        dists = ((profiles[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assignment = dists.argmin(axis=1)
        for c in range(n_clusters):
            members = profiles[assignment == c]
            if len(members):
                centroids[c] = members.mean(axis=0)

    clusters = []
    for c in range(n_clusters):
        member_idx = np.flatnonzero(assignment == c)
        member_days = np.concatenate([day_rows[i] for i in member_idx])
        clusters.append(
            ClusterProfile(
                weight=len(member_idx) / len(profiles),
                hourly_mean=tuple(member_days.mean(axis=0)),
                hourly_std=tuple(member_days.std(axis=0)),
            )
        )
    return GeneratorModel(clusters=tuple(clusters))


def generate(
    model: GeneratorModel,
    n_households: int,
    n_days: int,
    seed: int,
    jitter_milli: int = 0,
) -> FeederDataset:
    """Sample a synthetic hourly dataset from the model, deterministically.

    Each household draws a cluster by weight, then every interval is
    max(0, N(mean_h, std_h)) plus any active appliance-event contribution
    (Poisson arrivals per day, fixed magnitude over the event duration).
    Optional post-generation jitter adds uniform +-jitter_milli noise.
    Household h derives its own generator from (seed, h), so generation
    is order-independent and repeatable.
    """
    if n_households < 1 or n_days < 1:
        raise ValueError("n_households and n_days must be >= 1")
    interval_s = 3600
    horizon = n_days * HOURS_PER_DAY
    weights = np.array([c.weight for c in model.clusters])
    events = model.appliance_events

    series = []
    max_milli = 1
    for h in range(n_households):
        rng = np.random.default_rng([seed, h])
        cluster = model.clusters[rng.choice(len(weights), p=weights)]
        mean = np.tile(cluster.hourly_mean, n_days)
        std = np.tile(cluster.hourly_std, n_days)
        values = np.maximum(0.0, rng.normal(mean, std))
        if events.rate_per_day > 0:
            for day in range(n_days):
                for _ in range(rng.poisson(events.rate_per_day)):
                    start = day * HOURS_PER_DAY + int(rng.integers(0, HOURS_PER_DAY))
                    stop = min(start + events.duration_intervals, horizon)
                    values[start:stop] += events.magnitude_kwh
        milli = np.rint(values * 1000).astype(np.int64)
        if jitter_milli > 0:
            milli = milli + rng.integers(-jitter_milli, jitter_milli + 1, size=horizon)
        milli = np.maximum(milli, 0)
        max_milli = max(max_milli, int(milli.max()))
        meter_id = f"synth-{h:05d}"
        readings = tuple(
            MeterReading(
                meter_id=meter_id,
                timestamp=t * interval_s,
                interval_s=interval_s,
                energy=EnergyQuantity(int(milli[t])),
            )
            for t in range(horizon)
        )
        series.append(ReadingSeries(meter_id=meter_id, readings=readings))
    return FeederDataset(
        series=tuple(series), interval_s=interval_s, delta_max=EnergyQuantity(max_milli)
    )


def _hourly_means(dataset: FeederDataset) -> np.ndarray:
    sums = np.zeros(HOURS_PER_DAY)
    counts = np.zeros(HOURS_PER_DAY)
    for r in dataset.all_readings():
        hour = (r.timestamp % SECONDS_PER_DAY) // 3600
        sums[hour] += r.energy.kwh
        counts[hour] += 1
    means = np.zeros(HOURS_PER_DAY)
    nonzero = counts > 0
    means[nonzero] = sums[nonzero] / counts[nonzero]
    return means


def _daily_peak_mean(dataset: FeederDataset) -> float:
    peaks = []
    for s in dataset.series:
        by_day: dict[int, float] = {}
        for r in s.readings:
            day = r.timestamp // SECONDS_PER_DAY
            by_day[day] = max(by_day.get(day, 0.0), r.energy.kwh)
        peaks.extend(by_day.values())
    return float(np.mean(peaks))


def fidelity_report(real: FeederDataset, synth: FeederDataset) -> FidelityReport:
    """Aggregate-fidelity metrics: hourly means, value histogram, daily peaks."""
    if real.n_readings() == 0 or synth.n_readings() == 0:
        raise EmptyDataset("fidelity_report needs non-empty datasets")
    if real.interval_s != synth.interval_s:
        raise ValueError("datasets must share interval_s")

    mu_real = _hourly_means(real)
    mu_synth = _hourly_means(synth)
    rel_err = np.abs(mu_synth - mu_real) / np.maximum(mu_real, _REL_ERR_FLOOR)

    dmax = real.delta_max.kwh
    real_vals = np.clip([r.energy.kwh for r in real.all_readings()], 0, dmax)
    synth_vals = np.clip([r.energy.kwh for r in synth.all_readings()], 0, dmax)
    h_real, _ = np.histogram(real_vals, bins=_HIST_BINS, range=(0, dmax))
    h_synth, _ = np.histogram(synth_vals, bins=_HIST_BINS, range=(0, dmax))
    hist_l1 = float(np.abs(h_real / len(real_vals) - h_synth / len(synth_vals)).sum())

    peak_real = _daily_peak_mean(real)
    peak_synth = _daily_peak_mean(synth)
    peak_err = abs(peak_synth - peak_real) / max(peak_real, _REL_ERR_FLOOR)

    return FidelityReport(
        per_hour_mean_rel_err=tuple(rel_err),
        hist_l1=hist_l1,
        peak_dist_rel_err=float(peak_err),
    )


def _series_matrix(dataset: FeederDataset, length: int) -> np.ndarray:
    return np.stack(
        [[r.energy.kwh for r in s.readings[:length]] for s in dataset.series]
    )


def _pairwise_rms(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Squared-distance expansion keeps memory at O(|a|*|b|) not O(|a|*|b|*T).
    sq = (
        (a**2).sum(axis=1)[:, None]
        + (b**2).sum(axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.sqrt(np.maximum(sq, 0.0) / a.shape[1])


def _rank_auc(member_scores: np.ndarray, other_scores: np.ndarray) -> float:
    """P(member score < other score), ties at half weight (Mann-Whitney)."""
    if len(member_scores) == 0 or len(other_scores) == 0:
        return 0.5
    combined = np.concatenate([member_scores, other_scores])
    order = np.argsort(combined, kind="mergesort")
    ranks = np.empty(len(combined))
    ranks[order] = np.arange(1, len(combined) + 1)
    # Average ranks within tie groups.
    sorted_vals = combined[order]
    i = 0
    while i < len(sorted_vals):
        j = i
        while j + 1 < len(sorted_vals) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = (i + 1 + j + 1) / 2.0
        i = j + 1
    m = len(member_scores)
    u = ranks[:m].sum() - m * (m + 1) / 2.0
    return float(1.0 - u / (m * len(other_scores)))


def privacy_check(
    real: FeederDataset, synth: FeederDataset, threshold: float
) -> PrivacyCheckReport:
    """Nearest-neighbor memorization scan plus a membership distinguisher.

    min_nn_distance is the smallest normalized RMS distance from any
    synthetic series to any real series; the flag is set iff it falls
    below the threshold. The distinguisher splits the real series into
    two halves (even/odd index as member/held-out proxies), scores each
    real series by its distance to the nearest synthetic series, and
    reports the AUC of telling the halves apart: near 0.5 means the
    synthetic set does not single out training records.
    """
    if not real.series or not synth.series:
        raise EmptyDataset("privacy_check needs non-empty datasets")
    if real.interval_s != synth.interval_s:
        raise ValueError("datasets must share interval_s")
    length = min(
        min(len(s) for s in real.series), min(len(s) for s in synth.series)
    )
    if length == 0:
        raise EmptyDataset("series must be non-empty")
    real_mat = _series_matrix(real, length)
    synth_mat = _series_matrix(synth, length)
    dmax = real.delta_max.kwh

    dist = _pairwise_rms(synth_mat, real_mat) / dmax
    min_nn = float(dist.min())

    real_scores = dist.min(axis=0)  # per real series: nearest synthetic
    members = real_scores[0::2]
    held_out = real_scores[1::2]
    auc = _rank_auc(members, held_out)

    # An exact verbatim copy (distance 0) is flagged at any threshold,
    # including 0; otherwise the flag is the strict threshold comparison.
    flagged = min_nn < threshold or min_nn == 0.0
    return PrivacyCheckReport(
        min_nn_distance=min_nn,
        memorization_flag=flagged,
        distinguisher_auc=auc,
    )
