"""Federated averaging over simulated clients holding disjoint meter data.

The client model is a linear autoregression of interval kWh on four
features: previous interval, 96 intervals back, hour-of-day scaled to
[0, 1], and a bias term. Clients run full-batch gradient steps on mean
squared error, so the weighted average of per-client updates equals one
centralized full-batch step when local_steps = 1.

Secure aggregation adds canceling pairwise masks to fixed-point encoded
updates (scale 1e-6, modulus 2^64): the coordinator sees only masked
vectors, and the modular sum of the masked vectors equals the sum of the
quantized unmasked ones, exactly. Optional DP noising clips the update
to a norm bound and adds per-coordinate Gaussian noise before upload.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .meterdata import ReadingSeries

FX_SCALE = 10**6  # real <-> fixed-point quantization step of 1e-6
MASK_MODULUS = 2**64
LAG_LONG = 96  # one day of 15-minute intervals
N_FEATURES = 4


class FedLearnError(Exception):
    pass


class NoTrainingData(FedLearnError):
    pass


class EmptyUpdateList(FedLearnError):
    pass


class DimensionMismatch(FedLearnError):
    pass


class ClipNormMissing(FedLearnError):
    pass


class MissingPeerSeed(FedLearnError):
    pass


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Weight vector (fixed dimension, bias included); immutable."""

    weights: np.ndarray

    def __post_init__(self):
        arr = np.array(self.weights, dtype=float)
        if arr.ndim != 1:
            raise ValueError("weights must be a 1-D vector")
        if not np.all(np.isfinite(arr)):
            raise ValueError("weights must all be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "weights", arr)

    @property
    def dim(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class ClientUpdate:
    client_id: str
    weights: ModelParams
    n_samples: int
    masked: bool = False
    # Masked payload: fixed-point coordinates mod 2^64. Present iff masked,
    # because 64-bit masked values do not fit a float64 exactly.
    fixed_values: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.masked != (self.fixed_values is not None):
            raise ValueError("masked updates carry fixed_values; unmasked must not")


@dataclass(frozen=True)
class RoundConfig:
    rounds: int = 1
    local_steps: int = 1
    learning_rate: float = 0.01
    clip_norm: float | None = None
    dp_sigma: float = 0.0

    def __post_init__(self):
        if self.rounds < 1 or self.local_steps < 1:
            raise ValueError("rounds and local_steps must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.dp_sigma < 0:
            raise ValueError("dp_sigma must be non-negative")
        if self.dp_sigma > 0 and self.clip_norm is None:
            raise ValueError("dp_sigma > 0 requires clip_norm")


@dataclass(frozen=True)
class RoundMetrics:
    round_index: int
    mse: float


@dataclass(frozen=True)
class FederationResult:
    final: ModelParams
    history: tuple[RoundMetrics, ...]


def extract_examples(series_set: Iterable[ReadingSeries]) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrix and targets for the lag-1/lag-96/hour/bias model."""
    feats: list[list[float]] = []
    targets: list[float] = []
    for s in series_set:
        kwh = [r.energy.kwh for r in s.readings]
        for t in range(LAG_LONG, len(kwh)):
            hour = (s.readings[t].timestamp // 3600) % 24
            feats.append([kwh[t - 1], kwh[t - LAG_LONG], hour / 23.0, 1.0])
            targets.append(kwh[t])
    if not feats:
        return np.empty((0, N_FEATURES)), np.empty((0,))
    return np.array(feats), np.array(targets)


def _gradient_step(X: np.ndarray, y: np.ndarray, w: np.ndarray, lr: float) -> np.ndarray:
    residual = X @ w - y
    grad = (2.0 / len(y)) * (X.T @ residual)
    return w - lr * grad


def local_train(
    data: Iterable[ReadingSeries],
    global_params: ModelParams,
    cfg: RoundConfig,
    client_id: str = "",
) -> ClientUpdate:
    """Run cfg.local_steps full-batch MSE gradient steps on the client's data."""
    X, y = extract_examples(data)
    if len(y) == 0:
        raise NoTrainingData(f"client {client_id!r} has no training examples")
    w = np.array(global_params.weights, dtype=float)
    for _ in range(cfg.local_steps):
        w = _gradient_step(X, y, w, cfg.learning_rate)
    return ClientUpdate(client_id=client_id, weights=ModelParams(w), n_samples=len(y))


def fed_avg(updates: Sequence[ClientUpdate]) -> ModelParams:
    """Weighted mean of client weights by sample count."""
    if not updates:
        raise EmptyUpdateList("need at least one client update")
    if any(u.masked for u in updates):
        raise ValueError("fed_avg operates on unmasked updates")
    dim = updates[0].weights.dim
    if any(u.weights.dim != dim for u in updates):
        raise DimensionMismatch("all weight vectors must share one dimension")
    total = sum(u.n_samples for u in updates)
    stacked = np.stack([u.weights.weights for u in updates])
    counts = np.array([u.n_samples for u in updates], dtype=float)
    return ModelParams((stacked * counts[:, None]).sum(axis=0) / total)


def encode_fixed(vec: np.ndarray) -> tuple[int, ...]:
    """Quantize reals to 1e-6 and reduce mod 2^64 (two's complement)."""
    return tuple(round(float(v) * FX_SCALE) % MASK_MODULUS for v in vec)


def decode_fixed(values: Sequence[int]) -> np.ndarray:
    """Inverse of encode_fixed for values within +-M/2 of zero."""
    out = []
    for v in values:
        v %= MASK_MODULUS
        if v >= MASK_MODULUS // 2:
            v -= MASK_MODULUS
        out.append(v / FX_SCALE)
    return np.array(out)


def _pair_mask_stream(seed: int, dim: int) -> list[int]:
    prg = random.Random(seed)
    return [prg.getrandbits(64) for _ in range(dim)]


def mask_update(update: ClientUpdate, pairwise_seeds: Mapping[str, int]) -> ClientUpdate:
    """Add canceling pairwise masks to the fixed-point encoding of the update.

    Peers with a lexically greater id contribute +PRG(seed), smaller ids
    contribute -PRG(seed); over all participants the masks sum to zero
    mod 2^64, so the aggregate of masked updates is the exact aggregate
    of quantized unmasked ones.
    """
    if update.client_id in pairwise_seeds:
        raise MissingPeerSeed("pairwise_seeds must map peers only, not the client itself")
    if any(seed is None for seed in pairwise_seeds.values()):
        raise MissingPeerSeed("every participating peer needs a shared seed")
    fixed = list(encode_fixed(update.weights.weights))
    for peer_id, seed in pairwise_seeds.items():
        stream = _pair_mask_stream(seed, len(fixed))
        sign = 1 if peer_id > update.client_id else -1
        for k in range(len(fixed)):
            fixed[k] = (fixed[k] + sign * stream[k]) % MASK_MODULUS
    return ClientUpdate(
        client_id=update.client_id,
        weights=update.weights,
        n_samples=update.n_samples,
        masked=True,
        fixed_values=tuple(fixed),
    )


def aggregate_masked(updates: Sequence[ClientUpdate]) -> np.ndarray:
    """Modular sum of masked payloads, decoded back to reals.

    Equals the sum of the participants' quantized weight vectors because
    the pairwise masks cancel exactly.
    """
    if not updates:
        raise EmptyUpdateList("need at least one masked update")
    if any(not u.masked or u.fixed_values is None for u in updates):
        raise ValueError("aggregate_masked operates on masked updates")
    dim = len(updates[0].fixed_values)
    if any(len(u.fixed_values) != dim for u in updates):
        raise DimensionMismatch("all masked payloads must share one dimension")
    total = [0] * dim
    for u in updates:
        for k, v in enumerate(u.fixed_values):
            total[k] = (total[k] + v) % MASK_MODULUS
    return decode_fixed(total)


def dp_noise_update(
    update: ClientUpdate, cfg: RoundConfig, rng: random.Random
) -> ClientUpdate:
    """Clip the update to cfg.clip_norm, then add N(0, dp_sigma^2) per coordinate."""
    if cfg.clip_norm is None:
        raise ClipNormMissing("dp_noise_update requires cfg.clip_norm")
    w = np.array(update.weights.weights, dtype=float)
    norm = float(np.linalg.norm(w))
    if norm > cfg.clip_norm:
        w = w * (cfg.clip_norm / norm)
    if cfg.dp_sigma > 0:
        w = w + np.array([rng.gauss(0.0, cfg.dp_sigma) for _ in range(len(w))])
    return ClientUpdate(
        client_id=update.client_id, weights=ModelParams(w), n_samples=update.n_samples
    )


def _derived_seed(*parts: object) -> int:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _split_shard(
    shard: Sequence[ReadingSeries],
) -> tuple[list[ReadingSeries], list[ReadingSeries]]:
    # Clients with more than one series hold their last one out for eval.
    if len(shard) > 1:
        return list(shard[:-1]), [shard[-1]]
    return list(shard), []


def run_federation(
    clients: Sequence[Sequence[ReadingSeries]],
    cfg: RoundConfig,
    seed: int,
    secure_agg: bool = False,
) -> FederationResult:
    """Execute the round protocol: broadcast, local train, aggregate.

    Per round: every client trains from the current global model; updates
    are optionally DP-noised and optionally masked for secure aggregation;
    the coordinator forms the sample-weighted mean and records global MSE
    on the held-out split. Clients raising NoTrainingData are excluded
    from the round and from the weighting denominator. Per-client RNG is
    derived from (seed, client_id, round), so scheduling order is
    irrelevant.
    """
    if not clients:
        raise FedLearnError("need at least one client")
    splits = [_split_shard(shard) for shard in clients]
    holdout_series = [s for _, held in splits for s in held]
    X_hold, y_hold = extract_examples(holdout_series)

    global_w = np.zeros(N_FEATURES)
    history: list[RoundMetrics] = []
    for rnd in range(cfg.rounds):
        updates: list[ClientUpdate] = []
        for i, (train_series, _) in enumerate(splits):
            client_id = f"client-{i:03d}"
            try:
                update = local_train(train_series, ModelParams(global_w), cfg, client_id)
            except NoTrainingData:
                continue
            if cfg.dp_sigma > 0:
                rng = random.Random(_derived_seed(seed, client_id, rnd))
                update = dp_noise_update(update, cfg, rng)
            updates.append(update)
        if not updates:
            raise NoTrainingData("no client produced a training update")

        if secure_agg:
            total_n = sum(u.n_samples for u in updates)
            masked = []
            for u in updates:
                peer_seeds = {
                    v.client_id: _derived_seed(seed, rnd, *sorted((u.client_id, v.client_id)))
                    for v in updates
                    if v.client_id != u.client_id
                }
                scaled = ClientUpdate(
                    client_id=u.client_id,
                    weights=ModelParams(u.weights.weights * u.n_samples),
                    n_samples=u.n_samples,
                )
                masked.append(mask_update(scaled, peer_seeds))
            global_w = aggregate_masked(masked) / total_n
        else:
            global_w = np.array(fed_avg(updates).weights)

        if len(y_hold):
            mse = float(np.mean((X_hold @ global_w - y_hold) ** 2))
        else:
            mse = math.nan
        history.append(RoundMetrics(round_index=rnd, mse=mse))

    return FederationResult(final=ModelParams(global_w), history=tuple(history))
