"""Alternative weights for sampled centers.

Exact cluster sizes are not computable from the tables, so each center's
weight is assembled from geometric rings instead: balls around the center
holding roughly 2^j points are found by radius search, test points are
drawn near-uniformly from each ball, and the fraction of ring points
closest to the center contributes f * 2^(j-1) to its weight whenever the
fraction clears a threshold.  Individually the weights may be poor, but in
aggregate the weighted centers behave as a coreset.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .ballcount import (
    BallSampler,
    TargetExceedsN,
    distance_profile,
    radius_for_count,
)
from .relational import JoinTree, Table
from .sumprod import JoinEvaluator

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WeightConfig:
    """Accuracy knobs; ``delta`` defaults to ``epsilon / 2``.

    ``max_ring_samples`` caps the per-ring test draws (the uncapped formula
    grows with the square of the center count); capping is logged.
    """

    epsilon: float = 0.1
    delta: float | None = None
    tau: int = 30
    seed: int = 0
    max_ring_samples: int | None = None

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 0.2:
            raise ValueError("epsilon must lie in (0, 0.2]")
        if self.tau < 30:
            raise ValueError("tau must be at least 30")
        if self.delta is not None and self.delta > self.epsilon / 2:
            raise ValueError("delta must not exceed epsilon / 2")

    @property
    def ball_slack(self) -> float:
        return self.delta if self.delta is not None else self.epsilon / 2


@dataclass(frozen=True)
class RingStats:
    """Per (center, ring) telemetry: radius, donut sample count, wins, ratio."""

    center_index: int
    ring_index: int
    sq_radius: float
    samples: int
    wins: int
    ratio: float


@dataclass(frozen=True, eq=False)
class WeightedCoreset:
    """Sampled centers with their accumulated weights; duplicate centers
    share one weight, assigned to the lowest original index."""

    centers: np.ndarray
    weights: np.ndarray
    alias: dict[int, int]


def nearest_center(point: np.ndarray, centers: np.ndarray) -> int:
    """Index of the closest center, ties to the lowest index."""
    diffs = np.asarray(centers, dtype=np.float64) - np.asarray(point)
    return int(np.argmin(np.einsum("ij,ij->i", diffs, diffs)))


def ring_sample_size(cfg: WeightConfig, n_centers: int, n_rows: int) -> int:
    """ceil(tau / eps^2 * k'^2 * log2(N)^2), subject to the configured cap."""
    lg = math.log2(n_rows)
    size = math.ceil(cfg.tau / cfg.epsilon ** 2 * n_centers ** 2 * lg ** 2)
    if cfg.max_ring_samples is not None and size > cfg.max_ring_samples:
        log.warning("capping ring sample size %d at %d", size, cfg.max_ring_samples)
        return cfg.max_ring_samples
    return size


def compute_weights(tree: JoinTree, tables: list[Table],
                    centers: list[np.ndarray] | np.ndarray,
                    cfg: WeightConfig | None = None,
                    ) -> tuple[WeightedCoreset, list[RingStats]]:
    """Weights for the sampled centers via ring-wise test sampling.

    Deterministic given ``cfg.seed``: the RNG for ring (i, j) is split from
    the master seed by spawn key.
    """
    cfg = cfg or WeightConfig()
    cs = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    k_prime = cs.shape[0]
    if k_prime == 0:
        raise ValueError("no centers to weigh")

    ev = JoinEvaluator(tree, tables)
    n_rows = int(ev.count_scalar())
    if n_rows < 2:
        raise ValueError("weighting needs a join with at least 2 rows")

    lg = math.log2(n_rows)
    n_rings = math.ceil(lg)
    threshold = 1.0 / (2.0 * k_prime ** 2 * lg)
    n_test = ring_sample_size(cfg, k_prime, n_rows)
    bucket_delta = cfg.epsilon / (2 * len(tables))

    alias: dict[int, int] = {}
    seen: dict[bytes, int] = {}
    for i in range(k_prime):
        alias[i] = seen.setdefault(cs[i].tobytes(), i)

    weights = np.zeros(k_prime)
    stats: list[RingStats] = []
    for i in range(k_prime):
        if alias[i] != i:
            continue
        center = cs[i]
        profile = distance_profile(tree, tables, center, bucket_delta)
        assert profile.total >= 1, "smallest ball around a center is empty"
        sampler = BallSampler(tree, tables, center, bucket_delta)
        prev_radius = profile.smallest_radius_for(1)
        for j in range(1, n_rings + 1):
            try:
                r_j = radius_for_count(tree, tables, center, 2 ** j,
                                       cfg.ball_slack, profile=profile)
            except TargetExceedsN:
                r_j = math.inf  # outermost ball covers the whole space
            rng = np.random.Generator(np.random.Philox(
                np.random.SeedSequence(cfg.seed, spawn_key=(i, j))))
            if r_j <= prev_radius:
                stats.append(RingStats(i, j, r_j, 0, 0, 0.0))
                continue
            draws = sampler.sample_batch(r_j, n_test, rng)
            d2_own = np.einsum("ij,ij->i", draws - center, draws - center)
            in_donut = (d2_own > prev_radius) & (d2_own <= r_j)
            s_ij = int(in_donut.sum())
            if s_ij:
                donut_pts = draws[in_donut]
                diffs = donut_pts[:, None, :] - cs[None, :, :]
                owner = np.argmin(np.einsum("ijk,ijk->ij", diffs, diffs), axis=1)
                t_ij = int((owner == i).sum())
                f_ij = t_ij / s_ij
            else:
                t_ij, f_ij = 0, 0.0
            if f_ij >= threshold:
                weights[i] += f_ij * 2.0 ** (j - 1)
            stats.append(RingStats(i, j, r_j, s_ij, t_ij, f_ij))
            prev_radius = r_j

    return WeightedCoreset(cs, weights, alias), stats
