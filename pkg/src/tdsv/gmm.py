"""Diagonal-covariance GMMs: EM training, frame posteriors, sufficient
statistics, MAP mean adaptation, and background-model likelihood-ratio scoring.

All density math stays in the log domain; mixtures are combined with
log-sum-exp so high-dimensional products cannot underflow. First-order
statistics use the mean-offset convention F_c = sum_t P(c|x_t) (x_t - mu_c),
which makes the MAP update mu_hat = F / (N + r) + mu and feeds the i-vector
extractor without re-centering.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionMismatchError, InsufficientDataError, ModelShapeMismatchError

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class Gmm:
    """Mixture of diagonal Gaussians. Immutable after construction."""

    weights: np.ndarray    # (C,)
    means: np.ndarray      # (C, D)
    variances: np.ndarray  # (C, D), strictly positive

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        if self.weights.ndim != 1 or self.means.shape != self.variances.shape \
                or len(self.weights) != self.means.shape[0]:
            raise ValueError("inconsistent GMM parameter shapes")
        if abs(float(self.weights.sum()) - 1.0) > 1e-8:
            raise ValueError(f"weights sum to {self.weights.sum()}, expected 1")
        if np.any(self.variances <= 0):
            raise ValueError("variances must be strictly positive")
        for arr in (self.weights, self.means, self.variances):
            arr.setflags(write=False)
        # cached per-component terms of the log density
        self._log_w = np.log(np.maximum(self.weights, 1e-300))
        self._inv_var = 1.0 / self.variances
        self._log_const = -0.5 * (
            self.dim * _LOG_2PI + np.sum(np.log(self.variances), axis=1)
        )

    @property
    def num_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass
class GmmStats:
    """Zero-order mass and mean-offset first-order sums per component.

    Accumulators merge by elementwise addition, so partitioned corpora can
    be accumulated in parallel and summed.
    """

    n: np.ndarray  # (C,)
    f: np.ndarray  # (C, D)

    @classmethod
    def zeros(cls, num_components: int, dim: int) -> "GmmStats":
        return cls(n=np.zeros(num_components), f=np.zeros((num_components, dim)))

    def __add__(self, other: "GmmStats") -> "GmmStats":
        return GmmStats(n=self.n + other.n, f=self.f + other.f)


@dataclass(frozen=True)
class MapConfig:
    """Relevance factor of the MAP mean update."""

    relevance_factor: float = 16.0

    def __post_init__(self):
        if self.relevance_factor < 0:
            raise ValueError("relevance factor must be >= 0")


@dataclass(frozen=True)
class GmmTrainConfig:
    iterations_per_stage: int = 4      # EM iterations after each mixture split
    split_perturbation: float = 0.1    # mean offset in units of the stddev
    variance_floor_scale: float = 1e-3  # of the global per-dimension variance
    degenerate_mass: float = 1e-6      # N_c below this keeps the old component


def _as_frames(frames, dim: int) -> np.ndarray:
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if frames.shape[1] != dim:
        raise DimensionMismatchError(f"frames have dim {frames.shape[1]}, model has {dim}")
    return frames


def component_log_likelihoods(gmm: Gmm, frames) -> np.ndarray:
    """(T, C) matrix of log(w_c N(x_t | mu_c, Sigma_c))."""
    frames = _as_frames(frames, gmm.dim)
    quad = (
        (frames**2) @ gmm._inv_var.T
        - 2.0 * frames @ (gmm.means * gmm._inv_var).T
        + np.sum(gmm.means**2 * gmm._inv_var, axis=1)
    )
    return gmm._log_w + gmm._log_const - 0.5 * quad


def frame_log_likelihoods(gmm: Gmm, frames) -> np.ndarray:
    """(T,) per-frame mixture log densities."""
    return logsumexp(component_log_likelihoods(gmm, frames), axis=1)


def gmm_log_likelihood(gmm: Gmm, frame) -> float:
    """Log density of a single frame under the full mixture."""
    return float(frame_log_likelihoods(gmm, np.atleast_2d(frame))[0])


def responsibilities(gmm: Gmm, frames) -> np.ndarray:
    """(T, C) posterior of each component given each frame; rows sum to 1."""
    log_comp = component_log_likelihoods(gmm, frames)
    return np.exp(log_comp - logsumexp(log_comp, axis=1, keepdims=True))


def gmm_posteriors(gmm: Gmm, frame) -> np.ndarray:
    """Per-component posterior for one frame (the frame alignment)."""
    return responsibilities(gmm, np.atleast_2d(frame))[0]


def accumulate_stats(gmm: Gmm, frames) -> GmmStats:
    """Accumulate zero- and first-order statistics over a frame set."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.size == 0:
        return GmmStats.zeros(gmm.num_components, gmm.dim)
    resp = responsibilities(gmm, frames)
    n = resp.sum(axis=0)
    f = resp.T @ np.atleast_2d(frames) - n[:, None] * gmm.means
    return GmmStats(n=n, f=f)


def map_adapt(ubm: Gmm, stats: GmmStats, config: MapConfig = MapConfig()) -> Gmm:
    """MAP-update the component means; weights and variances stay at the UBM.

    mu_hat_c = F_c / (N_c + r) + mu_c. Components with N_c + r = 0 keep
    their prior mean.
    """
    denom = stats.n + config.relevance_factor
    alpha = np.where(denom > 0, 1.0 / np.where(denom > 0, denom, 1.0), 0.0)
    means = alpha[:, None] * stats.f + ubm.means
    return Gmm(weights=ubm.weights, means=means, variances=ubm.variances)


def score_gmm_ubm(speaker: Gmm, ubm: Gmm, frames) -> float:
    """Total log-likelihood ratio of the frames, speaker over background.

    No duration normalization is applied; repeating a frame k times scales
    the score by k.
    """
    if speaker.num_components != ubm.num_components or speaker.dim != ubm.dim:
        raise ModelShapeMismatchError(
            f"speaker model ({speaker.num_components}x{speaker.dim}) does not match "
            f"UBM ({ubm.num_components}x{ubm.dim})"
        )
    frames = _as_frames(frames, ubm.dim)
    return float(np.sum(frame_log_likelihoods(speaker, frames)
                        - frame_log_likelihoods(ubm, frames)))


def component_log_densities(gmm: Gmm, frames) -> np.ndarray:
    """(T, C) matrix of log N(x_t | mu_c, Sigma_c), weights excluded."""
    return component_log_likelihoods(gmm, frames) - gmm._log_w


def split_components(gmm: Gmm, target: int, perturbation: float = 0.1) -> Gmm:
    """Binary-split the heaviest components until `target` is reached."""
    weights = list(gmm.weights)
    means = list(gmm.means)
    variances = list(gmm.variances)
    n_new = min(len(weights), target - len(weights))
    order = sorted(range(len(weights)), key=lambda c: (-weights[c], c))[:n_new]
    for c in order:
        offset = perturbation * np.sqrt(variances[c])
        weights.append(weights[c] / 2.0)
        means.append(means[c] + offset)
        variances.append(variances[c].copy())
        weights[c] = weights[c] / 2.0
        means[c] = means[c] - offset
    return Gmm(weights=np.array(weights), means=np.array(means),
               variances=np.array(variances))


def em_step(gmm: Gmm, frames: np.ndarray, variance_floor: np.ndarray,
            degenerate_mass: float = 1e-6) -> tuple[Gmm, float]:
    """One EM iteration. Returns the updated model and the log-likelihood
    of the data under the *input* model."""
    log_comp = component_log_likelihoods(gmm, frames)
    log_norm = logsumexp(log_comp, axis=1, keepdims=True)
    loglik = float(np.sum(log_norm))
    resp = np.exp(log_comp - log_norm)

    n = resp.sum(axis=0)
    total = frames.shape[0]
    weights = n / total
    means = gmm.means.copy()
    variances = gmm.variances.copy()
    live = n > degenerate_mass
    if not np.all(live):
        warnings.warn(
            f"{int(np.sum(~live))} GMM component(s) received no posterior mass; "
            "keeping previous parameters with floor weight",
            RuntimeWarning,
        )
        weights[~live] = degenerate_mass / total
        weights = weights / weights.sum()
    idx = np.where(live)[0]
    means[idx] = (resp[:, idx].T @ frames) / n[idx, None]
    second = (resp[:, idx].T @ (frames**2)) / n[idx, None]
    variances[idx] = np.maximum(second - means[idx] ** 2, variance_floor)
    return Gmm(weights=weights, means=means, variances=variances), loglik


def train_gmm_em(
    frames,
    num_components: int,
    config: GmmTrainConfig = GmmTrainConfig(),
    on_iteration: Optional[Callable[[int, int, float], None]] = None,
) -> Gmm:
    """Train a GMM by binary mixture splitting from the global Gaussian.

    Deterministic: initialization is the closed-form single Gaussian, and
    each stage doubles (or tops up) the component count by splitting the
    heaviest components with a +/- perturbation along the stddev.
    `on_iteration(stage, iteration, loglik)` is invoked once per EM
    iteration with the log-likelihood under the model entering it;
    within a stage the reported sequence is non-decreasing.
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if frames.shape[0] < num_components or \
            len(np.unique(frames, axis=0)) < num_components:
        raise InsufficientDataError(
            f"need at least {num_components} distinct frames, got {frames.shape[0]}"
        )
    global_var = np.maximum(frames.var(axis=0), 1e-12)
    floor = config.variance_floor_scale * global_var
    gmm = Gmm(
        weights=np.ones(1),
        means=frames.mean(axis=0)[None, :],
        variances=np.maximum(global_var, floor)[None, :],
    )

    stage = 0
    while True:
        for it in range(config.iterations_per_stage):
            gmm, loglik = em_step(gmm, frames, floor, config.degenerate_mass)
            if on_iteration is not None:
                on_iteration(stage, it, loglik)
        if gmm.num_components >= num_components:
            break
        gmm = split_components(gmm, num_components, config.split_perturbation)
        stage += 1
    return gmm
