"""Total-variability subspace: EM training, i-vector extraction, cosine
scoring. Statistics may come from plain GMM components or from HMM
state-mixture slots; the slot layout is the only thing that differs.

Extraction solves

    L = I + T' Sigma^-1 N T        (posterior precision)
    w = L^-1 T' Sigma^-1 F         (posterior mean)

with N and Sigma block-diagonal per slot and F in the mean-offset
convention, so no re-centering happens here. The covariances are kept from
the background models; training updates T only, by alternating the
per-utterance posterior moments with per-slot least-squares solves.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import (
    EmptyEnrollmentError,
    InsufficientUtterancesError,
    LayoutMismatchError,
    NonFiniteStatsError,
    ZeroVectorError,
)
from .gmm import Gmm
from .layout import SlotLayout


@dataclass
class TotalVariability:
    """Low-rank map from i-vector space to mean super-vector offsets."""

    t: np.ndarray        # (S * D, R)
    m: np.ndarray        # (S * D,) background mean super-vector
    sigma: np.ndarray    # (S * D,) per-row variances
    layout: SlotLayout

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.m = np.asarray(self.m, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        rows = self.layout.total_dim
        if self.t.shape[0] != rows or self.m.shape != (rows,) or self.sigma.shape != (rows,):
            raise ValueError("T/m/sigma shapes do not match the slot layout")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")

    @property
    def rank(self) -> int:
        return self.t.shape[1]


@dataclass
class IVector:
    """Posterior mean of the subspace coordinate, optionally with its precision."""

    w: np.ndarray
    precision: Optional[np.ndarray] = None

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)


def layout_for_gmm(ubm: Gmm) -> tuple[SlotLayout, np.ndarray, np.ndarray]:
    """(layout, mean super-vector, variance super-vector) of a plain GMM."""
    layout = SlotLayout.for_gmm(ubm.num_components, ubm.dim)
    return layout, ubm.means.reshape(-1), ubm.variances.reshape(-1)


def layout_for_state_gmms(state_gmms) -> tuple[SlotLayout, np.ndarray, np.ndarray]:
    """Same, for a per-state GMM set in its slot order."""
    layout = state_gmms.slot_layout()
    means = []
    variances = []
    for p in state_gmms.phones:
        for s in range(state_gmms.num_states):
            gmm = state_gmms.gmms[(p, s)]
            means.append(gmm.means)
            variances.append(gmm.variances)
    return layout, np.vstack(means).reshape(-1), np.vstack(variances).reshape(-1)


def _stats_vectors(tv: TotalVariability, stats) -> tuple[np.ndarray, np.ndarray]:
    """Validate a stats object against the layout; return flat (n_row, f_flat)."""
    layout = getattr(stats, "layout", None)
    if layout is not None and layout != tv.layout:
        raise LayoutMismatchError("statistics layout does not match the subspace")
    n = np.asarray(stats.n, dtype=np.float64)
    f = np.asarray(stats.f, dtype=np.float64)
    if n.shape != (tv.layout.num_slots,) or f.shape != (tv.layout.num_slots, tv.layout.dim):
        raise LayoutMismatchError(
            f"stats shaped {n.shape}/{f.shape} do not fit "
            f"{tv.layout.num_slots} slots of dim {tv.layout.dim}"
        )
    if not (np.all(np.isfinite(n)) and np.all(np.isfinite(f))):
        raise NonFiniteStatsError("statistics contain non-finite values")
    return np.repeat(n, tv.layout.dim), f.reshape(-1)


def _solve_posterior(tv: TotalVariability, n_row, f_flat):
    """(w, L) for one utterance's statistics."""
    weighted = (n_row / tv.sigma)[:, None] * tv.t
    l_mat = np.eye(tv.rank) + tv.t.T @ weighted
    b = tv.t.T @ (f_flat / tv.sigma)
    try:
        cho = cho_factor(l_mat)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * np.trace(l_mat) / tv.rank
        cho = cho_factor(l_mat + jitter * np.eye(tv.rank))
    w = cho_solve(cho, b)
    return w, l_mat, cho, b


def extract_ivector(tv: TotalVariability, stats) -> IVector:
    """MAP point estimate of the utterance's subspace coordinate."""
    n_row, f_flat = _stats_vectors(tv, stats)
    w, l_mat, _, _ = _solve_posterior(tv, n_row, f_flat)
    return IVector(w=w, precision=l_mat)


def enroll_ivector(tv: TotalVariability, stats_list: Sequence, mode: str = "sum") -> IVector:
    """Enroll from one or more utterances.

    "sum" (default) adds the statistics and extracts once; "average"
    extracts per utterance and renormalizes the mean vector to the average
    length.
    """
    stats_list = list(stats_list)
    if not stats_list:
        raise EmptyEnrollmentError("enrollment needs at least one utterance")
    if mode == "sum":
        total = stats_list[0]
        for stats in stats_list[1:]:
            total = total + stats
        return extract_ivector(tv, total)
    if mode == "average":
        ws = [extract_ivector(tv, s).w for s in stats_list]
        mean = np.mean(ws, axis=0)
        norm = float(np.linalg.norm(mean))
        if norm == 0.0:
            return IVector(w=mean)
        avg_len = float(np.mean([np.linalg.norm(w) for w in ws]))
        return IVector(w=mean * (avg_len / norm))
    raise ValueError(f"unknown enrollment mode {mode!r}")


def cosine_score(w1, w2) -> float:
    """Cosine similarity in [-1, 1]."""
    v1 = np.asarray(w1.w if isinstance(w1, IVector) else w1, dtype=np.float64)
    v2 = np.asarray(w2.w if isinstance(w2, IVector) else w2, dtype=np.float64)
    n1 = float(np.linalg.norm(v1))
    n2 = float(np.linalg.norm(v2))
    if n1 == 0.0 or n2 == 0.0:
        raise ZeroVectorError("cosine similarity of a zero vector is undefined")
    return float(np.dot(v1, v2) / (n1 * n2))


def init_tmatrix(
    rank: int, m: np.ndarray, sigma: np.ndarray, layout: SlotLayout, seed: int
) -> TotalVariability:
    """Seeded random subspace, scaled to keep early E-steps well conditioned."""
    rng = np.random.default_rng(seed)
    t = 0.1 * np.sqrt(sigma)[:, None] * rng.standard_normal((len(sigma), rank))
    return TotalVariability(t=t, m=m, sigma=sigma, layout=layout)


def train_tmatrix(
    stats_list: Sequence,
    rank: int,
    iterations: int = 10,
    seed: int = 0,
    model=None,
    on_iteration: Optional[Callable[[int, float], None]] = None,
) -> TotalVariability:
    """EM for the total-variability matrix; covariances stay fixed.

    `model` supplies the slot means/variances: a Gmm, a StateGmmSet, or an
    existing TotalVariability to re-train. Deterministic given the seed.
    `on_iteration(iteration, objective)` reports the data log-likelihood
    part that depends on T (monotone under EM, up to solver tolerance).
    """
    stats_list = list(stats_list)
    if len(stats_list) < rank:
        raise InsufficientUtterancesError(
            f"{len(stats_list)} utterances cannot estimate rank {rank}"
        )
    if isinstance(model, TotalVariability):
        layout, m, sigma = model.layout, model.m, model.sigma
    elif isinstance(model, Gmm):
        layout, m, sigma = layout_for_gmm(model)
    elif model is not None:
        layout, m, sigma = layout_for_state_gmms(model)
    else:
        raise ValueError("model must supply the slot layout and covariances")
    tv = init_tmatrix(rank, m, sigma, layout, seed)

    dim = layout.dim
    slots = layout.num_slots
    pairs = [_stats_vectors(tv, s) for s in stats_list]

    for it in range(iterations):
        a = np.zeros((slots, rank, rank))   # per-slot sum N_c E[ww']
        b = np.zeros((slots, dim, rank))    # per-slot sum F_c w'
        objective = 0.0
        for n_row, f_flat in pairs:
            w, _, cho, rhs = _solve_posterior(tv, n_row, f_flat)
            objective += 0.5 * float(w @ rhs)
            objective -= float(np.sum(np.log(np.diag(cho[0]))))
            l_inv = cho_solve(cho, np.eye(rank))
            eww = l_inv + np.outer(w, w)
            n_slots = n_row[::dim]
            a += n_slots[:, None, None] * eww
            b += f_flat.reshape(slots, dim)[:, :, None] * w[None, None, :]
        if on_iteration is not None:
            on_iteration(it, objective)

        t_new = np.empty_like(tv.t)
        for c in range(slots):
            a_c = a[c]
            if np.linalg.cond(a_c) > 1e12:
                warnings.warn(
                    f"slot {c}: singular accumulator, regularizing", RuntimeWarning
                )
                a_c = a_c + 1e-8 * np.trace(a_c) / rank * np.eye(rank)
            t_new[c * dim : (c + 1) * dim] = np.linalg.solve(a_c, b[c].T).T
        tv = TotalVariability(t=t_new, m=m, sigma=sigma, layout=layout)
    return tv
