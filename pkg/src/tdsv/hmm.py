"""Mono-phone HMMs for transcript-driven frame alignment.

Each phone is a 3-state left-to-right HMM (self-loop + forward, no skips)
with a diagonal GMM per state. A transcript is compiled into a composite
graph, optionally wrapped and interleaved with silence. Two aligners share
the graph:

* Viterbi: the 1-best state path; within the winning state the mixture
  posterior stays soft, all other states get exactly zero.
* Forward-backward: exact state-mixture occupancy posteriors.

Both run in O(N^2 T) for N emitting states and T frames; forward-backward
costs roughly one extra pass. Alignments drive state-level speaker
adaptation, likelihood-ratio scoring, and the state-mixture sufficient
statistics consumed by the i-vector extractor. Transitions participate in
the path search but are excluded from the ratio scores, which are
emission-only.

A second feature stream may be used for everything downstream of the
alignment: the graph is aligned on one stream while state GMMs, adaptation,
scoring, and statistics use the other.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import (
    DimensionMismatchError,
    EmptyTranscriptError,
    FrameCountMismatchError,
    InsufficientDataError,
    ModelShapeMismatchError,
    NoValidPathError,
    PhoneMissingFromCorpusError,
    UnknownPhoneError,
)
from .gmm import (
    Gmm,
    component_log_densities,
    component_log_likelihoods,
    frame_log_likelihoods,
    split_components,
)
from .layout import SlotLayout

NUM_STATES = 3
DEFAULT_SILENCE = "sil"
POSTERIOR_FLOOR = 1e-8  # smaller state-mixture posteriors are dropped


@dataclass
class PhoneHMM:
    """3 emitting states, each a GMM, with [self-loop, forward] probs."""

    phone: str
    state_gmms: tuple
    transitions: np.ndarray  # (3, 2), rows sum to 1

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        if self.transitions.shape != (NUM_STATES, 2):
            raise ValueError("transitions must be (3, 2)")
        if not np.allclose(self.transitions.sum(axis=1), 1.0, atol=1e-8):
            raise ValueError("per-state outgoing probabilities must sum to 1")


@dataclass
class PhoneHMMSet:
    """Phone inventory (silence included) with one PhoneHMM per phone."""

    phones: tuple
    silence_phone: str
    hmms: dict

    def __post_init__(self):
        self.phones = tuple(self.phones)
        if self.silence_phone not in self.phones:
            raise ValueError("silence phone must be part of the inventory")

    @property
    def num_states(self) -> int:
        return NUM_STATES

    @property
    def speech_phones(self) -> tuple:
        return tuple(p for p in self.phones if p != self.silence_phone)

    def state_gmm(self, phone: str, state: int) -> Gmm:
        return self.hmms[phone].state_gmms[state]

    def total_mixtures(self) -> int:
        return sum(
            self.hmms[p].state_gmms[s].num_components
            for p in self.phones
            for s in range(NUM_STATES)
        )


@dataclass
class StateGmmSet:
    """Per-(phone, state) GMMs, e.g. re-estimated in a speaker-feature space."""

    phones: tuple
    silence_phone: str
    gmms: dict  # (phone, state) -> Gmm

    def __post_init__(self):
        self.phones = tuple(self.phones)

    @property
    def num_states(self) -> int:
        return NUM_STATES

    @property
    def dim(self) -> int:
        return next(iter(self.gmms.values())).dim

    def state_gmm(self, phone: str, state: int) -> Gmm:
        return self.gmms[(phone, state)]

    def slot_layout(self) -> SlotLayout:
        keys = tuple(
            f"{p}/{s}/{g}"
            for p in self.phones
            for s in range(NUM_STATES)
            for g in range(self.gmms[(p, s)].num_components)
        )
        return SlotLayout(keys=keys, dim=self.dim)

    def slot_slices(self) -> dict:
        """(phone, state) -> slice of slot indices, in layout order."""
        out = {}
        offset = 0
        for p in self.phones:
            for s in range(NUM_STATES):
                g = self.gmms[(p, s)].num_components
                out[(p, s)] = slice(offset, offset + g)
                offset += g
        return out

    @classmethod
    def from_hmm_set(cls, hmm_set: PhoneHMMSet) -> "StateGmmSet":
        gmms = {
            (p, s): hmm_set.state_gmm(p, s)
            for p in hmm_set.phones
            for s in range(NUM_STATES)
        }
        return cls(phones=hmm_set.phones, silence_phone=hmm_set.silence_phone, gmms=gmms)


@dataclass(frozen=True)
class SilencePolicy:
    """Mandatory silence at utterance boundaries, optional between phones."""

    boundary: bool = True
    between: bool = True


@dataclass
class CompositeHMM:
    """Transcript compiled to an ordered left-to-right state graph."""

    state_labels: tuple          # j -> (phone, state index)
    state_gmms: tuple            # j -> emission Gmm
    log_trans: np.ndarray        # (N, N)
    log_entry: np.ndarray        # (N,)
    log_exit: np.ndarray         # (N,)
    silence_mask: np.ndarray     # (N,) bool
    min_path_states: int         # length of the shortest accepting path

    @property
    def num_states(self) -> int:
        return len(self.state_labels)

    @property
    def dim(self) -> int:
        return self.state_gmms[0].dim


@dataclass
class Alignment:
    """Per-frame state-mixture posteriors, sparse over states.

    posteriors[t] maps state index j to the vector P_t(j, g) over that
    state's mixtures; every frame's entries sum to 1. A Viterbi alignment
    additionally carries the 1-best path and has exactly one active state
    per frame.
    """

    state_labels: tuple
    silence_mask: np.ndarray
    posteriors: list            # t -> {j: (G_j,) ndarray}
    algorithm: str              # VITERBI | FB
    log_prob: float             # path score (Viterbi) or total likelihood (FB)
    path: Optional[np.ndarray] = None

    @property
    def num_frames(self) -> int:
        return len(self.posteriors)

    def state_posteriors(self, t: int) -> dict:
        """State-level posteriors at frame t (mixtures summed out)."""
        return {j: float(v.sum()) for j, v in self.posteriors[t].items()}

    def digest(self) -> str:
        """Content hash; equal alignments hash equally, bit-exact."""
        h = hashlib.sha256()
        h.update(self.algorithm.encode())
        for t, frame in enumerate(self.posteriors):
            for j in sorted(frame):
                h.update(np.int64(t).tobytes())
                h.update(np.int64(j).tobytes())
                h.update(np.ascontiguousarray(frame[j], dtype=np.float64).tobytes())
        return h.hexdigest()


# --- graph construction -------------------------------------------------------


def _transcript_blocks(transcript, policy: SilencePolicy, silence: str):
    """(phone, optional) blocks in graph order."""
    blocks = []
    if policy.boundary:
        blocks.append((silence, False))
    for i, phone in enumerate(transcript):
        if i > 0 and policy.between:
            blocks.append((silence, True))
        blocks.append((phone, False))
    if policy.boundary:
        blocks.append((silence, False))
    return blocks


def build_composite_graph(
    hmm_set: PhoneHMMSet,
    transcript: Sequence[str],
    silence_policy: SilencePolicy = SilencePolicy(),
) -> CompositeHMM:
    """Compose per-phone HMMs along a transcript.

    Forward probability leaving a block is split evenly over its reachable
    successors (the next mandatory block plus any skippable silences in
    between, or the exit).
    """
    transcript = list(transcript)
    if not transcript:
        raise EmptyTranscriptError("cannot build a graph from an empty transcript")
    unknown = sorted({p for p in transcript if p not in hmm_set.hmms})
    if unknown:
        raise UnknownPhoneError(f"phones not in inventory: {', '.join(unknown)}")

    blocks = _transcript_blocks(transcript, silence_policy, hmm_set.silence_phone)
    num_blocks = len(blocks)
    n = NUM_STATES * num_blocks
    log_trans = np.full((n, n), -np.inf)
    log_entry = np.full(n, -np.inf)
    log_exit = np.full(n, -np.inf)

    exit_marker = -1

    def successors(b: int):
        targets = []
        k = b + 1
        while k < num_blocks:
            targets.append(NUM_STATES * k)
            if not blocks[k][1]:
                return targets
            k += 1
        targets.append(exit_marker)
        return targets

    with np.errstate(divide="ignore"):
        for b, (phone, _) in enumerate(blocks):
            hmm = hmm_set.hmms[phone]
            for s in range(NUM_STATES):
                j = NUM_STATES * b + s
                a_loop, a_fwd = hmm.transitions[s]
                log_trans[j, j] = np.log(a_loop)
                if s < NUM_STATES - 1:
                    log_trans[j, j + 1] = np.log(a_fwd)
                else:
                    targets = successors(b)
                    share = np.log(a_fwd / len(targets))
                    for tgt in targets:
                        if tgt == exit_marker:
                            log_exit[j] = share
                        else:
                            log_trans[j, tgt] = share

        entry_targets = []
        for b in range(num_blocks):
            entry_targets.append(NUM_STATES * b)
            if not blocks[b][1]:
                break
        for tgt in entry_targets:
            log_entry[tgt] = np.log(1.0 / len(entry_targets))

    state_labels = tuple(
        (phone, s) for phone, _ in blocks for s in range(NUM_STATES)
    )
    state_gmms = tuple(
        hmm_set.state_gmm(phone, s) for phone, _ in blocks for s in range(NUM_STATES)
    )
    silence_mask = np.array(
        [phone == hmm_set.silence_phone for phone, _ in blocks for _s in range(NUM_STATES)]
    )
    min_path = NUM_STATES * sum(1 for _, optional in blocks if not optional)
    return CompositeHMM(
        state_labels=state_labels,
        state_gmms=state_gmms,
        log_trans=log_trans,
        log_entry=log_entry,
        log_exit=log_exit,
        silence_mask=silence_mask,
        min_path_states=min_path,
    )


# --- alignment ----------------------------------------------------------------


def _check_frames(graph: CompositeHMM, frames) -> np.ndarray:
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if frames.shape[1] != graph.dim:
        raise DimensionMismatchError(
            f"frames have dim {frames.shape[1]}, emissions have {graph.dim}"
        )
    return frames


def _emission_log_likelihoods(graph: CompositeHMM, frames: np.ndarray) -> np.ndarray:
    """(T, N) log b_j(x_t); shared GMMs are evaluated once."""
    t = frames.shape[0]
    out = np.empty((t, graph.num_states))
    cache = {}
    for j, gmm in enumerate(graph.state_gmms):
        key = id(gmm)
        if key not in cache:
            cache[key] = frame_log_likelihoods(gmm, frames)
        out[:, j] = cache[key]
    return out


def _mixture_responsibilities(graph: CompositeHMM, frames: np.ndarray) -> dict:
    """id(gmm) -> (T, G) within-state mixture posteriors."""
    cache = {}
    for gmm in graph.state_gmms:
        key = id(gmm)
        if key not in cache:
            log_comp = component_log_likelihoods(gmm, frames)
            cache[key] = np.exp(log_comp - logsumexp(log_comp, axis=1, keepdims=True))
    return cache


def _sparsify(frame: dict) -> dict:
    """Drop posteriors below the floor and renormalize the frame to 1."""
    kept = {}
    total = 0.0
    for j, vec in frame.items():
        vec = np.where(vec < POSTERIOR_FLOOR, 0.0, vec)
        s = vec.sum()
        if s > 0.0:
            kept[j] = vec
            total += s
    if not kept:
        raise NoValidPathError("frame lost all posterior mass")
    return {j: vec / total for j, vec in kept.items()}


def viterbi_align(graph: CompositeHMM, frames) -> Alignment:
    """1-best path alignment; ties break toward the lower state index.

    The winning state's mixture posterior stays soft; every other state's
    posterior is exactly zero.
    """
    frames = _check_frames(graph, frames)
    t_total = frames.shape[0]
    if t_total < graph.min_path_states:
        raise NoValidPathError(
            f"{t_total} frames cannot cover {graph.min_path_states} mandatory states"
        )
    logb = _emission_log_likelihoods(graph, frames)
    n = graph.num_states

    delta = graph.log_entry + logb[0]
    psi = np.zeros((t_total, n), dtype=np.int64)
    for t in range(1, t_total):
        scores = delta[:, None] + graph.log_trans
        psi[t] = np.argmax(scores, axis=0)
        delta = scores[psi[t], np.arange(n)] + logb[t]

    final = delta + graph.log_exit
    best = int(np.argmax(final))
    if not np.isfinite(final[best]):
        raise NoValidPathError("no state sequence reaches the exit")

    path = np.empty(t_total, dtype=np.int64)
    path[-1] = best
    for t in range(t_total - 1, 0, -1):
        path[t - 1] = psi[t, path[t]]

    resp = _mixture_responsibilities(graph, frames)
    posteriors = [
        _sparsify({int(j): resp[id(graph.state_gmms[j])][t].copy()})
        for t, j in enumerate(path)
    ]
    return Alignment(
        state_labels=graph.state_labels,
        silence_mask=graph.silence_mask,
        posteriors=posteriors,
        algorithm="VITERBI",
        log_prob=float(final[best]),
        path=path,
    )


def fb_align(graph: CompositeHMM, frames) -> Alignment:
    """Exact state-mixture occupancy posteriors via scaled forward-backward."""
    frames = _check_frames(graph, frames)
    t_total = frames.shape[0]
    if t_total < graph.min_path_states:
        raise NoValidPathError(
            f"{t_total} frames cannot cover {graph.min_path_states} mandatory states"
        )
    logb = _emission_log_likelihoods(graph, frames)
    shifts = np.max(logb, axis=1)
    if not np.all(np.isfinite(shifts)):
        raise NoValidPathError("a frame has zero emission probability everywhere")
    b_lin = np.exp(logb - shifts[:, None])

    a_lin = np.exp(graph.log_trans)
    entry_lin = np.exp(graph.log_entry)
    exit_lin = np.exp(graph.log_exit)

    alpha = np.empty_like(b_lin)
    scales = np.empty(t_total)
    alpha[0] = entry_lin * b_lin[0]
    scales[0] = alpha[0].sum()
    if scales[0] <= 0.0:
        raise NoValidPathError("no state sequence fits the frames")
    alpha[0] /= scales[0]
    for t in range(1, t_total):
        alpha[t] = (alpha[t - 1] @ a_lin) * b_lin[t]
        scales[t] = alpha[t].sum()
        if scales[t] <= 0.0:
            raise NoValidPathError("no state sequence fits the frames")
        alpha[t] /= scales[t]

    terminal = float(alpha[-1] @ exit_lin)
    if terminal <= 0.0:
        raise NoValidPathError("no state sequence reaches the exit")
    log_prob = float(np.sum(np.log(scales)) + np.sum(shifts) + np.log(terminal))

    beta = np.empty_like(b_lin)
    beta[-1] = exit_lin
    for t in range(t_total - 2, -1, -1):
        beta[t] = (a_lin @ (beta[t + 1] * b_lin[t + 1])) / scales[t + 1]

    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)

    resp = _mixture_responsibilities(graph, frames)
    posteriors = []
    for t in range(t_total):
        frame = {}
        for j in np.nonzero(gamma[t] > POSTERIOR_FLOOR)[0]:
            frame[int(j)] = gamma[t, j] * resp[id(graph.state_gmms[j])][t]
        posteriors.append(_sparsify(frame))
    return Alignment(
        state_labels=graph.state_labels,
        silence_mask=graph.silence_mask,
        posteriors=posteriors,
        algorithm="FB",
        log_prob=log_prob,
        path=None,
    )


def posterior_dump_rows(utt_id: str, alignment: Alignment) -> Iterable[tuple]:
    """Rows (utt_id, frame, state, phone, state_index, posterior) with
    state-level posteriors, for the CSV dump."""
    for t in range(alignment.num_frames):
        for j, post in sorted(alignment.state_posteriors(t).items()):
            phone, s = alignment.state_labels[j]
            yield (utt_id, t, j, phone, s, post)


# --- state-level estimation, adaptation, scoring, statistics -------------------


class _MomentAccumulator:
    """Posterior-weighted 0th/1st/2nd moments per (phone, state, mixture)."""

    def __init__(self, counts: dict, dim: int):
        self.counts = dict(counts)  # (phone, state) -> G
        self.dim = dim
        self.w = {k: np.zeros(g) for k, g in self.counts.items()}
        self.m1 = {k: np.zeros((g, dim)) for k, g in self.counts.items()}
        self.m2 = {k: np.zeros((g, dim)) for k, g in self.counts.items()}

    def add(self, alignment: Alignment, frames: np.ndarray):
        if alignment.num_frames != frames.shape[0]:
            raise FrameCountMismatchError(
                f"alignment has {alignment.num_frames} frames, "
                f"features have {frames.shape[0]}"
            )
        for t, frame in enumerate(alignment.posteriors):
            x = frames[t]
            xx = x * x
            for j, vec in frame.items():
                key = alignment.state_labels[j]
                self.w[key] += vec
                self.m1[key] += vec[:, None] * x
                self.m2[key] += vec[:, None] * xx


def reestimate_state_gmms(
    hmm_set: PhoneHMMSet,
    alignments: Sequence[Alignment],
    speaker_features: Sequence[np.ndarray],
    min_slot_mass: float = 1e-6,
) -> StateGmmSet:
    """Re-estimate every state's GMM in the speaker-feature space.

    Weights are proportional to accumulated posterior mass; means and
    variances are posterior-weighted moments. Slots with no mass fall back
    to the global speaker-feature Gaussian (or the alignment-model slot when
    the streams share a dimension) at floor weight.
    """
    features = [np.atleast_2d(np.asarray(f, dtype=np.float64)) for f in speaker_features]
    if len(alignments) != len(features):
        raise FrameCountMismatchError(
            f"{len(alignments)} alignments vs {len(features)} feature matrices"
        )
    dim = features[0].shape[1]
    counts = {
        (p, s): hmm_set.state_gmm(p, s).num_components
        for p in hmm_set.phones
        for s in range(NUM_STATES)
    }
    acc = _MomentAccumulator(counts, dim)
    for alignment, frames in zip(alignments, features):
        acc.add(alignment, frames)

    pooled = np.vstack(features)
    global_mean = pooled.mean(axis=0)
    global_var = np.maximum(pooled.var(axis=0), 1e-12)
    floor = 1e-3 * global_var
    same_space = dim == hmm_set.state_gmm(hmm_set.phones[0], 0).dim

    gmms = {}
    for key, g in counts.items():
        w = acc.w[key]
        weights = np.where(w > min_slot_mass, w, min_slot_mass)
        weights = weights / weights.sum()
        means = np.tile(global_mean, (g, 1))
        variances = np.tile(global_var, (g, 1))
        if same_space:
            prior = hmm_set.state_gmm(*key)
            means = prior.means.copy()
            variances = prior.variances.copy()
        live = w > min_slot_mass
        idx = np.nonzero(live)[0]
        if idx.size:
            means[idx] = acc.m1[key][idx] / w[idx, None]
            variances[idx] = np.maximum(
                acc.m2[key][idx] / w[idx, None] - means[idx] ** 2, floor
            )
        gmms[key] = Gmm(weights=weights, means=means, variances=variances)
    return StateGmmSet(
        phones=hmm_set.phones, silence_phone=hmm_set.silence_phone, gmms=gmms
    )


@dataclass
class HmmStats:
    """State-mixture statistics in super-vector slot order."""

    layout: SlotLayout
    n: np.ndarray  # (S,)
    f: np.ndarray  # (S, D)

    def __add__(self, other: "HmmStats") -> "HmmStats":
        if self.layout != other.layout:
            raise ValueError("cannot merge stats with different layouts")
        return HmmStats(layout=self.layout, n=self.n + other.n, f=self.f + other.f)


def accumulate_hmm_stats(
    alignment: Alignment,
    speaker_features,
    state_gmms: StateGmmSet,
    exclude_silence: bool = True,
) -> HmmStats:
    """Zero/first-order statistics per (state, mixture) slot.

    First-order sums are offset by the background state-mixture means.
    Silence-state mass is dropped (not renormalized) when exclusion is on;
    Viterbi alignments leave most slots exactly zero.
    """
    frames = np.atleast_2d(np.asarray(speaker_features, dtype=np.float64))
    if frames.size and alignment.num_frames != frames.shape[0]:
        raise FrameCountMismatchError(
            f"alignment has {alignment.num_frames} frames, "
            f"features have {frames.shape[0]}"
        )
    layout = state_gmms.slot_layout()
    slices = state_gmms.slot_slices()
    n = np.zeros(layout.num_slots)
    f = np.zeros((layout.num_slots, layout.dim))
    if frames.size == 0:
        return HmmStats(layout=layout, n=n, f=f)
    if frames.shape[1] != layout.dim:
        raise DimensionMismatchError(
            f"features have dim {frames.shape[1]}, state models have {layout.dim}"
        )

    for t, frame in enumerate(alignment.posteriors):
        x = frames[t]
        for j, vec in frame.items():
            if exclude_silence and alignment.silence_mask[j]:
                continue
            key = alignment.state_labels[j]
            sl = slices[key]
            mu = state_gmms.gmms[key].means
            n[sl] += vec
            f[sl] += vec[:, None] * (x - mu)
    return HmmStats(layout=layout, n=n, f=f)


def hmm_map_adapt(state_gmms: StateGmmSet, stats: HmmStats, config) -> StateGmmSet:
    """Slot-wise MAP mean update, phonetically dependent but otherwise the
    plain GMM rule: mu_hat = F / (N + r) + mu."""
    if stats.layout != state_gmms.slot_layout():
        raise ModelShapeMismatchError("statistics layout does not match the state models")
    slices = state_gmms.slot_slices()
    adapted = {}
    for key, gmm in state_gmms.gmms.items():
        sl = slices[key]
        denom = stats.n[sl] + config.relevance_factor
        alpha = np.where(denom > 0, 1.0 / np.where(denom > 0, denom, 1.0), 0.0)
        means = alpha[:, None] * stats.f[sl] + gmm.means
        adapted[key] = Gmm(weights=gmm.weights, means=means, variances=gmm.variances)
    return StateGmmSet(
        phones=state_gmms.phones,
        silence_phone=state_gmms.silence_phone,
        gmms=adapted,
    )


def _check_state_sets(adapted: StateGmmSet, background: StateGmmSet):
    if adapted.phones != background.phones:
        raise ModelShapeMismatchError("state sets cover different phone inventories")
    for key, gmm in background.gmms.items():
        other = adapted.gmms.get(key)
        if other is None or other.num_components != gmm.num_components \
                or other.dim != gmm.dim:
            raise ModelShapeMismatchError(f"state {key} differs between the models")


def llr_viterbi(
    adapted: StateGmmSet,
    background: StateGmmSet,
    alignment: Alignment,
    speaker_frames,
    exclude_silence: bool = True,
) -> float:
    """Emission log-likelihood ratio along a precomputed 1-best path."""
    _check_state_sets(adapted, background)
    if alignment.path is None:
        raise ValueError("llr_viterbi needs a Viterbi alignment")
    frames = np.atleast_2d(np.asarray(speaker_frames, dtype=np.float64))
    if frames.shape[0] != alignment.num_frames:
        raise FrameCountMismatchError(
            f"alignment has {alignment.num_frames} frames, "
            f"features have {frames.shape[0]}"
        )
    total = 0.0
    by_state: dict = {}
    for t, j in enumerate(alignment.path):
        if exclude_silence and alignment.silence_mask[j]:
            continue
        by_state.setdefault(alignment.state_labels[j], []).append(t)
    for key, idx in by_state.items():
        x = frames[idx]
        total += float(
            np.sum(frame_log_likelihoods(adapted.gmms[key], x)
                   - frame_log_likelihoods(background.gmms[key], x))
        )
    return total


def llr_fb(
    adapted: StateGmmSet,
    background: StateGmmSet,
    alignment: Alignment,
    speaker_frames,
    exclude_silence: bool = True,
) -> float:
    """Posterior-weighted density ratio under a forward-backward alignment.

    Per frame: log sum_{j,g} P_t(j,g) N(x_t | adapted) minus the same sum
    under the background means. Silence-state terms are dropped from both
    sums; a frame with no remaining mass is skipped."""
    _check_state_sets(adapted, background)
    frames = np.atleast_2d(np.asarray(speaker_frames, dtype=np.float64))
    if frames.shape[0] != alignment.num_frames:
        raise FrameCountMismatchError(
            f"alignment has {alignment.num_frames} frames, "
            f"features have {frames.shape[0]}"
        )
    dens_cache: dict = {}

    def densities(sgs: StateGmmSet, key) -> np.ndarray:
        ck = (id(sgs), key)
        if ck not in dens_cache:
            dens_cache[ck] = component_log_densities(sgs.gmms[key], frames)
        return dens_cache[ck]

    total = 0.0
    for t, frame in enumerate(alignment.posteriors):
        terms_spk = []
        terms_bg = []
        for j, vec in frame.items():
            if exclude_silence and alignment.silence_mask[j]:
                continue
            key = alignment.state_labels[j]
            logp = np.log(np.maximum(vec, 1e-300))
            terms_spk.append(logp + densities(adapted, key)[t])
            terms_bg.append(logp + densities(background, key)[t])
        if not terms_spk:
            continue
        total += float(
            logsumexp(np.concatenate(terms_spk)) - logsumexp(np.concatenate(terms_bg))
        )
    return total


def score_hmm_viterbi(
    adapted: StateGmmSet,
    background: StateGmmSet,
    graph: CompositeHMM,
    frames,
    speaker_frames=None,
    exclude_silence: bool = True,
) -> float:
    """Viterbi-path log-likelihood ratio. `frames` drive the alignment;
    `speaker_frames` (default: same stream) drive the ratio."""
    alignment = viterbi_align(graph, frames)
    spk = frames if speaker_frames is None else speaker_frames
    return llr_viterbi(adapted, background, alignment, spk, exclude_silence)


def score_hmm_fb(
    adapted: StateGmmSet,
    background: StateGmmSet,
    graph: CompositeHMM,
    frames,
    speaker_frames=None,
    exclude_silence: bool = True,
) -> float:
    """Forward-backward log-likelihood ratio, soft across states."""
    alignment = fb_align(graph, frames)
    spk = frames if speaker_frames is None else speaker_frames
    return llr_fb(adapted, background, alignment, spk, exclude_silence)


# --- training -----------------------------------------------------------------


@dataclass(frozen=True)
class HmmTrainConfig:
    num_mixes: int = 8
    silence_num_mixes: int = 16
    realign_rounds: int = 4
    self_loop_init: float = 0.6
    split_perturbation: float = 0.1
    variance_floor_scale: float = 1e-3
    min_slot_mass: float = 1e-6
    silence_policy: SilencePolicy = SilencePolicy()


def uniform_segmentation(num_frames: int, num_states: int) -> np.ndarray:
    """Flat-start state index per frame; the remainder goes to the last state."""
    if num_frames < num_states:
        raise InsufficientDataError(
            f"{num_frames} frames cannot seed {num_states} states"
        )
    per_state = num_frames // num_states
    seg = np.repeat(np.arange(num_states), per_state)
    return np.concatenate([seg, np.full(num_frames - len(seg), num_states - 1)])


def _mandatory_labels(transcript, policy: SilencePolicy, silence: str):
    labels = []
    for phone, optional in _transcript_blocks(transcript, policy, silence):
        if not optional:
            labels.extend((phone, s) for s in range(NUM_STATES))
    return labels


def train_monophone_hmms(
    utterances: Sequence[tuple],
    config: HmmTrainConfig = HmmTrainConfig(),
    inventory: Optional[Sequence[str]] = None,
    silence_phone: str = DEFAULT_SILENCE,
    on_iteration: Optional[Callable[[int, int, float], None]] = None,
) -> PhoneHMMSet:
    """Train 3-state mono-phone HMMs from (transcript, frames) pairs.

    Flat-start uniform segmentation seeds single Gaussians; each stage runs
    `realign_rounds` rounds of Viterbi realignment and re-estimation, then
    binary-splits every state GMM still below its mixture budget (speech
    states up to num_mixes, silence states up to silence_num_mixes).
    `on_iteration(stage, round, total_log_prob)` reports the summed best-path
    log-likelihood under the parameters entering the round; the sequence is
    non-decreasing within a stage.
    """
    utterances = [
        (list(tr), np.atleast_2d(np.asarray(fr, dtype=np.float64)))
        for tr, fr in utterances
    ]
    if not utterances:
        raise InsufficientDataError("no training utterances")
    dim = utterances[0][1].shape[1]
    observed = sorted({p for tr, _ in utterances for p in tr})
    if inventory is None:
        phones = observed
    else:
        phones = sorted(set(inventory) - {silence_phone})
        missing = sorted(set(phones) - set(observed))
        if missing:
            raise PhoneMissingFromCorpusError(
                f"inventory phones never observed: {', '.join(missing)}"
            )
    all_phones = tuple(phones) + (silence_phone,)

    pooled = np.vstack([fr for _, fr in utterances])
    global_var = np.maximum(pooled.var(axis=0), 1e-12)
    floor = config.variance_floor_scale * global_var

    # flat start: uniform segmentation over the mandatory state sequence
    acc = _MomentAccumulator({(p, s): 1 for p in all_phones for s in range(NUM_STATES)}, dim)
    for transcript, frames in utterances:
        labels = _mandatory_labels(transcript, config.silence_policy, silence_phone)
        seg = uniform_segmentation(frames.shape[0], len(labels))
        for t, li in enumerate(seg):
            key = labels[li]
            acc.w[key] += 1.0
            acc.m1[key] += frames[t]
            acc.m2[key] += frames[t] ** 2

    def build_set(gmms: dict, transitions: dict) -> PhoneHMMSet:
        hmms = {
            p: PhoneHMM(
                phone=p,
                state_gmms=tuple(gmms[(p, s)] for s in range(NUM_STATES)),
                transitions=transitions[p],
            )
            for p in all_phones
        }
        return PhoneHMMSet(phones=all_phones, silence_phone=silence_phone, hmms=hmms)

    gmms = {}
    for key in acc.w:
        w = float(acc.w[key][0])
        if w > 0:
            mean = acc.m1[key][0] / w
            var = np.maximum(acc.m2[key][0] / w - mean**2, floor)
        else:
            mean = pooled.mean(axis=0)
            var = global_var.copy()
        gmms[key] = Gmm(weights=np.ones(1), means=mean[None, :], variances=var[None, :])
    transitions = {
        p: np.tile([config.self_loop_init, 1.0 - config.self_loop_init], (NUM_STATES, 1))
        for p in all_phones
    }
    hmm_set = build_set(gmms, transitions)

    def target_for(phone: str) -> int:
        return config.silence_num_mixes if phone == silence_phone else config.num_mixes

    stage = 0
    while True:
        for rnd in range(config.realign_rounds):
            graphs = [
                build_composite_graph(hmm_set, tr, config.silence_policy)
                for tr, _ in utterances
            ]
            counts = {
                (p, s): hmm_set.state_gmm(p, s).num_components
                for p in all_phones
                for s in range(NUM_STATES)
            }
            acc = _MomentAccumulator(counts, dim)
            loops = {(p, s): 0.0 for p in all_phones for s in range(NUM_STATES)}
            leaves = {(p, s): 0.0 for p in all_phones for s in range(NUM_STATES)}
            total_logprob = 0.0
            for (transcript, frames), graph in zip(utterances, graphs):
                alignment = viterbi_align(graph, frames)
                total_logprob += alignment.log_prob
                acc.add(alignment, frames)
                path = alignment.path
                for t in range(len(path)):
                    key = alignment.state_labels[path[t]]
                    if t + 1 < len(path) and path[t + 1] == path[t]:
                        loops[key] += 1.0
                    else:
                        leaves[key] += 1.0
            if on_iteration is not None:
                on_iteration(stage, rnd, total_logprob)

            new_gmms = {}
            for key, gmm in (
                ((p, s), hmm_set.state_gmm(p, s))
                for p in all_phones
                for s in range(NUM_STATES)
            ):
                w = acc.w[key]
                mass = w.sum()
                if mass <= config.min_slot_mass:
                    new_gmms[key] = gmm
                    continue
                weights = np.where(w > config.min_slot_mass, w, config.min_slot_mass)
                weights = weights / weights.sum()
                live = w > config.min_slot_mass
                means = gmm.means.copy()
                variances = gmm.variances.copy()
                idx = np.nonzero(live)[0]
                means[idx] = acc.m1[key][idx] / w[idx, None]
                variances[idx] = np.maximum(
                    acc.m2[key][idx] / w[idx, None] - means[idx] ** 2, floor
                )
                if np.any(~live):
                    warnings.warn(
                        f"state {key}: {int(np.sum(~live))} starved mixture(s)",
                        RuntimeWarning,
                    )
                new_gmms[key] = Gmm(weights=weights, means=means, variances=variances)
            new_transitions = {}
            for p in all_phones:
                trans = np.empty((NUM_STATES, 2))
                for s in range(NUM_STATES):
                    total = loops[(p, s)] + leaves[(p, s)]
                    if total > 0:
                        loop = np.clip(loops[(p, s)] / total, 1e-4, 1.0 - 1e-4)
                    else:
                        loop = hmm_set.hmms[p].transitions[s, 0]
                    trans[s] = [loop, 1.0 - loop]
                new_transitions[p] = trans
            hmm_set = build_set(new_gmms, new_transitions)

        done = all(
            hmm_set.state_gmm(p, s).num_components >= target_for(p)
            for p in all_phones
            for s in range(NUM_STATES)
        )
        if done:
            break
        split_gmms = {}
        for p in all_phones:
            for s in range(NUM_STATES):
                gmm = hmm_set.state_gmm(p, s)
                target = target_for(p)
                if gmm.num_components < target:
                    gmm = split_components(
                        gmm,
                        min(2 * gmm.num_components, target),
                        config.split_perturbation,
                    )
                split_gmms[(p, s)] = gmm
        hmm_set = build_set(
            split_gmms, {p: hmm_set.hmms[p].transitions for p in all_phones}
        )
        stage += 1
    return hmm_set
