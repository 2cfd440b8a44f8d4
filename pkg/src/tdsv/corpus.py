"""Corpus plumbing: utterances, trial lists, transcripts, corpus directories,
and a deterministic synthetic corpus generator for desk-scale experiments.

Trial semantics: a model is a (speaker, phrase) enrollment; the four trial
types cross speaker match with phrase match. Target-Correct is the only
genuine type:

    TC  target speaker, correct phrase     (is_target = True)
    IC  imposter speaker, correct phrase
    TW  target speaker, wrong phrase
    IW  imposter speaker, wrong phrase

Corpus directory layout (all text files whitespace-separated, `#` comments):

    manifest.txt     utt_id speaker_id phrase_id feature-path transcript-ref
    transcripts.txt  utt_id phone1 phone2 ...
    trials.txt       model_id utt_id {TC|IC|TW|IW}
    enroll.txt       model_id utt_id [utt_id ...]
    background.txt   utt_id (one per line; background-training split)
    feats/*.tdsv     feature files

The synthetic generator draws every utterance's frames from per
(speaker, phone, state) Gaussians: a global phone-state mean plus a
per-speaker offset (silence carries no offset). The PRNG is numpy's PCG64,
seeded from the spec, so a spec reproduces bit-identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidSpecError, TrialParseError
from .io import read_feature_file, write_feature_file

TRIAL_TYPES = ("TC", "IC", "TW", "IW")


@dataclass(frozen=True)
class Trial:
    model_id: str
    test_utt_id: str
    trial_type: str
    is_target: bool = field(init=False)

    def __post_init__(self):
        if self.trial_type not in TRIAL_TYPES:
            raise ValueError(f"unknown trial type {self.trial_type!r}")
        object.__setattr__(self, "is_target", self.trial_type == "TC")


@dataclass
class Utterance:
    utt_id: str
    speaker_id: str
    phrase_id: str
    transcript: Optional[tuple] = None
    features: Optional[np.ndarray] = None
    feature_path: Optional[str] = None


@dataclass
class Corpus:
    """Utterances plus the optional evaluation protocol around them."""

    utterances: dict
    trials: Optional[list] = None
    enrollment: Optional[dict] = None      # model_id -> tuple of utt_ids
    background_ids: Optional[tuple] = None
    inventory: Optional[tuple] = None      # speech phones

    def __post_init__(self):
        if self.inventory is None:
            phones = {
                p
                for u in self.utterances.values()
                if u.transcript
                for p in u.transcript
            }
            self.inventory = tuple(sorted(phones)) or None

    def features(self, utt_id: str) -> np.ndarray:
        return self.utterances[utt_id].features

    @property
    def utt_ids(self) -> tuple:
        return tuple(self.utterances)


# --- text formats --------------------------------------------------------------


def _data_lines(path):
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def load_trials(path) -> list:
    """Parse `model_id utt_id TYPE` lines; is_target follows from the type."""
    trials = []
    for lineno, tokens in _data_lines(path):
        if len(tokens) != 3:
            raise TrialParseError(f"expected 3 fields, got {len(tokens)}", lineno)
        model_id, utt_id, trial_type = tokens
        if trial_type not in TRIAL_TYPES:
            raise TrialParseError(f"unknown trial type {trial_type!r}", lineno)
        trials.append(Trial(model_id=model_id, test_utt_id=utt_id, trial_type=trial_type))
    return trials


def save_trials(path, trials: Sequence[Trial]) -> None:
    lines = [f"{t.model_id} {t.test_utt_id} {t.trial_type}" for t in trials]
    Path(path).write_text("\n".join(lines) + "\n")


def load_transcripts(path) -> dict:
    """`utt_id phone1 phone2 ...` per line."""
    out = {}
    for lineno, tokens in _data_lines(path):
        if len(tokens) < 2:
            raise TrialParseError("transcript line needs an id and phones", lineno)
        out[tokens[0]] = tuple(tokens[1:])
    return out


def save_transcripts(path, transcripts: dict) -> None:
    lines = [f"{utt_id} {' '.join(phones)}" for utt_id, phones in transcripts.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_enrollment(path) -> dict:
    out = {}
    for lineno, tokens in _data_lines(path):
        if len(tokens) < 2:
            raise TrialParseError("enrollment line needs a model and utterances", lineno)
        out[tokens[0]] = tuple(tokens[1:])
    return out


def save_enrollment(path, enrollment: dict) -> None:
    lines = [f"{mid} {' '.join(utts)}" for mid, utts in enrollment.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def save_corpus(directory, corpus: Corpus) -> None:
    """Write a corpus directory; features go to feats/ as float32 files."""
    directory = Path(directory)
    (directory / "feats").mkdir(parents=True, exist_ok=True)
    manifest = []
    transcripts = {}
    for utt in corpus.utterances.values():
        rel = f"feats/{utt.utt_id}.tdsv"
        write_feature_file(directory / rel, utt.features)
        ref = "-"
        if utt.transcript:
            transcripts[utt.utt_id] = utt.transcript
            ref = utt.utt_id
        manifest.append(f"{utt.utt_id} {utt.speaker_id} {utt.phrase_id} {rel} {ref}")
    (directory / "manifest.txt").write_text("\n".join(manifest) + "\n")
    if transcripts:
        save_transcripts(directory / "transcripts.txt", transcripts)
    if corpus.trials is not None:
        save_trials(directory / "trials.txt", corpus.trials)
    if corpus.enrollment is not None:
        save_enrollment(directory / "enroll.txt", corpus.enrollment)
    if corpus.background_ids is not None:
        (directory / "background.txt").write_text(
            "\n".join(corpus.background_ids) + "\n"
        )


def load_corpus(directory) -> Corpus:
    """Read a corpus directory written by save_corpus (or hand-assembled)."""
    directory = Path(directory)
    transcripts = {}
    tr_path = directory / "transcripts.txt"
    if tr_path.exists():
        transcripts = load_transcripts(tr_path)
    utterances = {}
    for lineno, tokens in _data_lines(directory / "manifest.txt"):
        if len(tokens) != 5:
            raise TrialParseError("manifest line needs 5 fields", lineno)
        utt_id, speaker_id, phrase_id, rel, ref = tokens
        features = read_feature_file(directory / rel).astype(np.float64)
        utterances[utt_id] = Utterance(
            utt_id=utt_id,
            speaker_id=speaker_id,
            phrase_id=phrase_id,
            transcript=transcripts.get(ref) if ref != "-" else None,
            features=features,
            feature_path=rel,
        )
    trials = None
    if (directory / "trials.txt").exists():
        trials = load_trials(directory / "trials.txt")
    enrollment = None
    if (directory / "enroll.txt").exists():
        enrollment = load_enrollment(directory / "enroll.txt")
    background = None
    bg_path = directory / "background.txt"
    if bg_path.exists():
        background = tuple(
            tok[0] for _, tok in _data_lines(bg_path)
        )
    return Corpus(
        utterances=utterances,
        trials=trials,
        enrollment=enrollment,
        background_ids=background,
    )


# --- synthetic corpus -----------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Fully determines a synthetic corpus; same spec, same bytes."""

    num_speakers: int = 8
    num_phrases: int = 4
    phones_per_phrase: int = 3
    utterances_per_cell: int = 5
    seed: int = 0
    speaker_shift: float = 1.0      # stddev of per-speaker mean offsets
    noise_scale: float = 0.5        # frame noise stddev
    phone_scale: float = 2.0        # spread of global phone-state means
    feature_dim: int = 8
    background_speakers: int = 8
    enroll_per_cell: int = 3
    min_state_frames: int = 3
    max_extra_frames: int = 4       # per state: min + uniform{0..max_extra}

    def validate(self) -> None:
        counts = {
            "num_speakers": self.num_speakers,
            "num_phrases": self.num_phrases,
            "phones_per_phrase": self.phones_per_phrase,
            "utterances_per_cell": self.utterances_per_cell,
            "feature_dim": self.feature_dim,
            "enroll_per_cell": self.enroll_per_cell,
        }
        for name, value in counts.items():
            if value < 1:
                raise InvalidSpecError(f"{name} must be >= 1, got {value}")
        if self.background_speakers < 0:
            raise InvalidSpecError("background_speakers must be >= 0")
        if self.enroll_per_cell >= self.utterances_per_cell:
            raise InvalidSpecError(
                "enroll_per_cell must leave at least one test utterance per cell"
            )
        if self.min_state_frames < 3:
            raise InvalidSpecError("min_state_frames must be >= 3")
        if self.max_extra_frames < 0:
            raise InvalidSpecError("max_extra_frames must be >= 0")
        for name in ("speaker_shift", "noise_scale", "phone_scale"):
            if getattr(self, name) < 0:
                raise InvalidSpecError(f"{name} must be >= 0")


SILENCE_PHONE = "sil"
NUM_PHONE_STATES = 3


def generate_synthetic_corpus(spec: SyntheticSpec) -> Corpus:
    """Deterministic corpus with transcripts, trials, and enrollment map.

    Evaluation speakers are s00.., background speakers b00..; one model per
    (speaker, phrase) cell enrolls the first `enroll_per_cell` utterances
    and every remaining utterance is crossed against every model to form
    the TC/IC/TW/IW trial grid.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    dim = spec.feature_dim

    pool = [f"p{i:02d}" for i in range(spec.num_phrases * spec.phones_per_phrase)]
    phrase_ids = [f"phr{i}" for i in range(spec.num_phrases)]
    phrase_transcripts = {
        pid: tuple(rng.choice(pool, size=spec.phones_per_phrase, replace=False))
        for pid in phrase_ids
    }

    state_means = {
        (phone, s): spec.phone_scale * rng.standard_normal(dim)
        for phone in pool + [SILENCE_PHONE]
        for s in range(NUM_PHONE_STATES)
    }
    speakers = [f"s{i:02d}" for i in range(spec.num_speakers)]
    bg_speakers = [f"b{i:02d}" for i in range(spec.background_speakers)]
    offsets = {
        spk: spec.speaker_shift * rng.standard_normal(dim)
        for spk in speakers + bg_speakers
    }

    def synth_utterance(speaker: str, phrase: str) -> np.ndarray:
        segments = []
        phones = (SILENCE_PHONE,) + phrase_transcripts[phrase] + (SILENCE_PHONE,)
        for phone in phones:
            speech = phone != SILENCE_PHONE
            for s in range(NUM_PHONE_STATES):
                dur = spec.min_state_frames + int(rng.integers(spec.max_extra_frames + 1))
                mean = state_means[(phone, s)] + (offsets[speaker] if speech else 0.0)
                segments.append(mean + spec.noise_scale * rng.standard_normal((dur, dim)))
        return np.vstack(segments)

    utterances = {}
    background_ids = []
    enrollment = {}
    test_ids = []
    for speaker in bg_speakers + speakers:
        for phrase in phrase_ids:
            for k in range(spec.utterances_per_cell):
                utt_id = f"{speaker}_{phrase}_{k:02d}"
                utterances[utt_id] = Utterance(
                    utt_id=utt_id,
                    speaker_id=speaker,
                    phrase_id=phrase,
                    transcript=phrase_transcripts[phrase],
                    features=synth_utterance(speaker, phrase),
                )
                if speaker in bg_speakers:
                    background_ids.append(utt_id)
                elif k < spec.enroll_per_cell:
                    model_id = f"{speaker}-{phrase}"
                    enrollment.setdefault(model_id, [])
                    enrollment[model_id].append(utt_id)
                else:
                    test_ids.append(utt_id)

    trials = []
    for speaker in speakers:
        for phrase in phrase_ids:
            model_id = f"{speaker}-{phrase}"
            for utt_id in test_ids:
                utt = utterances[utt_id]
                same_speaker = utt.speaker_id == speaker
                same_phrase = utt.phrase_id == phrase
                trial_type = {
                    (True, True): "TC",
                    (False, True): "IC",
                    (True, False): "TW",
                    (False, False): "IW",
                }[(same_speaker, same_phrase)]
                trials.append(Trial(model_id=model_id, test_utt_id=utt_id,
                                    trial_type=trial_type))

    inventory = tuple(sorted({p for tr in phrase_transcripts.values() for p in tr}))
    return Corpus(
        utterances=utterances,
        trials=trials,
        enrollment={mid: tuple(utts) for mid, utts in enrollment.items()},
        background_ids=tuple(background_ids),
        inventory=inventory,
    )
