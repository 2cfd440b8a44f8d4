"""Binary file formats: WAV input, feature files, model containers.

Feature file layout (little-endian):

    magic  4 bytes  b"TDSV"
    u16   format version (currently 1)
    u32   rows
    u32   cols
    payload: rows*cols float32, row-major

Model container layout (little-endian):

    magic  8 bytes  b"TDSVMODL"
    u16   format version (currently 1)
    u32   length of JSON index
    JSON index: {"kind", "meta", "arrays": [{"name", "dtype", "shape"}]}
    array payloads concatenated in index order (all floats stored as f64)
    u32   CRC32 of everything between the magic and the checksum

Readers are pure functions of the file contents and safe to call
concurrently; writers assume exclusive access to their output path.
"""

from __future__ import annotations

import json
import struct
import wave
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    CorruptPayloadError,
    DimensionOverflowError,
    NotAWavError,
    TruncatedFileError,
    UnsupportedChannelsError,
    UnsupportedEncodingError,
    UnsupportedRateError,
    VersionMismatchError,
)

FEATURE_MAGIC = b"TDSV"
FEATURE_VERSION = 1
MODEL_MAGIC = b"TDSVMODL"
MODEL_VERSION = 1

REQUIRED_SAMPLE_RATE = 16000
_U32_MAX = 2**32 - 1


@dataclass(frozen=True)
class Waveform:
    """Mono audio, samples scaled to [-1, 1]."""

    samples: np.ndarray
    sample_rate: int


def read_wav(path) -> Waveform:
    """Read a RIFF/WAVE file; only 16-bit PCM mono at 16 kHz is accepted."""
    try:
        with wave.open(str(path), "rb") as wav:
            nchannels = wav.getnchannels()
            sampwidth = wav.getsampwidth()
            framerate = wav.getframerate()
            comptype = wav.getcomptype()
            nframes = wav.getnframes()
            raw = wav.readframes(nframes)
    except wave.Error as exc:
        raise NotAWavError(f"{path}: {exc}") from exc
    except EOFError as exc:
        raise NotAWavError(f"{path}: truncated RIFF header") from exc

    if comptype != "NONE" or sampwidth != 2:
        raise UnsupportedEncodingError(
            f"{path}: expected 16-bit PCM, got comptype={comptype} sampwidth={sampwidth}"
        )
    if nchannels != 1:
        raise UnsupportedChannelsError(f"{path}: expected mono, got {nchannels} channels")
    if framerate != REQUIRED_SAMPLE_RATE:
        raise UnsupportedRateError(
            f"{path}: expected {REQUIRED_SAMPLE_RATE} Hz, got {framerate} Hz"
        )

    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples=samples, sample_rate=framerate)


def write_feature_file(path, matrix) -> None:
    """Write a 2-D float matrix as float32, bit-exact under read_feature_file."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.size == 0:
        raise ValueError("feature matrix must be non-empty and 2-D")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("feature matrix contains non-finite values")
    rows, cols = matrix.shape
    if rows > _U32_MAX or cols > _U32_MAX:
        raise DimensionOverflowError(f"matrix shape {matrix.shape} exceeds u32 header fields")
    payload = np.ascontiguousarray(matrix, dtype="<f4").tobytes()
    header = FEATURE_MAGIC + struct.pack("<HII", FEATURE_VERSION, rows, cols)
    Path(path).write_bytes(header + payload)


def read_feature_file(path) -> np.ndarray:
    """Read a feature file back as float32, exactly as stored."""
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != FEATURE_MAGIC:
        raise BadMagicError(f"{path}: not a feature file")
    if len(data) < 14:
        raise TruncatedFileError(f"{path}: header truncated")
    version, rows, cols = struct.unpack("<HII", data[4:14])
    if version > FEATURE_VERSION:
        raise VersionMismatchError(f"{path}: format version {version} not supported")
    expected = rows * cols * 4
    payload = data[14:]
    if len(payload) < expected:
        raise TruncatedFileError(
            f"{path}: header claims {rows}x{cols} but payload holds "
            f"{len(payload) // 4} values"
        )
    matrix = np.frombuffer(payload[:expected], dtype="<f4").reshape(rows, cols)
    return matrix.copy()


# --- model container ---------------------------------------------------------

def _pack_container(kind: str, meta: dict, arrays: list[tuple[str, np.ndarray]]) -> bytes:
    index = {
        "kind": kind,
        "meta": meta,
        "arrays": [
            {"name": name, "dtype": "f8" if arr.dtype.kind == "f" else "i8",
             "shape": list(arr.shape)}
            for name, arr in arrays
        ],
    }
    index_bytes = json.dumps(index, sort_keys=True).encode("utf-8")
    body = struct.pack("<HI", MODEL_VERSION, len(index_bytes)) + index_bytes
    for _, arr in arrays:
        dtype = "<f8" if arr.dtype.kind == "f" else "<i8"
        body += np.ascontiguousarray(arr, dtype=dtype).tobytes()
    crc = zlib.crc32(body) & 0xFFFFFFFF
    return MODEL_MAGIC + body + struct.pack("<I", crc)


def _unpack_container(data: bytes, origin: str) -> tuple[str, dict, dict[str, np.ndarray]]:
    if len(data) < len(MODEL_MAGIC) + 10 or data[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise CorruptPayloadError(f"{origin}: not a model container")
    body, crc_bytes = data[len(MODEL_MAGIC):-4], data[-4:]
    (crc_stored,) = struct.unpack("<I", crc_bytes)
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise CorruptPayloadError(f"{origin}: checksum mismatch")
    version, index_len = struct.unpack("<HI", body[:6])
    if version > MODEL_VERSION:
        raise VersionMismatchError(f"{origin}: container version {version} not supported")
    try:
        index = json.loads(body[6 : 6 + index_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptPayloadError(f"{origin}: bad index: {exc}") from exc
    offset = 6 + index_len
    arrays: dict[str, np.ndarray] = {}
    for entry in index["arrays"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        chunk = body[offset : offset + nbytes]
        if len(chunk) < nbytes:
            raise CorruptPayloadError(f"{origin}: array {entry['name']} truncated")
        dtype = "<f8" if entry["dtype"] == "f8" else "<i8"
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(shape).copy()
        offset += nbytes
    return index["kind"], index["meta"], arrays


def _gmm_arrays(gmm) -> tuple[dict, list[tuple[str, np.ndarray]]]:
    return {}, [("weights", gmm.weights), ("means", gmm.means), ("variances", gmm.variances)]


def _gmm_from(meta, arrays, prefix=""):
    from .gmm import Gmm

    return Gmm(
        weights=arrays[prefix + "weights"],
        means=arrays[prefix + "means"],
        variances=arrays[prefix + "variances"],
    )


def _state_gmm_arrays(obj, with_trans: bool):
    meta = {
        "phones": list(obj.phones),
        "silence_phone": obj.silence_phone,
    }
    arrays: list[tuple[str, np.ndarray]] = []
    for phone in obj.phones:
        for s in range(obj.num_states):
            gmm = obj.state_gmm(phone, s)
            for part in ("weights", "means", "variances"):
                arrays.append((f"{phone}/{s}/{part}", getattr(gmm, part)))
        if with_trans:
            arrays.append((f"{phone}/trans", obj.hmms[phone].transitions))
    return meta, arrays


def _model_payload(model) -> tuple[str, dict, list[tuple[str, np.ndarray]]]:
    from .gmm import Gmm
    from .hmm import PhoneHMMSet, StateGmmSet
    from .ivector import IVector, TotalVariability

    if isinstance(model, Gmm):
        meta, arrays = _gmm_arrays(model)
        return "gmm", meta, arrays
    if isinstance(model, PhoneHMMSet):
        meta, arrays = _state_gmm_arrays(model, with_trans=True)
        return "phone_hmm_set", meta, arrays
    if isinstance(model, StateGmmSet):
        meta, arrays = _state_gmm_arrays(model, with_trans=False)
        return "state_gmm_set", meta, arrays
    if isinstance(model, TotalVariability):
        meta = {"slot_keys": list(model.layout.keys), "dim": model.layout.dim}
        arrays = [("t", model.t), ("m", model.m), ("sigma", model.sigma)]
        return "total_variability", meta, arrays
    if isinstance(model, IVector):
        arrays = [("w", model.w)]
        if model.precision is not None:
            arrays.append(("precision", model.precision))
        return "ivector", {"has_precision": model.precision is not None}, arrays
    if isinstance(model, dict):
        meta = {"entries": []}
        arrays = []
        for i, (name, entry) in enumerate(model.items()):
            kind, sub_meta, sub_arrays = _model_payload(entry)
            meta["entries"].append({"name": name, "kind": kind, "meta": sub_meta})
            arrays.extend((f"{i}/{n}", a) for n, a in sub_arrays)
        return "bundle", meta, arrays
    raise TypeError(f"cannot serialize model of type {type(model).__name__}")


def _model_from(kind: str, meta: dict, arrays: dict[str, np.ndarray], origin: str):
    from .hmm import PhoneHMM, PhoneHMMSet, StateGmmSet
    from .ivector import IVector, SlotLayout, TotalVariability

    try:
        if kind == "gmm":
            return _gmm_from(meta, arrays)
        if kind in ("phone_hmm_set", "state_gmm_set"):
            phones = meta["phones"]
            gmms = {
                (phone, s): _gmm_from(meta, arrays, prefix=f"{phone}/{s}/")
                for phone in phones
                for s in range(3)
            }
            if kind == "state_gmm_set":
                return StateGmmSet(
                    phones=tuple(phones),
                    silence_phone=meta["silence_phone"],
                    gmms=gmms,
                )
            hmms = {
                phone: PhoneHMM(
                    phone=phone,
                    state_gmms=tuple(gmms[(phone, s)] for s in range(3)),
                    transitions=arrays[f"{phone}/trans"],
                )
                for phone in phones
            }
            return PhoneHMMSet(
                phones=tuple(phones), silence_phone=meta["silence_phone"], hmms=hmms
            )
        if kind == "total_variability":
            layout = SlotLayout(keys=tuple(meta["slot_keys"]), dim=int(meta["dim"]))
            return TotalVariability(
                t=arrays["t"], m=arrays["m"], sigma=arrays["sigma"], layout=layout
            )
        if kind == "ivector":
            return IVector(w=arrays["w"], precision=arrays.get("precision"))
        if kind == "bundle":
            out = {}
            for i, entry in enumerate(meta["entries"]):
                sub = {
                    name[len(f"{i}/") :]: arr
                    for name, arr in arrays.items()
                    if name.startswith(f"{i}/")
                }
                out[entry["name"]] = _model_from(entry["kind"], entry["meta"], sub, origin)
            return out
    except KeyError as exc:
        raise CorruptPayloadError(f"{origin}: missing section {exc}") from exc
    raise CorruptPayloadError(f"{origin}: unknown model kind {kind!r}")


def save_model(path, model) -> None:
    """Serialize a model (Gmm, PhoneHMMSet, StateGmmSet, TotalVariability,
    IVector, or a dict of those) with full float64 precision."""
    kind, meta, arrays = _model_payload(model)
    Path(path).write_bytes(_pack_container(kind, meta, arrays))


def load_model(path):
    """Inverse of save_model; round-trips every parameter bit-exactly."""
    data = Path(path).read_bytes()
    kind, meta, arrays = _unpack_container(data, str(path))
    return _model_from(kind, meta, arrays, str(path))
