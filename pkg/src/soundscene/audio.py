"""Mono PCM WAV I/O, resampling and level helpers.

All buffers are float64 numpy arrays in a nominal [-1, 1] range. Files are
read and written with a small hand-rolled RIFF codec so that unsupported
encodings fail with a precise message instead of silently decoding.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from .errors import DataFormatError

PCM_SCALE = 32768.0

_FMT_PCM = 1
_FMT_IEEE_FLOAT = 3


@dataclass
class AudioBuffer:
    """A mono audio signal: finite float64 samples at a fixed rate."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("AudioBuffer requires a non-empty 1-D signal")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("AudioBuffer samples must be finite")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


def load_wav(path) -> AudioBuffer:
    """Read a PCM WAV file (16-bit int or 32-bit float, mono or stereo).

    Stereo is downmixed by channel mean; 16-bit samples are scaled by
    1/32768 into [-1, 1). Anything else raises DataFormatError naming the
    encoding.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise DataFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (chunk_len,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + chunk_len]
        if chunk_id == b"fmt ":
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            data = body
        pos += 8 + chunk_len + (chunk_len & 1)  # chunks are word-aligned

    if fmt is None or data is None:
        raise DataFormatError(f"{path}: missing fmt or data chunk")
    audio_format, channels, rate, _byte_rate, _block_align, bits = fmt
    if channels < 1:
        raise DataFormatError(f"{path}: invalid channel count {channels}")

    if audio_format == _FMT_PCM and bits == 16:
        samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / PCM_SCALE
    elif audio_format == _FMT_IEEE_FLOAT and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        name = {_FMT_PCM: "PCM", _FMT_IEEE_FLOAT: "IEEE float"}.get(
            audio_format, f"format code {audio_format}"
        )
        raise DataFormatError(f"{path}: unsupported encoding {name} {bits}-bit")

    if channels > 1:
        n = (len(samples) // channels) * channels
        samples = samples[:n].reshape(-1, channels).mean(axis=1)
    return AudioBuffer(samples, rate)


def write_wav(buffer: AudioBuffer, path) -> None:
    """Write 16-bit PCM mono WAV, rounding half away from zero and
    saturating at the int16 limits (so a sample of 1.0 encodes to 32767)."""
    x = buffer.samples * PCM_SCALE
    q = np.trunc(x + np.copysign(0.5, x))
    q = np.clip(q, -32768, 32767).astype("<i2")
    body = q.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(body),
        b"WAVE",
        b"fmt ",
        16,
        _FMT_PCM,
        1,
        buffer.sample_rate_hz,
        buffer.sample_rate_hz * 2,
        2,
        16,
        b"data",
        len(body),
    )
    try:
        Path(path).write_bytes(header + body)
    except OSError as exc:
        raise DataFormatError(f"cannot write {path}: {exc}") from exc


def resample(buffer: AudioBuffer, target_rate_hz: int) -> AudioBuffer:
    """Band-limited polyphase resampling (windowed sinc).

    Output length is round(n * target / source). Equal rates pass the
    buffer through untouched.
    """
    if target_rate_hz <= 0:
        raise ValueError("target rate must be positive")
    if target_rate_hz == buffer.sample_rate_hz:
        return buffer
    g = math.gcd(target_rate_hz, buffer.sample_rate_hz)
    up, down = target_rate_hz // g, buffer.sample_rate_hz // g
    out = resample_poly(buffer.samples, up, down)
    n = len(buffer.samples)
    want = (2 * n * up + down) // (2 * down)  # round(n * up / down)
    if len(out) > want:
        out = out[:want]
    elif len(out) < want:
        out = np.concatenate([out, np.zeros(want - len(out))])
    return AudioBuffer(out, target_rate_hz)


def rms(samples: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Root mean square, optionally restricted to a boolean mask."""
    x = samples[mask] if mask is not None else samples
    if x.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(np.square(x))))


def db_to_linear(db: float) -> float:
    return float(10.0 ** (db / 20.0))


def linear_to_db(linear: float) -> float:
    return float(20.0 * np.log10(linear))
