"""16-bit PCM WAV reading and writing on top of the stdlib ``wave`` module."""

from __future__ import annotations

import logging
import wave

import numpy as np

from .dsp import SAMPLE_RATE

logger = logging.getLogger(__name__)


class WavFormatError(ValueError):
    pass


def read_wav(path, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Return float32 samples in [-1, 1): shape (T,) for mono, (C, T) otherwise."""
    try:
        fh = wave.open(str(path), "rb")
    except (wave.Error, EOFError) as err:
        raise WavFormatError(f"{path}: {err}") from err
    with fh:
        if fh.getsampwidth() != 2:
            raise WavFormatError(f"{path}: sample width is {8 * fh.getsampwidth()} bits, expected 16")
        if fh.getframerate() != sample_rate:
            raise WavFormatError(f"{path}: sample rate is {fh.getframerate()} Hz, expected {sample_rate}")
        channels = fh.getnchannels()
        n_frames = fh.getnframes()
        raw = fh.readframes(n_frames)
    expected = n_frames * channels * 2
    if len(raw) != expected:
        raise WavFormatError(f"{path}: data chunk truncated ({len(raw)} of {expected} bytes)")
    pcm = np.frombuffer(raw, dtype="<i2").reshape(-1, channels)
    x = pcm.astype(np.float32) / 32768.0
    return x[:, 0] if channels == 1 else np.ascontiguousarray(x.T)


def write_wav(samples, path, sample_rate: int = SAMPLE_RATE) -> None:
    """Write (T,) or (C, T) float samples as 16-bit PCM, clipping to [-1, 1)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2:
        raise ValueError(f"expected (T,) or (C, T) samples, got shape {x.shape}")
    if np.any(~np.isfinite(x)):
        raise ValueError("cannot write non-finite samples")
    if np.any(x >= 1.0) or np.any(x < -1.0):
        logger.warning("%s: clipping %d out-of-range samples", path, int(np.sum((x >= 1.0) | (x < -1.0))))
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with open(path, "wb") as raw, wave.open(raw, "wb") as fh:
        fh.setnchannels(x.shape[0])
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(np.ascontiguousarray(pcm.T).tobytes())
