"""Signal-processing primitives shared by both enhancement stages.

Waveforms are plain 1-D float arrays at :data:`SAMPLE_RATE`. Spectrograms are
stored time-major (frames x bins).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000
WINDOW_SIZE = 320
HOP = 160
NFFT = 512
MAG_FLOOR = 1e-8


@dataclass
class Spectrogram:
    """Complex STFT frames plus the analysis parameters that produced them.

    ``length`` is the (padded) waveform length the frames were cut from, so
    :func:`istft` can return a signal of the same length.
    """

    frames: np.ndarray
    window_size: int = WINDOW_SIZE
    hop: int = HOP
    nfft: int = NFFT
    length: int | None = None

    @property
    def shape(self):
        return self.frames.shape

    def magnitude(self) -> np.ndarray:
        return np.abs(self.frames)

    def phase(self) -> np.ndarray:
        return np.angle(self.frames)

    def with_frames(self, frames: np.ndarray) -> "Spectrogram":
        return Spectrogram(frames, self.window_size, self.hop, self.nfft, self.length)


@dataclass
class FrameStack:
    frames: np.ndarray  # N x L
    hop: int

    @property
    def frame_len(self) -> int:
        return self.frames.shape[1]


def hann(size: int) -> np.ndarray:
    """Periodic Hann window (sums to a constant at 50% overlap)."""
    n = np.arange(size)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / size)


def _check_params(window_size: int, hop: int, nfft: int) -> None:
    if window_size <= 0 or hop <= 0 or nfft <= 0:
        raise ValueError("window_size, hop and nfft must be positive")
    if window_size > nfft:
        raise ValueError(f"window_size ({window_size}) exceeds nfft ({nfft})")
    if hop > window_size:
        raise ValueError(f"hop ({hop}) exceeds window_size ({window_size})")


def stft(
    wave: np.ndarray,
    window_size: int = WINDOW_SIZE,
    hop: int = HOP,
    nfft: int = NFFT,
    pad: int = 0,
) -> Spectrogram:
    """Hann-windowed STFT with ``1 + (T + 2*pad - window_size) // hop`` frames."""
    _check_params(window_size, hop, nfft)
    wave = np.asarray(wave, dtype=np.float64)
    if wave.ndim != 1:
        raise ValueError(f"expected a 1-D waveform, got shape {wave.shape}")
    if pad:
        wave = np.pad(wave, (pad, pad))
    if wave.shape[0] < window_size:
        raise ValueError(
            f"waveform length {wave.shape[0]} is shorter than window_size {window_size}"
        )
    frames = sliding_window_view(wave, window_size)[::hop] * hann(window_size)
    spec = np.fft.rfft(frames, n=nfft, axis=-1)
    return Spectrogram(spec, window_size, hop, nfft, wave.shape[0])


def istft(spec: Spectrogram) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`.

    Samples whose squared-window sum is zero (the very first sample of an
    unpadded signal, and any tail not covered by a frame) come back as 0.
    """
    _check_params(spec.window_size, spec.hop, spec.nfft)
    frames = np.asarray(spec.frames)
    if frames.ndim != 2 or frames.shape[1] != spec.nfft // 2 + 1:
        raise ValueError(
            f"spectrogram has shape {frames.shape}, expected (N, {spec.nfft // 2 + 1})"
        )
    n_frames = frames.shape[0]
    covered = (n_frames - 1) * spec.hop + spec.window_size
    length = covered if spec.length is None else spec.length
    if length < covered:
        raise ValueError(f"length {length} shorter than the {covered} samples spanned by frames")

    win = hann(spec.window_size)
    chunks = np.fft.irfft(frames, n=spec.nfft, axis=-1)[:, : spec.window_size] * win
    out = np.zeros(length)
    norm = np.zeros(length)
    for i in range(n_frames):
        start = i * spec.hop
        out[start : start + spec.window_size] += chunks[i]
        norm[start : start + spec.window_size] += win**2
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    out[~nz] = 0.0
    return out


def frame_signal(wave: np.ndarray, frame_len: int, hop: int, pad: int = 0) -> FrameStack:
    """Cut ``wave`` (zero-padded by ``pad`` per side) into frames of ``frame_len``.

    A trailing remainder shorter than ``hop`` is dropped.
    """
    if frame_len <= 0 or hop <= 0:
        raise ValueError("frame_len and hop must be positive")
    wave = np.asarray(wave)
    padded = np.pad(wave, (pad, pad)) if pad else wave
    if padded.shape[0] < frame_len:
        raise ValueError(
            f"padded length {padded.shape[0]} yields no frames of length {frame_len}"
        )
    frames = sliding_window_view(padded, frame_len)[::hop].copy()
    return FrameStack(frames, hop)


def overlap_add(stack: FrameStack) -> np.ndarray:
    frames = np.asarray(stack.frames)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ValueError("cannot overlap-add an empty frame stack")
    n, length = frames.shape
    out = np.zeros((n - 1) * stack.hop + length, dtype=np.result_type(frames, np.float64))
    for i in range(n):
        out[i * stack.hop : i * stack.hop + length] += frames[i]
    return out


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity <a, b> / (|a| |b|); 0 when either vector is silent."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        logger.debug("ncc of a zero-norm vector; returning 0")
        return 0.0
    # clip guards the last ulp when a == b
    return float(np.clip(np.dot(a / na, b / nb), -1.0, 1.0))


def log_magnitude(spec, floor: float = MAG_FLOOR) -> np.ndarray:
    if floor <= 0:
        raise ValueError("floor must be positive")
    frames = spec.frames if isinstance(spec, Spectrogram) else np.asarray(spec)
    return np.log(np.maximum(np.abs(frames), floor))
