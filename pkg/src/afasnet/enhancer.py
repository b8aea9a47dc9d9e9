"""Single-channel log-spectral residual-gain enhancer (CNN + LSTM).

The network reads the log-magnitude STFT of the beamformed signal and
predicts ``R = log|X| - log|Z|``, the natural-log ratio between clean and
beamformed magnitudes. Enhancement multiplies the beamformed STFT by
``exp(R)``, which keeps the beamformed phase.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import dsp
from .beamformer import load_arrays


@dataclass
class EnhancerConfig:
    n_bins: int = dsp.NFFT // 2 + 1
    conv_channels: tuple[int, ...] = (32, 32, 64, 64)
    conv_kernels: tuple[tuple[int, int], ...] = ((5, 21), (5, 21), (3, 41), (3, 41))
    reduce_channels: int = 2
    lstm_hidden: int = 512
    residual_scale: float = 8.0
    window_size: int = dsp.WINDOW_SIZE
    hop: int = dsp.HOP
    nfft: int = dsp.NFFT
    mag_floor: float = dsp.MAG_FLOOR

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        self.conv_kernels = tuple(tuple(int(v) for v in k) for k in self.conv_kernels)
        if len(self.conv_channels) != len(self.conv_kernels):
            raise ValueError("conv_channels and conv_kernels must have the same length")
        for kt, kf in self.conv_kernels:
            if kt % 2 == 0 or kf % 2 == 0:
                raise ValueError(f"kernel {(kt, kf)} must be odd for size-preserving padding")
        if min(self.conv_channels + (self.reduce_channels, self.lstm_hidden, self.n_bins)) <= 0:
            raise ValueError("all layer widths must be positive")
        if self.residual_scale <= 0:
            raise ValueError("residual_scale must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["conv_kernels"] = [list(k) for k in self.conv_kernels]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnhancerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown enhancer config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def desk(cls, **overrides) -> "EnhancerConfig":
        cfg = dict(conv_channels=(8, 8, 16, 16), lstm_hidden=256)
        cfg.update(overrides)
        return cls(**cfg)


class CLSTM(nn.Module):
    """Four size-preserving ReLU conv layers, a 1x1 map reduction, then two
    LSTMs. The second LSTM is ``n_bins`` wide; its (-1, 1)-bounded output,
    times the fixed ``residual_scale``, is the residual."""

    def __init__(self, cfg: EnhancerConfig):
        super().__init__()
        self.cfg = cfg
        convs = []
        in_ch = 1
        for ch, (kt, kf) in zip(cfg.conv_channels, cfg.conv_kernels):
            convs.append(nn.Conv2d(in_ch, ch, (kt, kf), padding=(kt // 2, kf // 2)))
            in_ch = ch
        self.convs = nn.ModuleList(convs)
        self.reduce = nn.Conv2d(in_ch, cfg.reduce_channels, 1)
        self.lstm1 = nn.LSTM(cfg.reduce_channels * cfg.n_bins, cfg.lstm_hidden, batch_first=True)
        self.lstm2 = nn.LSTM(cfg.lstm_hidden, cfg.n_bins, batch_first=True)

    def forward(self, logmag: torch.Tensor) -> torch.Tensor:
        """(B, N, K) log magnitudes -> (B, N, K) residual."""
        if logmag.shape[-1] != self.cfg.n_bins:
            raise ValueError(f"expected {self.cfg.n_bins} frequency bins, got {logmag.shape[-1]}")
        b, n, k = logmag.shape
        x = logmag[:, None]
        for conv in self.convs:
            x = F.relu(conv(x))
        x = self.reduce(x)  # B, R, N, K
        x = x.permute(0, 2, 1, 3).reshape(b, n, -1)
        x, _ = self.lstm1(x)
        x, _ = self.lstm2(x)
        return self.cfg.residual_scale * x


def residual_target(clean: dsp.Spectrogram, beamformed: dsp.Spectrogram, floor: float = dsp.MAG_FLOOR) -> np.ndarray:
    """log|X| - log|Z| with magnitudes floored at ``floor``."""
    if clean.shape != beamformed.shape:
        raise ValueError(f"spectrogram shapes differ: {clean.shape} vs {beamformed.shape}")
    return dsp.log_magnitude(clean, floor) - dsp.log_magnitude(beamformed, floor)


def apply_residual(beamformed: dsp.Spectrogram, residual: np.ndarray) -> dsp.Spectrogram:
    """Scale each beamformed bin by exp(residual); phase is untouched."""
    residual = np.asarray(residual)
    if residual.shape != beamformed.shape:
        raise ValueError(f"residual shape {residual.shape} does not match spectrogram {beamformed.shape}")
    return beamformed.with_frames(beamformed.frames * np.exp(residual))


def analysis_pad(n_samples: int, hop: int) -> tuple[int, int]:
    """Zero padding (left, right) so every input sample is covered by two frames."""
    return hop, hop + (-n_samples) % hop


def analyze(wave: np.ndarray, cfg: EnhancerConfig) -> dsp.Spectrogram:
    left, right = analysis_pad(len(wave), cfg.hop)
    padded = np.pad(np.asarray(wave, dtype=np.float64), (left, right))
    return dsp.stft(padded, cfg.window_size, cfg.hop, cfg.nfft)


def synthesize(spec: dsp.Spectrogram, n_samples: int, cfg: EnhancerConfig) -> np.ndarray:
    left, _ = analysis_pad(n_samples, cfg.hop)
    return dsp.istft(spec)[left : left + n_samples]


def predict_residual(logmag: np.ndarray, model: CLSTM) -> np.ndarray:
    logmag = np.asarray(logmag)
    if not np.all(np.isfinite(logmag)):
        raise ValueError("log-magnitude input contains non-finite values")
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        out = model(torch.as_tensor(logmag, dtype=dtype)[None])
    return out[0].double().numpy()


def build(checkpoint) -> CLSTM:
    if checkpoint.kind != "enhancer":
        raise ValueError(f"expected an enhancer checkpoint, got {checkpoint.kind!r}")
    model = CLSTM(EnhancerConfig.from_dict(checkpoint.config))
    load_arrays(model, checkpoint.tensors)
    return model.eval()


def enhance(wave: np.ndarray, checkpoint=None, model: CLSTM | None = None) -> np.ndarray:
    """STFT -> log magnitude -> residual -> gain with beamformed phase -> iSTFT."""
    model = model or build(checkpoint)
    cfg = model.cfg
    wave = np.asarray(wave, dtype=np.float64)
    spec = analyze(wave, cfg)
    residual = predict_residual(dsp.log_magnitude(spec, cfg.mag_floor), model)
    return synthesize(apply_residual(spec, residual), len(wave), cfg)
