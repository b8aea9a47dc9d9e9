"""Training objectives and evaluation metrics.

The SI-SNR routines work on torch tensors (batched over leading axes, so the
loss is differentiable) and also accept numpy arrays, in which case the
computation runs in float64 and plain floats come back.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch

from . import dsp

SI_SNR_CLAMP_DB = 60.0
_CLAMP_RATIO = 10.0 ** (-SI_SNR_CLAMP_DB / 10.0)


def _length_mask(like: torch.Tensor, lengths) -> torch.Tensor | None:
    if lengths is None:
        return None
    lengths = torch.as_tensor(lengths, device=like.device)
    idx = torch.arange(like.shape[-1], device=like.device)
    return (idx < lengths[..., None]).to(like.dtype)


def _si_snr_db(est: torch.Tensor, ref: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch: estimate {tuple(est.shape)} vs reference {tuple(ref.shape)}")
    if mask is None:
        mask = torch.ones_like(ref)
    count = mask.sum(-1, keepdim=True)
    est = (est - (est * mask).sum(-1, keepdim=True) / count) * mask
    ref = (ref - (ref * mask).sum(-1, keepdim=True) / count) * mask

    ref_energy = (ref**2).sum(-1, keepdim=True)
    if bool((ref_energy == 0).any()):
        raise ValueError("reference is silent; SI-SNR is undefined")
    target = (est * ref).sum(-1, keepdim=True) / ref_energy * ref
    t = (target**2).sum(-1)
    e = ((est - target) ** 2).sum(-1)

    # Relative floors clamp the ratio to +-60 dB without breaking scale
    # invariance or producing inf/nan gradients.
    t_f = torch.maximum(t, e * _CLAMP_RATIO)
    e_f = torch.maximum(e, t * _CLAMP_RATIO)
    silent = (t == 0) & (e == 0)
    t_f = torch.where(silent, torch.full_like(t, _CLAMP_RATIO), t_f)
    e_f = torch.where(silent, torch.ones_like(e), e_f)
    return 10.0 * torch.log10(t_f / e_f)


def si_snr(estimate, reference, lengths=None):
    """Scale-invariant SNR in dB, clamped to [-60, 60].

    Both signals are zero-meaned over their valid samples before the
    estimate is projected onto the reference. ``lengths`` restricts the
    computation to the first ``lengths[b]`` samples of each batch row.
    """
    if isinstance(estimate, torch.Tensor):
        return _si_snr_db(estimate, reference, _length_mask(estimate, lengths))
    est = torch.as_tensor(np.asarray(estimate, dtype=np.float64))
    ref = torch.as_tensor(np.asarray(reference, dtype=np.float64))
    out = _si_snr_db(est, ref, _length_mask(est, lengths))
    return float(out) if out.ndim == 0 else out.numpy()


def si_snr_loss(estimate: torch.Tensor, reference: torch.Tensor, lengths=None) -> torch.Tensor:
    """Negative SI-SNR averaged over the batch."""
    return -_si_snr_db(estimate, reference, _length_mask(estimate, lengths)).mean()


def mse_loss(pred, target, mask=None):
    """Mean squared error; ``mask`` (broadcastable to ``pred``) selects valid entries."""
    is_numpy = not isinstance(pred, torch.Tensor)
    p = torch.as_tensor(np.asarray(pred, dtype=np.float64)) if is_numpy else pred
    t = torch.as_tensor(np.asarray(target, dtype=np.float64)) if is_numpy else target
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {tuple(p.shape)} vs {tuple(t.shape)}")
    sq = (p - t) ** 2
    if mask is None:
        out = sq.mean()
    else:
        mask = torch.as_tensor(mask, dtype=sq.dtype).expand_as(sq)
        out = (sq * mask).sum() / mask.sum()
    return float(out) if is_numpy else out


def log_spectral_distance(estimate, reference, floor: float = dsp.MAG_FLOOR) -> float:
    """RMS over all frames and bins of 20*log10(|S_est| / |S_ref|), in dB."""
    estimate = np.asarray(estimate, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if estimate.shape != reference.shape:
        raise ValueError(f"length mismatch: {estimate.shape} vs {reference.shape}")
    s_est = np.maximum(np.abs(dsp.stft(estimate).frames), floor)
    s_ref = np.maximum(np.abs(dsp.stft(reference).frames), floor)
    diff = 20.0 * (np.log10(s_est) - np.log10(s_ref))
    return float(np.sqrt(np.mean(diff**2)))


@dataclass
class MetricReport:
    """Per-utterance metric rows plus aggregate statistics.

    Column names follow ``<metric>_<stage>``; ``in`` is the reference channel
    of the mixture, ``bf`` the beamformer output, ``enh`` the enhancer output
    and ``out`` whatever the last stage produced.
    """

    rows: list[dict] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.rows)

    @property
    def columns(self) -> list[str]:
        cols: list[str] = []
        for row in self.rows:
            cols.extend(k for k in row if k != "id" and k not in cols)
        return cols

    def aggregate(self) -> dict:
        agg = {}
        for col in self.columns:
            vals = np.array([row[col] for row in self.rows if col in row], dtype=np.float64)
            agg[col] = {"mean": float(vals.mean()), "std": float(vals.std()), "count": int(vals.size)}
        return agg

    def mean(self, column: str) -> float:
        return self.aggregate()[column]["mean"]

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "aggregate": self.aggregate(),
            "count": self.count,
            "skipped": self.skipped,
        }

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False)

    @classmethod
    def from_text(cls, text: str) -> "MetricReport":
        data = json.loads(text)
        return cls(rows=data["rows"], skipped=data.get("skipped", []))

    def summary(self) -> str:
        lines = [f"utterances: {self.count} (skipped {len(self.skipped)})"]
        for col, stats in self.aggregate().items():
            lines.append(f"  {col:<12} mean {stats['mean']:8.3f}  std {stats['std']:7.3f}")
        return "\n".join(lines)

