"""Two-stage inference: beamformer, then optional single-channel enhancer."""

from __future__ import annotations

import numpy as np

from . import beamformer as bf_mod
from . import enhancer as enh_mod
from .checkpoint import Checkpoint


def match_level(wave: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Rescale ``wave`` to the RMS of ``reference``.

    The beamformer is trained with a scale-invariant loss, so its output
    level is arbitrary; stage two and level-sensitive metrics need it pinned.
    """
    rms = np.sqrt(np.mean(np.square(wave)))
    if rms == 0.0:
        return wave
    return wave * (np.sqrt(np.mean(np.square(reference))) / rms)


class Pipeline:
    """Callable mixture -> stage outputs.

    ``beamformer`` and ``enhancer`` may be checkpoints, built torch modules or
    plain callables (e.g. an identity stand-in for tests).
    """

    def __init__(self, beamformer, enhancer=None, reference_channel: int = 0, level_match: bool = True):
        if isinstance(beamformer, Checkpoint):
            beamformer = bf_mod.build(beamformer)
        if isinstance(enhancer, Checkpoint):
            enhancer = enh_mod.build(enhancer)
        self.beamformer = beamformer
        self.enhancer = enhancer
        self.reference_channel = reference_channel
        self.level_match = level_match

    def beamform(self, mixture: np.ndarray) -> np.ndarray:
        mixture = np.asarray(mixture)
        if isinstance(self.beamformer, bf_mod.AFaSNet):
            self.beamformer.eval()
            z = bf_mod.beamform(mixture, None, model=self.beamformer)
        else:
            z = np.asarray(self.beamformer(mixture))
        z = np.asarray(z, dtype=np.float64)
        if self.level_match:
            z = match_level(z, mixture[self.reference_channel])
        return z

    def enhance(self, wave: np.ndarray) -> np.ndarray:
        if isinstance(self.enhancer, enh_mod.CLSTM):
            self.enhancer.eval()
            return enh_mod.enhance(wave, model=self.enhancer)
        return np.asarray(self.enhancer(wave), dtype=np.float64)

    def __call__(self, mixture: np.ndarray) -> dict:
        out = {"bf": self.beamform(mixture)}
        if self.enhancer is not None:
            out["enh"] = self.enhance(out["bf"])
        out["out"] = out.get("enh", out["bf"])
        return out
