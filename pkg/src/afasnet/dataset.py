"""On-disk example sets and batch collation."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .simulate import SimulatedExample
from .wavio import read_wav, write_wav


def save_example(directory, name: str, example: SimulatedExample) -> None:
    """Write ``<name>_mix.wav`` (C channels), ``<name>_target.wav`` and a ``<name>.json`` sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_wav(example.mixture, directory / f"{name}_mix.wav")
    if example.target is not None:
        write_wav(example.target, directory / f"{name}_target.wav")
    meta = dict(example.meta, id=name)
    (directory / f"{name}.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_examples(directory) -> list[SimulatedExample]:
    """Load every ``*_mix.wav`` in ``directory``; a missing target gives ``target=None``."""
    directory = Path(directory)
    out = []
    for mix_path in sorted(directory.glob("*_mix.wav")):
        name = mix_path.name[: -len("_mix.wav")]
        mixture = read_wav(mix_path)
        if mixture.ndim == 1:
            mixture = mixture[None]
        target_path = directory / f"{name}_target.wav"
        target = read_wav(target_path) if target_path.exists() else None
        meta_path = directory / f"{name}.json"
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        meta.setdefault("id", name)
        out.append(SimulatedExample(mixture, target, meta))
    if not out:
        raise FileNotFoundError(f"no *_mix.wav files in {directory}")
    return out


def as_pair(item):
    """Accept SimulatedExample-like objects or (mixture, target) tuples."""
    if isinstance(item, tuple):
        return item[0], item[1]
    return item.mixture, item.target


def pad_batch(arrays: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Zero-pad along the last axis to the longest member; returns (batch, lengths)."""
    lengths = np.array([a.shape[-1] for a in arrays])
    longest = lengths.max()
    batch = np.stack([np.pad(a, [(0, 0)] * (a.ndim - 1) + [(0, longest - a.shape[-1])]) for a in arrays])
    return batch, lengths
