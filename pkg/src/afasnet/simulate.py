"""Desk-scale multichannel data simulation.

Shoebox room impulse responses come from the image-source method with a
single frequency-independent reflection coefficient per wall bounce and
8-tap windowed-sinc fractional delays. Mixtures are built by convolving a
clean source and a noise source with their RIRs and scaling the noise image
to hit a requested SNR at the reference microphone.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve, lfilter

from .dsp import SAMPLE_RATE

logger = logging.getLogger(__name__)

FD_TAPS = 8
ARRAY_KINDS = ("circular", "linear_uniform", "linear_nonuniform")
ROOM_RANGE = (3.0, 8.0)
HEIGHT_RANGE = (1.0, 1.5)
# gaps between neighbouring mics of the non-uniform linear array, in units of spacing
_NONUNIFORM_GAPS = (1.0, 2.0, 1.5, 3.0, 1.5, 2.0, 1.0)


@dataclass
class RoomSpec:
    dims: tuple[float, float, float]
    absorption: float = 0.5
    max_image_order: int = 2
    speed_of_sound: float = 343.0
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.dims = tuple(float(d) for d in self.dims)
        if len(self.dims) != 3 or min(self.dims) <= 0:
            raise ValueError(f"room dims must be three positive lengths, got {self.dims}")
        if not 0.0 < self.absorption <= 1.0:
            raise ValueError(f"absorption must be in (0, 1], got {self.absorption}")
        if self.max_image_order < 0:
            raise ValueError("max_image_order must be non-negative")

    @property
    def reflection_coeff(self) -> float:
        return math.sqrt(1.0 - self.absorption)

    def contains(self, pos) -> bool:
        pos = np.asarray(pos, dtype=np.float64)
        return bool(np.all(pos > 0.0) and np.all(pos < np.asarray(self.dims)))


@dataclass
class ArrayGeometry:
    kind: str
    mic_positions: np.ndarray  # M x 3
    center: np.ndarray
    height: float

    @property
    def n_mics(self) -> int:
        return self.mic_positions.shape[0]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "mic_positions": self.mic_positions.tolist(),
            "center": self.center.tolist(),
            "height": self.height,
        }


def _check_inside(room: RoomSpec, pos, what: str) -> np.ndarray:
    pos = np.asarray(pos, dtype=np.float64)
    if pos.shape != (3,):
        raise ValueError(f"{what} position must be (x, y, z), got shape {pos.shape}")
    if not room.contains(pos):
        raise ValueError(f"{what} position {pos.tolist()} is not strictly inside room {room.dims}")
    return pos


def image_sources(room: RoomSpec, source, mic, max_order: int | None = None):
    """Enumerate image sources up to ``max_order`` reflections.

    Returns ``(delays, amplitudes, orders)`` where delays are in samples and
    amplitudes are ``reflection_coeff**order / distance``.
    """
    source = _check_inside(room, source, "source")
    mic = _check_inside(room, mic, "mic")
    if np.allclose(source, mic):
        raise ValueError("source and mic coincide")
    order = room.max_image_order if max_order is None else max_order
    dims = np.asarray(room.dims)
    beta = room.reflection_coeff

    rng = range(-order, order + 1)
    idx = np.array([n for n in itertools.product(rng, rng, rng) if sum(map(abs, n)) <= order])
    odd = idx % 2 == 1
    # even n: n*L + s;  odd n: (n + 1)*L - s
    img = np.where(odd, (idx + 1) * dims - source, idx * dims + source)
    dist = np.linalg.norm(img - mic, axis=1)
    orders = np.abs(idx).sum(axis=1)
    delays = dist / room.speed_of_sound * room.sample_rate
    amps = beta**orders / dist
    return delays, amps, orders


def _fractional_delay_taps(delay: float):
    base = math.floor(delay)
    n = np.arange(base - FD_TAPS // 2 + 1, base + FD_TAPS // 2 + 1)
    t = n - delay
    w = 0.5 + 0.5 * np.cos(np.pi * t / (FD_TAPS // 2))
    return n, np.sinc(t) * w


def render_rir(delays, amps, length: int | None = None) -> np.ndarray:
    delays = np.asarray(delays, dtype=np.float64)
    if length is None:
        length = int(math.ceil(delays.max())) + FD_TAPS
    rir = np.zeros(length)
    for d, a in zip(delays, amps):
        n, taps = _fractional_delay_taps(d)
        keep = (n >= 0) & (n < length)
        np.add.at(rir, n[keep], a * taps[keep])
    return rir


def image_method_rir(room: RoomSpec, source, mic, max_order: int | None = None, length: int | None = None) -> np.ndarray:
    delays, amps, _ = image_sources(room, source, mic, max_order)
    return render_rir(delays, amps, length)


def place_array(
    kind: str,
    room: RoomSpec,
    rng_seed: int,
    n_mics: int = 8,
    radius: float = 0.05,
    spacing: float = 0.04,
) -> ArrayGeometry:
    """Randomly place an array of ``kind`` in ``room`` (horizontal plane,
    random orientation, height uniform in [1.0, 1.5] m)."""
    if kind not in ARRAY_KINDS:
        raise ValueError(f"unknown array kind {kind!r}; expected one of {ARRAY_KINDS}")
    if n_mics < 2:
        raise ValueError("an array needs at least two microphones")
    rng = np.random.default_rng(rng_seed)

    if kind == "circular":
        ang = 2 * np.pi * np.arange(n_mics) / n_mics
        local = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    else:
        if kind == "linear_uniform":
            gaps = np.full(n_mics - 1, spacing)
        else:
            gaps = spacing * np.resize(np.array(_NONUNIFORM_GAPS), n_mics - 1)
        x = np.concatenate([[0.0], np.cumsum(gaps)])
        local = np.stack([x - x.mean(), np.zeros(n_mics)], axis=1)

    extent = np.linalg.norm(local, axis=1).max()
    margin = extent + 0.1
    dims = np.asarray(room.dims)
    if np.any(dims[:2] <= 2 * margin) or dims[2] <= HEIGHT_RANGE[0]:
        raise ValueError(f"array footprint ({2 * extent:.3f} m) does not fit in room {room.dims}")

    theta = rng.uniform(0, 2 * np.pi)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    height = float(rng.uniform(*HEIGHT_RANGE))
    height = min(height, dims[2] - 0.1)
    center_xy = rng.uniform(margin, dims[:2] - margin)
    xy = local @ rot.T + center_xy
    pos = np.concatenate([xy, np.full((n_mics, 1), height)], axis=1)
    return ArrayGeometry(kind, pos, np.array([*center_xy, height]), height)


def fit_length(x: np.ndarray, length: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Loop or trim ``x`` to ``length``; with ``rng`` a random start is used when trimming."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < length:
        x = np.tile(x, int(math.ceil(length / x.shape[0])))
    start = 0
    if rng is not None and x.shape[0] > length:
        start = int(rng.integers(0, x.shape[0] - length + 1))
    return x[start : start + length]


def _energy(x: np.ndarray) -> float:
    return float(np.sum(np.square(x)))


def simulate_mixture(
    clean: np.ndarray,
    noise: np.ndarray,
    room: RoomSpec,
    array: ArrayGeometry,
    source_pos,
    noise_pos,
    snr_db: float,
    rng_seed: int = 0,
    length: int = 4 * SAMPLE_RATE,
    reference_channel: int = 0,
    peak: float | None = 0.9,
):
    """Simulate one multichannel recording.

    Returns ``(mixture, target)``: ``mixture`` is (n_mics, length) and
    ``target`` is the direct-path clean image at the reference mic. When
    ``peak`` is set and the mixture would exceed it, mixture and target are
    scaled down together, which leaves every ratio untouched.
    """
    if math.isnan(snr_db) or snr_db == -math.inf:
        raise ValueError(f"snr_db must be finite or +inf, got {snr_db}")
    rng = np.random.default_rng(rng_seed)
    clean = fit_length(clean, length)
    noise = fit_length(noise, length, rng)
    if _energy(clean) == 0.0:
        raise ValueError("clean signal is silent; SNR is undefined")
    if _energy(noise) == 0.0 and snr_db != math.inf:
        raise ValueError("noise signal is silent; SNR is undefined")

    speech_img = np.empty((array.n_mics, length))
    noise_img = np.empty((array.n_mics, length))
    for m, mic in enumerate(array.mic_positions):
        speech_img[m] = fftconvolve(clean, image_method_rir(room, source_pos, mic))[:length]
        if snr_db != math.inf:
            noise_img[m] = fftconvolve(noise, image_method_rir(room, noise_pos, mic))[:length]

    if snr_db == math.inf:
        gain = 0.0
        noise_img[:] = 0.0
    else:
        e_s = _energy(speech_img[reference_channel])
        e_n = _energy(noise_img[reference_channel])
        gain = math.sqrt(e_s / (e_n * 10.0 ** (snr_db / 10.0)))
    mixture = speech_img + gain * noise_img

    ref_mic = array.mic_positions[reference_channel]
    direct = image_method_rir(room, source_pos, ref_mic, max_order=0)
    target = fftconvolve(clean, direct)[:length]

    if peak is not None:
        top = np.abs(mixture).max()
        if top > peak:
            mixture *= peak / top
            target *= peak / top
    return mixture, target


# -- synthetic sources ---------------------------------------------------------

def synthetic_speech(
    length: int,
    rng_seed: int,
    sample_rate: int = SAMPLE_RATE,
    rms: float = 0.08,
    floor_db: float = -45.0,
) -> np.ndarray:
    """Speech-like test signal: voiced harmonic syllables with formants and
    breath noise, short fricative bursts, pauses, and a white recording floor
    ``floor_db`` below the speech RMS so the signal is never digitally silent."""
    rng = np.random.default_rng(rng_seed)
    out = np.zeros(length)
    t0 = int(rng.integers(0, int(0.1 * sample_rate)))
    base_f0 = rng.uniform(90, 240)
    while t0 < length:
        dur = int(rng.uniform(0.12, 0.35) * sample_rate)
        n = np.arange(dur)
        if rng.random() < 0.8:
            f0 = base_f0 * (1 + 0.15 * np.sin(2 * np.pi * rng.uniform(1, 4) * n / sample_rate + rng.uniform(0, 6)))
            phase = 2 * np.pi * np.cumsum(f0) / sample_rate
            formants = np.sort(rng.uniform([300, 900, 2000, 3300], [900, 2200, 3200, 4500]))
            seg = np.zeros(dur)
            for h in range(1, int(7600 / base_f0)):
                fh = h * base_f0
                gain = sum(np.exp(-0.5 * ((fh - f) / 150.0) ** 2) for f in formants) + 0.05
                seg += gain * np.sin(h * phase) / h**0.7
            breath = lfilter([1.0, -0.9], [1.0], rng.standard_normal(dur))
            seg += 0.05 * np.std(seg) * breath / np.std(breath)
        else:
            seg = lfilter([1.0, -0.95], [1.0], rng.standard_normal(dur)) * 0.3
        env = np.sin(np.pi * n / dur) ** 2
        stop = min(length, t0 + dur)
        out[t0:stop] += (seg * env)[: stop - t0]
        t0 = stop + int(rng.uniform(0.03, 0.15) * sample_rate)
    out /= np.sqrt(np.mean(out**2)) + 1e-12
    out += 10.0 ** (floor_db / 20.0) * rng.standard_normal(length)
    return rms * out / np.sqrt(np.mean(out**2))


def synthetic_noise(length: int, rng_seed: int, rms: float = 0.08) -> np.ndarray:
    """Stationary coloured noise with a random 1/f^alpha slope and a random resonance."""
    rng = np.random.default_rng(rng_seed)
    spec = np.fft.rfft(rng.standard_normal(length))
    f = np.fft.rfftfreq(length, 1.0 / SAMPLE_RATE)
    alpha = rng.uniform(0.0, 1.5)
    shape = 1.0 / np.maximum(f, 50.0) ** (alpha / 2)
    fc = rng.uniform(200, 4000)
    shape *= 1.0 + 2.0 * np.exp(-0.5 * ((f - fc) / (0.3 * fc)) ** 2)
    x = np.fft.irfft(spec * shape, n=length)
    x /= np.sqrt(np.mean(x**2))
    return rms * x


@dataclass
class Scene:
    room: RoomSpec
    array: ArrayGeometry
    source_pos: np.ndarray
    noise_pos: np.ndarray

    def to_dict(self) -> dict:
        return {
            "room": {
                "dims": list(self.room.dims),
                "absorption": self.room.absorption,
                "max_image_order": self.room.max_image_order,
                "speed_of_sound": self.room.speed_of_sound,
            },
            "array": self.array.to_dict(),
            "source_pos": self.source_pos.tolist(),
            "noise_pos": self.noise_pos.tolist(),
        }


def random_room(rng: np.random.Generator, absorption=(0.4, 0.8), max_image_order: int = 2) -> RoomSpec:
    dims = rng.uniform(*ROOM_RANGE, size=3)
    return RoomSpec(tuple(dims), float(rng.uniform(*absorption)), max_image_order)


def _random_point(rng, room: RoomSpec, center, dist_range, height_range=(1.0, 1.8)):
    dims = np.asarray(room.dims)
    for _ in range(1000):
        d = rng.uniform(*dist_range)
        theta = rng.uniform(0, 2 * np.pi)
        p = np.array([center[0] + d * np.cos(theta), center[1] + d * np.sin(theta), rng.uniform(*height_range)])
        if np.all(p > 0.3) and np.all(p < dims - 0.3):
            return p
    raise RuntimeError(f"could not place a point {dist_range} m from {center} in room {room.dims}")


def random_scene(
    rng_seed: int,
    kind: str = "circular",
    room: RoomSpec | None = None,
    n_mics: int = 8,
    source_dist=(0.5, 2.0),
    noise_dist=(1.0, 3.0),
) -> Scene:
    rng = np.random.default_rng(rng_seed)
    room = room or random_room(rng)
    array = place_array(kind, room, int(rng.integers(2**31)), n_mics=n_mics)
    src = _random_point(rng, room, array.center, source_dist)
    noi = _random_point(rng, room, array.center, noise_dist)
    return Scene(room, array, src, noi)


@dataclass
class SimulatedExample:
    mixture: np.ndarray
    target: np.ndarray
    meta: dict = field(default_factory=dict)


def simulate_example(scene: Scene, snr_db: float, rng_seed: int, length: int) -> SimulatedExample:
    """Draw synthetic speech + noise and render them in ``scene``."""
    rng = np.random.default_rng(rng_seed)
    speech_seed, noise_seed, mix_seed = (int(s) for s in rng.integers(2**31, size=3))
    clean = synthetic_speech(length, speech_seed)
    noise = synthetic_noise(length, noise_seed)
    mixture, target = simulate_mixture(
        clean, noise, scene.room, scene.array, scene.source_pos, scene.noise_pos, snr_db, mix_seed, length
    )
    meta = {"seed": rng_seed, "snr_db": snr_db, "length": length, "sample_rate": SAMPLE_RATE, **scene.to_dict()}
    return SimulatedExample(mixture.astype(np.float32), target.astype(np.float32), meta)


def generate_dataset(
    count: int,
    rng_seed: int,
    n_mics: int = 8,
    seconds: float = 4.0,
    snr_range=(0.0, 15.0),
    kinds=ARRAY_KINDS,
) -> list[SimulatedExample]:
    """Independent random scenes, one per example, with uniform SNRs."""
    rng = np.random.default_rng(rng_seed)
    length = int(round(seconds * SAMPLE_RATE))
    out = []
    for i in range(count):
        scene_seed, ex_seed = (int(s) for s in rng.integers(2**31, size=2))
        kind = kinds[i % len(kinds)]
        scene = random_scene(scene_seed, kind, n_mics=n_mics)
        snr = float(rng.uniform(*snr_range))
        out.append(simulate_example(scene, snr, ex_seed, length))
    return out


def generate_grid(
    rng_seed: int,
    n_rooms: int = 2,
    kinds=("circular", "linear_uniform"),
    snrs=(0.0, 3.75, 7.5, 11.25, 15.0),
    n_mics: int = 8,
    seconds: float = 4.0,
) -> list[SimulatedExample]:
    """Full factorial rooms x geometries x SNRs test set."""
    rng = np.random.default_rng(rng_seed)
    length = int(round(seconds * SAMPLE_RATE))
    out = []
    for _ in range(n_rooms):
        room = random_room(rng)
        for kind in kinds:
            scene = random_scene(int(rng.integers(2**31)), kind, room=room, n_mics=n_mics)
            for snr in snrs:
                out.append(simulate_example(scene, float(snr), int(rng.integers(2**31)), length))
    return out
