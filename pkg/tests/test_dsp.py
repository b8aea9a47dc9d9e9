import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from afasnet import dsp


def direct_dft(frame, nfft):
    """O(n^2) DFT of a zero-padded frame, independent of np.fft."""
    x = np.zeros(nfft)
    x[: len(frame)] = frame
    n = np.arange(nfft)
    k = np.arange(nfft // 2 + 1)[:, None]
    return (x * np.exp(-2j * np.pi * k * n / nfft)).sum(axis=1)


class TestSTFT:
    def test_frame_count(self):
        spec = dsp.stft(np.random.default_rng(0).standard_normal(64000), 320, 160, 512)
        assert spec.shape == (399, 257)

    def test_zero_input(self):
        spec = dsp.stft(np.zeros(4000))
        assert np.all(spec.frames == 0)

    def test_sine_peak_bin(self):
        t = np.arange(16000) / dsp.SAMPLE_RATE
        x = np.sin(2 * np.pi * 1000 * t)
        spec = dsp.stft(x)
        assert np.all(np.argmax(np.abs(spec.frames), axis=1) == 32)
        # third frame against the direct DFT oracle
        frame = x[2 * 160 : 2 * 160 + 320] * dsp.hann(320)
        np.testing.assert_allclose(spec.frames[2], direct_dft(frame, 512), atol=1e-9)
        assert np.argmax(np.abs(direct_dft(frame, 512))) == 32

    def test_periodic_hann_cola(self):
        w = dsp.hann(320)
        assert w[0] == 0.0
        np.testing.assert_allclose(w[:160] + w[160:], 1.0, atol=1e-12)

    def test_short_wave_rejected(self):
        with pytest.raises(ValueError, match="shorter than window_size"):
            dsp.stft(np.zeros(100))

    def test_bad_params_rejected(self):
        with pytest.raises(ValueError):
            dsp.stft(np.zeros(1000), window_size=600, nfft=512)
        with pytest.raises(ValueError):
            dsp.stft(np.zeros(1000), window_size=320, hop=400)

    def test_padding_changes_frame_count(self):
        spec = dsp.stft(np.zeros(64000), pad=160)
        assert spec.shape[0] == 1 + (64000 + 320 - 320) // 160
        assert spec.length == 64320


class TestISTFT:
    def test_round_trip_interior(self):
        x = np.random.default_rng(1).standard_normal(8000)
        y = dsp.istft(dsp.stft(x))
        interior = slice(320, 8000 - 320)
        assert np.max(np.abs(y[interior] - x[interior])) / np.max(np.abs(x)) <= 1e-6
        assert len(y) == len(x)

    def test_zero_spectrogram(self):
        spec = dsp.Spectrogram(np.zeros((20, 257), dtype=complex), length=3360)
        assert np.all(dsp.istft(spec) == 0)

    def test_phase_substitution_identity(self):
        x = np.random.default_rng(2).standard_normal(4000)
        spec = dsp.stft(x)
        rebuilt = spec.with_frames(np.abs(spec.frames) * np.exp(1j * np.angle(spec.frames)))
        np.testing.assert_allclose(dsp.istft(rebuilt), dsp.istft(spec), atol=1e-12)

    def test_inconsistent_metadata(self):
        spec = dsp.stft(np.zeros(4000))
        with pytest.raises(ValueError):
            dsp.istft(dsp.Spectrogram(spec.frames, 320, 160, 1024))
        with pytest.raises(ValueError):
            dsp.istft(dsp.Spectrogram(spec.frames, 320, 400, 512))

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), length=st.integers(960, 6000))
    def test_round_trip_property(self, seed, length):
        x = np.random.default_rng(seed).uniform(-1, 1, length)
        y = dsp.istft(dsp.stft(x))
        covered = 320 + (length - 320) // 160 * 160
        interior = slice(320, covered - 320)
        assert np.max(np.abs(y[interior] - x[interior])) <= 1e-6 * np.max(np.abs(x))


def test_parseval_single_frame():
    frame = np.random.default_rng(3).standard_normal(320)
    full = np.fft.fft(frame, 512)
    assert np.sum(np.abs(full) ** 2) == pytest.approx(512 * np.sum(frame**2), rel=1e-6)


class TestFraming:
    def test_encoder_frame_count(self):
        assert dsp.frame_signal(np.zeros(64000), 256, 128, pad=192).frames.shape == (502, 256)

    def test_single_frame(self):
        assert dsp.frame_signal(np.zeros(256), 256, 128).frames.shape[0] == 1

    def test_offsets(self):
        x = np.arange(512.0)
        fs = dsp.frame_signal(x, 256, 128)
        assert fs.frames.shape[0] == 3
        assert [f[0] for f in fs.frames] == [0.0, 128.0, 256.0]

    def test_no_frames_rejected(self):
        with pytest.raises(ValueError):
            dsp.frame_signal(np.zeros(100), 256, 128)
        with pytest.raises(ValueError):
            dsp.frame_signal(np.zeros(100), 0, 128)

    def test_overlap_add_partition(self):
        x = np.random.default_rng(4).standard_normal(1024)
        np.testing.assert_array_equal(dsp.overlap_add(dsp.frame_signal(x, 128, 128)), x)

    def test_overlap_add_single(self):
        f = np.array([[1.0, 2.0, 3.0]])
        np.testing.assert_array_equal(dsp.overlap_add(dsp.FrameStack(f, 2)), f[0])

    def test_overlap_add_ones(self):
        out = dsp.overlap_add(dsp.FrameStack(np.ones((2, 4)), 2))
        np.testing.assert_array_equal(out, [1, 1, 2, 2, 1, 1])

    def test_overlap_add_empty(self):
        with pytest.raises(ValueError):
            dsp.overlap_add(dsp.FrameStack(np.zeros((0, 4)), 2))

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), a=st.floats(-5, 5), b=st.floats(-5, 5))
    def test_linearity(self, seed, a, b):
        rng = np.random.default_rng(seed)
        x, y = rng.standard_normal((2, 700))
        lhs = dsp.frame_signal(a * x + b * y, 64, 32, pad=16).frames
        rhs = a * dsp.frame_signal(x, 64, 32, pad=16).frames + b * dsp.frame_signal(y, 64, 32, pad=16).frames
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)
        ola = dsp.overlap_add(dsp.FrameStack(lhs, 32))
        np.testing.assert_allclose(
            ola,
            a * dsp.overlap_add(dsp.FrameStack(dsp.frame_signal(x, 64, 32, pad=16).frames, 32))
            + b * dsp.overlap_add(dsp.FrameStack(dsp.frame_signal(y, 64, 32, pad=16).frames, 32)),
            atol=1e-9,
        )


class TestNCC:
    def test_self(self):
        x = np.random.default_rng(5).standard_normal(64)
        assert dsp.ncc(x, x) == pytest.approx(1.0)

    def test_antipodal(self):
        x = np.random.default_rng(6).standard_normal(64)
        assert dsp.ncc(x, -x) == pytest.approx(-1.0)

    def test_orthogonal(self):
        assert dsp.ncc([1, 0, 0, 0], [0, 1, 0, 0]) == 0.0

    def test_zero_norm(self):
        assert dsp.ncc(np.zeros(8), np.ones(8)) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            dsp.ncc(np.ones(3), np.ones(4))

    @settings(max_examples=200, deadline=None)
    @given(
        arrays(np.float64, 16, elements=st.floats(-1e3, 1e3)),
        arrays(np.float64, 16, elements=st.floats(-1e3, 1e3)),
        st.sampled_from([1.0, 1e-150, 1e-300]),
    )
    def test_bounded(self, a, b, scale):
        v = dsp.ncc(a * scale, b)
        assert np.isfinite(v) and -1.0 <= v <= 1.0


class TestLogMagnitude:
    def test_e_everywhere(self):
        np.testing.assert_allclose(dsp.log_magnitude(np.full((3, 4), np.e + 0j)), 1.0)

    def test_floor(self):
        np.testing.assert_allclose(dsp.log_magnitude(np.zeros((2, 2)), 1e-8), np.log(1e-8))

    def test_value(self):
        assert dsp.log_magnitude(np.array([[2.0 + 0j]]))[0, 0] == pytest.approx(0.6931, abs=1e-4)

    def test_floor_positive(self):
        with pytest.raises(ValueError):
            dsp.log_magnitude(np.ones((1, 1)), 0.0)
