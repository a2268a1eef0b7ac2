import csv

import numpy as np
import pytest

from tfdnet.signal import StftConfig, TFMatrix, istft, magnitude, spectrogram_export, stft
from tfdnet.tensor import ComplexTensor, Tensor, grad_check, mul, sum_, tanh

CONFIGS = [(8, 4), (16, 8), (32, 16)]


def _dft_frame(frame):
    """Direct O(S^2) DFT of one frame, bins 0..S/2."""
    S = len(frame)
    s = np.arange(S)
    return np.array([np.sum(frame * np.exp(-2j * np.pi * w * s / S)) for w in range(S // 2 + 1)])


def _padded(x, S):
    pad = S // 2
    return np.concatenate([np.full(pad, x[0]), x, np.full(pad, x[-1])])


class TestConfig:
    @pytest.mark.parametrize("S, l", [(7, 2), (0, 1), (8, 0), (8, 9)])
    def test_invalid(self, S, l):
        with pytest.raises(ValueError):
            StftConfig(S, l)

    def test_counts(self):
        cfg = StftConfig(16, 8)
        assert cfg.n_bins == 9
        assert cfg.n_frames(96) == 13
        assert cfg.n_frames(100) == 13


class TestStft:
    def test_shape(self):
        tf = stft(Tensor(np.zeros((7, 96))), StftConfig(16, 8))
        assert tf.shape == (7, 9, 13)

    def test_constant_maps_to_dc(self):
        tf = stft(Tensor(np.ones((1, 16))), StftConfig(8, 4))
        z = tf.values.numpy()[0]
        np.testing.assert_allclose(z[0], 8.0, rtol=0, atol=1e-12)
        assert np.max(np.abs(z[1:])) < 1e-12

    def test_tone_lands_in_its_bin(self):
        x = np.tile(np.cos(2 * np.pi * 2 * np.arange(8) / 8), 2)
        z = stft(Tensor(x[None]), StftConfig(8, 8)).values.numpy()[0]
        interior = z[:, 1]
        assert abs(interior[2] - 4.0) < 1e-10
        assert np.max(np.abs(np.delete(interior, 2))) < 1e-10

    @pytest.mark.parametrize("S, l", CONFIGS + [(8, 3), (16, 5)])
    def test_matches_direct_dft(self, rng, S, l):
        x = rng.standard_normal(48)
        z = stft(Tensor(x[None]), StftConfig(S, l)).values.numpy()[0]
        xp = _padded(x, S)
        for n in range(z.shape[1]):
            np.testing.assert_allclose(z[:, n], _dft_frame(xp[n * l:n * l + S]), rtol=0, atol=1e-11)

    def test_linearity(self, rng):
        cfg = StftConfig(16, 8)
        x, y = rng.standard_normal((2, 3, 64))
        a = 1.7
        lhs = stft(Tensor(a * x + y), cfg).values.numpy()
        rhs = a * stft(Tensor(x), cfg).values.numpy() + stft(Tensor(y), cfg).values.numpy()
        assert np.max(np.abs(lhs - rhs)) < 1e-12

    @pytest.mark.parametrize("S", [8, 16, 32])
    def test_parseval_on_disjoint_frames(self, rng, S):
        x = rng.standard_normal(4 * S)
        z = stft(Tensor(x[None]), StftConfig(S, S)).values.numpy()[0]
        xp = _padded(x, S)
        for n in range(z.shape[1]):
            half = z[:, n]
            full = np.concatenate([half, np.conj(half[1:-1][::-1])])
            energy = np.sum(xp[n * S:(n + 1) * S] ** 2)
            assert abs(energy - np.sum(np.abs(full) ** 2) / S) < 1e-9

    def test_too_short(self):
        with pytest.raises(ValueError):
            stft(Tensor(np.zeros(6)), StftConfig(8, 4))


class TestIstft:
    @pytest.mark.parametrize("S, l", CONFIGS)
    @pytest.mark.parametrize("seed", range(50))
    def test_round_trip(self, S, l, seed):
        x = np.random.default_rng(seed).standard_normal((3, 96))
        y = istft(stft(Tensor(x), StftConfig(S, l))).data
        assert np.max(np.abs(y - x)) < 1e-10

    def test_round_trip_when_stride_does_not_divide(self, rng):
        x = rng.standard_normal((2, 50))
        for S, l in [(8, 3), (16, 7), (10, 10)]:
            y = istft(stft(Tensor(x), StftConfig(S, l))).data
            assert np.max(np.abs(y - x)) < 1e-10

    def test_zero_in_zero_out(self):
        cfg = StftConfig(8, 4)
        z = ComplexTensor.from_numpy(np.zeros((2, 5, 5)))
        np.testing.assert_array_equal(istft(TFMatrix(z, cfg, 16)).data, 0.0)

    def test_dc_perturbation(self):
        cfg = StftConfig(8, 8)
        tf = stft(Tensor(np.zeros((1, 16))), cfg)
        z = tf.values.numpy()
        z[0, 0, 1] += 8.0
        y = istft(TFMatrix(ComplexTensor.from_numpy(z), cfg, 16)).data[0]
        # frame 1 starts at padded index 8, i.e. series sample 8 - S/2 = 4
        expected = np.zeros(16)
        expected[4:12] = 1.0
        np.testing.assert_allclose(y, expected, rtol=0, atol=1e-12)

    def test_shape_mismatch(self):
        z = ComplexTensor.from_numpy(np.zeros((1, 4, 5)))
        with pytest.raises(ValueError):
            istft(TFMatrix(z, StftConfig(8, 4), 16))


class TestGradients:
    @pytest.mark.parametrize("S, l", [(8, 4), (8, 3), (16, 8)])
    def test_through_stft_and_istft(self, rng, S, l):
        x = Tensor(rng.standard_normal((2, 24)), True)
        wt = Tensor(rng.standard_normal((2, 24)))
        cfg = StftConfig(S, l)

        def f():
            tf = stft(x, cfg)
            bent = ComplexTensor(tanh(tf.values.re), tf.values.im)
            return sum_(mul(istft(TFMatrix(bent, cfg, 24)), wt))

        assert grad_check(f, [x]) < 1e-4


class TestSpectrogramExport:
    def _read(self, path):
        with open(path) as fh:
            rows = list(csv.reader(fh))
        return rows[0], np.array([[float(v) for v in r[1:]] for r in rows[1:]])

    def test_constant_series(self, tmp_path):
        files = spectrogram_export(np.full((1, 32), 3.0), StftConfig(8, 4), tmp_path / "c")
        header, mat = self._read(files[0])
        assert header[0] == "freq_bin" and header[-1] == f"frame_{mat.shape[1] - 1}"
        assert np.all(mat[0] > 0)
        assert np.max(mat[1:]) < 1e-12

    def test_tone_row(self, tmp_path):
        x = np.cos(2 * np.pi * 2 * np.arange(64) / 8)[None]
        _, mat = self._read(spectrogram_export(x, StftConfig(8, 4), tmp_path / "t")[0])
        assert np.all(np.argmax(mat[:, 1:-1], axis=0) == 2)

    def test_one_file_per_channel(self, tmp_path, rng):
        files = spectrogram_export(rng.standard_normal((3, 40)), StftConfig(16, 8), tmp_path / "s")
        assert [f.rsplit("_", 1)[1] for f in files] == ["ch0.csv", "ch1.csv", "ch2.csv"]
        assert self._read(files[0])[1].shape == (9, 6)

    def test_empty_path(self):
        with pytest.raises(OSError, match="''"):
            spectrogram_export(np.ones((1, 16)), StftConfig(8, 4), "")

    def test_unwritable_path_named(self, tmp_path):
        bad = tmp_path / "missing_dir" / "spec"
        with pytest.raises(OSError, match="missing_dir"):
            spectrogram_export(np.ones((1, 16)), StftConfig(8, 4), bad)

    def test_magnitude_matches_modulus(self, rng):
        x = rng.standard_normal((2, 32))
        cfg = StftConfig(8, 4)
        np.testing.assert_allclose(magnitude(x, cfg), np.abs(stft(Tensor(x), cfg).values.numpy()),
                                   rtol=1e-15, atol=0)
