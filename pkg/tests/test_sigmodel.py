"""Scene generator: covariance structure, moments, targets, CIQ1 files."""

import numpy as np
import pytest

from radood import clx
from radood.sigmodel import (
    IqHeaderError,
    IqLengthMismatchError,
    IqTruncationError,
    SampleBatch,
    Scenario,
    clutter_covariance,
    inject_target,
    load_iq,
    load_iq_batch,
    noise_power,
    sample_clutter,
    sample_secondary,
    steering_vector,
    target_amplitude,
    write_iq,
)


def scene(**kw):
    base = dict(m=16, rho=0.5, clutter_kind="cGN", cnr_db=15.0,
                snr_db=10.0, doppler_bin=4, seed=7)
    base.update(kw)
    return Scenario(**base)


class TestScenario:
    def test_validation(self):
        with pytest.raises(ValueError):
            scene(rho=1.0)
        with pytest.raises(ValueError):
            scene(m=1)
        with pytest.raises(ValueError):
            scene(doppler_bin=16)
        with pytest.raises(ValueError):
            scene(clutter_kind="GN")
        with pytest.raises(ValueError):
            scene(clutter_kind="cCGN", texture_shape=0.0)

    def test_dict_roundtrip(self):
        sc = scene(clutter_kind="cCGN", texture_shape=0.5)
        assert Scenario.from_dict(sc.to_dict()) == sc


class TestSteering:
    def test_zero_bin_is_all_ones(self):
        np.testing.assert_array_equal(steering_vector(8, 0), np.ones(8))

    def test_quarter_bin_walks_powers_of_i(self):
        p = steering_vector(16, 4)
        np.testing.assert_allclose(p, 1j ** np.arange(16), atol=1e-12)

    def test_unit_modulus_and_orthogonality(self):
        m = 16
        p4, p9 = steering_vector(m, 4), steering_vector(m, 9)
        np.testing.assert_allclose(np.abs(p4), 1.0, atol=1e-12)
        assert abs(p4.conj() @ p9) < 1e-10  # DFT columns are orthogonal

    def test_bin_bounds(self):
        with pytest.raises(ValueError):
            steering_vector(8, 8)
        with pytest.raises(ValueError):
            steering_vector(8, -1)


class TestAmplitudeAndNoise:
    def test_amplitude_magnitude(self):
        a = target_amplitude(20.0, 16, phase=0.25)
        assert abs(a) == pytest.approx(np.sqrt(100.0 / 16.0), rel=1e-12)
        assert np.angle(a) == pytest.approx(np.pi / 2, rel=1e-12)

    def test_amplitude_needs_phase_or_gen(self):
        with pytest.raises(ValueError):
            target_amplitude(0.0, 16)

    def test_noise_power(self):
        assert noise_power(scene(cnr_db=15.0)) == pytest.approx(10 ** -1.5)
        assert noise_power(scene(cnr_db=np.inf)) == 0.0


class TestClutterMoments:
    def test_covariance_matches_toeplitz_plus_noise(self):
        """Sample covariance of cGN draws approaches T(rho) + sigma_b^2 I."""
        sc = scene(seed=0)
        x = sample_clutter(sc, 20000).signals
        emp = x.T @ x.conj() / x.shape[0]
        expected = clutter_covariance(sc) + noise_power(sc) * np.eye(16)
        assert np.abs(emp - expected).max() < 0.05

    def test_compound_matches_same_second_moment(self):
        """Unit-mean texture leaves the covariance of cCGN unchanged."""
        sc = scene(clutter_kind="cCGN", texture_shape=0.5, seed=1)
        x = sample_clutter(sc, 20000).signals
        emp = x.T @ x.conj() / x.shape[0]
        expected = clutter_covariance(sc) + noise_power(sc) * np.eye(16)
        assert np.abs(emp - expected).max() < 0.12

    def test_compound_is_heavier_tailed(self):
        """E|x|^4 / (E|x|^2)^2 is 2 for Gaussian, 2(1 + 1/mu) with texture."""
        n = 40000
        xg = sample_clutter(scene(cnr_db=np.inf, seed=2), n).signals
        xc = sample_clutter(scene(clutter_kind="cCGN", texture_shape=1.0,
                                  cnr_db=np.inf, seed=2), n).signals
        ratio = lambda x: float(np.mean(
            np.mean(np.abs(x) ** 4, axis=0) / np.mean(np.abs(x) ** 2, axis=0) ** 2))
        assert ratio(xg) == pytest.approx(2.0, abs=0.1)
        assert ratio(xc) == pytest.approx(4.0, abs=0.35)

    def test_mean_is_zero(self):
        x = sample_clutter(scene(seed=3), 20000).signals
        assert np.abs(x.mean(axis=0)).max() < 0.03


class TestSamplingDeterminism:
    def test_reproducible_and_prefix_stable(self):
        sc = scene()
        a = sample_clutter(sc, 10).signals
        b = sample_clutter(sc, 10).signals
        c = sample_clutter(sc, 4).signals
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(a[:4], c)

    def test_streams_and_seeds_separate(self):
        sc = scene()
        a = sample_clutter(sc, 4).signals
        assert not np.array_equal(a, sample_clutter(sc, 4, stream="x").signals)
        assert not np.array_equal(a, sample_clutter(sc, 4, seed=99).signals)

    def test_secondary_differs_from_primary(self):
        sc = scene()
        assert not np.array_equal(sample_clutter(sc, 4).signals,
                                  sample_secondary(sc, 4))

    def test_rejects_nonpositive_n(self):
        with pytest.raises(ValueError):
            sample_clutter(scene(), 0)


class TestInjectTarget:
    def test_adds_scaled_steering(self):
        sc = scene(snr_db=20.0)
        h0 = sample_clutter(sc, 6)
        h1 = inject_target(h0)
        assert h1.label == "H1"
        diff = h1.signals - h0.signals
        p = steering_vector(sc.m, sc.doppler_bin)
        # each row of the difference is alpha_i * p
        alphas = diff[:, 0] / p[0]
        np.testing.assert_allclose(diff, alphas[:, None] * p[None, :],
                                   rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(np.abs(alphas), np.sqrt(100.0 / 16.0),
                                   rtol=1e-10)

    def test_minus_inf_snr_is_h0_in_disguise(self):
        sc = scene(snr_db=-np.inf)
        h0 = sample_clutter(sc, 5)
        h1 = inject_target(h0)
        assert h1.label == "H1"
        np.testing.assert_array_equal(h1.signals, h0.signals)

    def test_rejects_h1_input(self):
        h1 = inject_target(sample_clutter(scene(), 3))
        with pytest.raises(ValueError):
            inject_target(h1)

    def test_phases_reproducible(self):
        sc = scene()
        h0 = sample_clutter(sc, 4)
        np.testing.assert_array_equal(inject_target(h0).signals,
                                      inject_target(h0).signals)


class TestIqFiles:
    def test_roundtrip_is_float32_exact(self, tmp_path, gen):
        x = gen.standard_normal((9, 16)) + 1j * gen.standard_normal((9, 16))
        path = tmp_path / "a.ciq"
        write_iq(path, x)
        back = load_iq(path)
        np.testing.assert_array_equal(back, x.astype(np.complex64).astype(np.complex128))

    def test_expect_m(self, tmp_path):
        path = tmp_path / "a.ciq"
        write_iq(path, np.zeros((2, 8), complex))
        load_iq(path, expect_m=8)
        with pytest.raises(IqLengthMismatchError):
            load_iq(path, expect_m=16)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ciq"
        path.write_bytes(b"NOPE" + bytes(12))
        with pytest.raises(IqHeaderError):
            load_iq(path)

    def test_truncation(self, tmp_path):
        path = tmp_path / "t.ciq"
        write_iq(path, np.ones((4, 8), complex))
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(IqTruncationError):
            load_iq(path)

    def test_short_header(self, tmp_path):
        path = tmp_path / "s.ciq"
        path.write_bytes(b"CIQ")
        with pytest.raises(IqHeaderError):
            load_iq(path)

    def test_load_batch(self, tmp_path):
        sc = scene()
        path = tmp_path / "b.ciq"
        write_iq(path, sample_clutter(sc, 5).signals)
        batch = load_iq_batch(path, scenario=sc)
        assert isinstance(batch, SampleBatch)
        assert batch.label == "H0" and len(batch) == 5
        default = load_iq_batch(path)
        assert default.scenario.m == 16


class TestBatchType:
    def test_shape_and_label_validation(self):
        sc = scene()
        with pytest.raises(ValueError):
            SampleBatch(signals=np.zeros((3, 8), complex), label="H0", scenario=sc)
        with pytest.raises(ValueError):
            SampleBatch(signals=np.zeros((3, 16), complex), label="h0", scenario=sc)

    def test_signals_are_readonly(self):
        batch = sample_clutter(scene(), 2)
        with pytest.raises(ValueError):
            batch.signals[0, 0] = 0
