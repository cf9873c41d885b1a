"""Covariance estimators and the adaptive coherence detector."""

import numpy as np
import pytest

from radood import rng
from radood.classical import (
    AnmfFpDetector,
    CovEstimate,
    SecondaryData,
    TylerConvergenceError,
    _tyler_batch,
    anmf,
    anmf_fp_detector,
    draw_secondary,
    scm,
    secondary_sets,
    tyler,
)
from radood.sigmodel import (
    SampleBatch,
    Scenario,
    clutter_covariance,
    noise_power,
    steering_vector,
)


def scene(**kw):
    base = dict(m=16, rho=0.5, clutter_kind="cGN", cnr_db=15.0, snr_db=10.0,
                doppler_bin=3, seed=7)
    base.update(kw)
    return Scenario(**base)


def unit_complex_rows(gen, n, m):
    return (gen.standard_normal((n, m)) + 1j * gen.standard_normal((n, m))) \
        / np.sqrt(2.0)


class TestSecondaryData:
    def test_validation(self):
        with pytest.raises(ValueError, match=r"\(K, m\)"):
            SecondaryData(np.zeros(4, complex))
        with pytest.raises(ValueError, match="K >= m"):
            SecondaryData(np.zeros((3, 4), complex))

    def test_readonly_and_shape(self, gen):
        data = SecondaryData(unit_complex_rows(gen, 8, 4))
        assert (data.k, data.m) == (8, 4)
        with pytest.raises(ValueError):
            data.samples[0, 0] = 0.0

    def test_draw_secondary_default_size(self):
        data = draw_secondary(scene(), seed=1)
        assert (data.k, data.m) == (32, 16)


class TestScm:
    def test_matches_formula(self, gen):
        xs = unit_complex_rows(gen, 12, 5)
        est = scm(xs)
        np.testing.assert_allclose(est.sigma_hat, xs.T @ xs.conj() / 12,
                                   rtol=1e-12)
        assert est.kind == "scm"

    def test_consistent_for_the_true_covariance(self):
        sc = scene(seed=3)
        want = clutter_covariance(sc) + noise_power(sc) * np.eye(16)
        est = scm(draw_secondary(sc, k=50_000, seed=3))
        err = np.linalg.norm(est.sigma_hat - want) / np.linalg.norm(want)
        assert err < 0.05


class TestTyler:
    def test_converges_and_is_normalized(self):
        est = tyler(draw_secondary(scene(), k=64, seed=2))
        assert est.kind == "tyler"
        assert 0 < est.iterations < 100
        assert est.rel_change <= 1e-8
        np.testing.assert_allclose(est.sigma_hat.trace().real, 16.0,
                                   rtol=1e-12)

    def test_satisfies_fixed_point_equation(self):
        data = draw_secondary(scene(), k=64, seed=2)
        est = tyler(data)
        xs = data.samples
        qf = np.einsum("km,km->k",
                       xs.conj(), np.linalg.solve(est.sigma_hat, xs.T).T).real
        rhs = (16 / 64) * np.einsum("ki,kj->ij", xs / qf[:, None], xs.conj())
        rhs *= 16 / rhs.trace().real
        err = np.linalg.norm(rhs - est.sigma_hat) / np.linalg.norm(rhs)
        assert err < 1e-6

    def test_power_of_two_scaling_is_bit_exact(self):
        data = draw_secondary(scene(), k=48, seed=5)
        a = tyler(data).sigma_hat
        b = tyler(4.0 * data.samples).sigma_hat
        np.testing.assert_array_equal(a, b)

    def test_complex_scaling_invariance(self):
        data = draw_secondary(scene(), k=48, seed=5)
        a = tyler(data).sigma_hat
        b = tyler((0.3 - 1.7j) * data.samples).sigma_hat
        np.testing.assert_allclose(a, b, rtol=1e-10)

    def test_estimates_the_shape_matrix(self):
        sc = scene(seed=11)
        r = clutter_covariance(sc) + noise_power(sc) * np.eye(16)
        shape = r * (16.0 / r.trace().real)
        est = tyler(draw_secondary(sc, k=20_000, seed=11))
        err = np.linalg.norm(est.sigma_hat - shape) / np.linalg.norm(shape)
        assert err < 0.05

    def test_heavy_tailed_data_keeps_the_shape(self):
        # per-row texture scaling must not bias the scatter estimate
        sc = scene(clutter_kind="cCGN", texture_shape=0.5, cnr_db=np.inf,
                   seed=13)
        shape = clutter_covariance(sc)
        shape = shape * (16.0 / shape.trace().real)
        est = tyler(draw_secondary(sc, k=20_000, seed=13))
        err = np.linalg.norm(est.sigma_hat - shape) / np.linalg.norm(shape)
        assert err < 0.05

    def test_needs_enough_samples(self, gen):
        with pytest.raises(ValueError, match="m \\+ 1"):
            tyler(unit_complex_rows(gen, 4, 4))

    def test_rejects_zero_sample(self, gen):
        xs = unit_complex_rows(gen, 10, 4)
        xs[3] = 0.0
        with pytest.raises(ValueError, match="zero-norm"):
            tyler(xs)

    def test_convergence_failure_carries_state(self):
        data = draw_secondary(scene(), k=64, seed=2)
        with pytest.raises(TylerConvergenceError) as err:
            tyler(data, max_iter=1)
        assert err.value.last.shape == (16, 16)
        assert err.value.residual > 1e-8

    def test_batch_matches_single(self):
        sc = scene(seed=4)
        sets = secondary_sets(sc, n=5, k=40, family=rng.family_key(4, "t"))
        batch = _tyler_batch(sets)
        for i in range(5):
            single = tyler(sets[i]).sigma_hat
            np.testing.assert_allclose(batch[i], single, rtol=1e-12)

    def test_batch_convergence_failure(self):
        sc = scene(seed=4)
        sets = secondary_sets(sc, n=3, k=40, family=rng.family_key(4, "t"))
        with pytest.raises(TylerConvergenceError, match="of 3"):
            _tyler_batch(sets, max_iter=1)


class TestCovEstimate:
    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="kind"):
            CovEstimate(sigma_hat=np.eye(3), kind="mystery")

    def test_tyler_trace_enforced(self):
        with pytest.raises(ValueError, match="trace-normalized"):
            CovEstimate(sigma_hat=2.0 * np.eye(3), kind="tyler")

    def test_cholesky_cached(self):
        est = CovEstimate(sigma_hat=np.eye(3), kind="tyler")
        np.testing.assert_allclose(est.cholesky, np.eye(3))
        assert est.m == 3


class TestAnmf:
    def test_steering_vector_scores_one(self, gen):
        sc = scene()
        p = steering_vector(16, 3)
        sigma = clutter_covariance(sc)
        lam = anmf((2.0 - 1.0j) * p, p, sigma)
        np.testing.assert_allclose(lam, 1.0, rtol=1e-12)

    def test_orthogonal_cell_scores_zero(self):
        # distinct bins are orthogonal under an identity covariance
        lam = anmf(steering_vector(16, 8), steering_vector(16, 0), np.eye(16))
        np.testing.assert_allclose(lam, 0.0, atol=1e-12)

    def test_range_and_batch_shape(self, gen):
        sc = scene()
        xs = unit_complex_rows(gen, 200, 16)
        lam = anmf(xs, steering_vector(16, 3), clutter_covariance(sc))
        assert lam.shape == (200,)
        assert np.all(lam >= 0.0) and np.all(lam <= 1.0)

    def test_matches_whitened_cosine(self, gen):
        sc = scene()
        sigma = clutter_covariance(sc)
        low = np.linalg.cholesky(sigma)
        p = steering_vector(16, 5)
        xs = unit_complex_rows(gen, 7, 16)
        wx = np.linalg.solve(low, xs.T)
        wp = np.linalg.solve(low, p)
        want = (np.abs(wp.conj() @ wx) ** 2
                / ((wp.conj() @ wp).real
                   * np.einsum("mn,mn->n", wx.conj(), wx).real))
        np.testing.assert_allclose(anmf(xs, p, sigma), want, rtol=1e-12)

    def test_invariances(self, gen):
        sc = scene()
        sigma = clutter_covariance(sc)
        p = steering_vector(16, 3)
        xs = unit_complex_rows(gen, 20, 16)
        base = anmf(xs, p, sigma)
        np.testing.assert_allclose(anmf((0.7 + 2.1j) * xs, p, sigma), base,
                                   rtol=1e-12)
        np.testing.assert_allclose(anmf(xs, (-1.1 + 0.4j) * p, sigma), base,
                                   rtol=1e-12)
        np.testing.assert_allclose(anmf(xs, p, 3.7 * sigma), base, rtol=1e-12)

    def test_known_covariance_null_mean(self, gen):
        # whitened cells are isotropic, so the statistic is Beta(1, m-1)
        # with mean 1/m regardless of the steering bin
        m = 16
        sc = scene()
        sigma = clutter_covariance(sc)
        low = np.linalg.cholesky(sigma)
        xs = unit_complex_rows(gen, 20_000, m) @ low.T
        lam = anmf(xs, steering_vector(m, 6), sigma)
        np.testing.assert_allclose(lam.mean(), 1.0 / m, rtol=0.03)

    def test_accepts_estimate_and_matrix(self, gen):
        est = scm(unit_complex_rows(gen, 40, 8))
        xs = unit_complex_rows(gen, 5, 8)
        p = steering_vector(8, 2)
        np.testing.assert_array_equal(anmf(xs, p, est),
                                      anmf(xs, p, est.sigma_hat))

    def test_zero_inputs_rejected(self, gen):
        p = steering_vector(8, 1)
        with pytest.raises(ValueError, match="steering"):
            anmf(unit_complex_rows(gen, 2, 8), np.zeros(8), np.eye(8))
        xs = unit_complex_rows(gen, 2, 8)
        xs[1] = 0.0
        with pytest.raises(ValueError, match="test cell"):
            anmf(xs, p, np.eye(8))


class TestSecondarySets:
    def test_deterministic(self):
        sc = scene(seed=9)
        fam = rng.family_key(9, "anmf-secondary", "eval")
        a = secondary_sets(sc, n=4, k=33, family=fam)
        b = secondary_sets(sc, n=4, k=33, family=fam)
        np.testing.assert_array_equal(a, b)

    def test_per_trial_streams_splice(self):
        # trial t depends only on its absolute index, not the batch window
        sc = scene(seed=9)
        fam = rng.family_key(9, "anmf-secondary", "eval")
        whole = secondary_sets(sc, n=6, k=33, family=fam)
        tail = secondary_sets(sc, n=4, k=33, family=fam, start_index=2)
        np.testing.assert_array_equal(whole[2:], tail)

    def test_second_moment(self):
        sc = scene(seed=10)
        fam = rng.family_key(10, "cov")
        sets = secondary_sets(sc, n=40, k=200, family=fam)
        xs = sets.reshape(-1, 16)
        emp = xs.T @ xs.conj() / xs.shape[0]
        want = clutter_covariance(sc) + noise_power(sc) * np.eye(16)
        assert np.linalg.norm(emp - want) / np.linalg.norm(want) < 0.1

    def test_compound_texture_path(self):
        sc = scene(clutter_kind="cCGN", texture_shape=0.5, seed=9)
        fam = rng.family_key(9, "anmf-secondary", "eval")
        sets = secondary_sets(sc, n=3, k=33, family=fam)
        assert sets.shape == (3, 33, 16)
        assert np.all(np.isfinite(sets))


def h0_batch(sc, n, gen):
    low = np.linalg.cholesky(clutter_covariance(sc))
    xs = unit_complex_rows(gen, n, sc.m) @ low.T
    xs = xs + np.sqrt(noise_power(sc)) * unit_complex_rows(gen, n, sc.m)
    return SampleBatch(signals=xs, label="H0", scenario=sc)


class TestAnmfFpDetector:
    def test_detector_ids(self):
        sc = scene()
        assert anmf_fp_detector(sc).detector_id == "anmf-fp"
        assert anmf_fp_detector(sc, estimator="scm").detector_id == "anmf-scm"

    def test_validation(self):
        with pytest.raises(ValueError, match="estimator"):
            AnmfFpDetector(scene(), estimator="mle")
        with pytest.raises(ValueError, match="K >= m"):
            AnmfFpDetector(scene(), k=16)

    def test_scores_deterministic(self, gen):
        sc = scene(seed=21)
        det = anmf_fp_detector(sc)
        batch = h0_batch(sc, 10, gen)
        np.testing.assert_array_equal(det.scores(batch), det.scores(batch))

    def test_chunk_invariance(self, gen):
        sc = scene(seed=21)
        batch = h0_batch(sc, 10, gen)
        a = anmf_fp_detector(sc, chunk=3).scores(batch)
        b = anmf_fp_detector(sc, chunk=1000).scores(batch)
        np.testing.assert_array_equal(a, b)

    def test_start_index_splice(self, gen):
        sc = scene(seed=21)
        det = anmf_fp_detector(sc)
        xs = h0_batch(sc, 8, gen).signals
        whole = det.scores(SampleBatch(signals=xs, label="H0", scenario=sc))
        part = det.scores(SampleBatch(signals=xs[3:], label="H0", scenario=sc),
                          start_index=3)
        np.testing.assert_array_equal(whole[3:], part)

    def test_stream_separation(self, gen):
        sc = scene(seed=21)
        det = anmf_fp_detector(sc)
        batch = h0_batch(sc, 6, gen)
        assert not np.array_equal(det.scores(batch, stream="eval"),
                                  det.scores(batch, stream="cal"))

    def test_matches_plain_anmf_per_trial(self, gen):
        sc = scene(seed=22)
        det = anmf_fp_detector(sc)
        batch = h0_batch(sc, 4, gen)
        got = det.scores(batch, stream="eval")
        fam = rng.family_key(22, "anmf-secondary", "eval")
        sets = secondary_sets(sc, n=4, k=det.k, family=fam)
        p = steering_vector(sc.m, sc.doppler_bin)
        for i in range(4):
            want = anmf(batch.signals[i], p, tyler(sets[i]))
            np.testing.assert_allclose(got[i], want[0], rtol=1e-10)

    def test_scm_estimator_matches_plain_anmf(self, gen):
        sc = scene(seed=23)
        det = anmf_fp_detector(sc, estimator="scm")
        batch = h0_batch(sc, 3, gen)
        got = det.scores(batch, stream="eval")
        fam = rng.family_key(23, "anmf-secondary", "eval")
        sets = secondary_sets(sc, n=3, k=det.k, family=fam)
        p = steering_vector(sc.m, sc.doppler_bin)
        for i in range(3):
            want = anmf(batch.signals[i], p, scm(sets[i]))
            np.testing.assert_allclose(got[i], want[0], rtol=1e-10)

    def test_share_secondary_path(self, gen):
        sc = scene(seed=21)
        det = anmf_fp_detector(sc, share_secondary=True)
        batch = h0_batch(sc, 5, gen)
        s = det.scores(batch)
        assert s.shape == (5,)
        assert np.all((s >= 0.0) & (s <= 1.0))

    def test_convergence_error_propagates(self, gen):
        sc = scene(seed=21)
        det = anmf_fp_detector(sc, max_iter=1)
        with pytest.raises(TylerConvergenceError):
            det.scores(h0_batch(sc, 3, gen))
