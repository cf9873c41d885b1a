"""Classical adaptive detection baseline: covariance estimators and ANMF.

The test statistic is the normalized coherence

    Lambda = |p^H S^-1 x|^2 / ((p^H S^-1 p) (x^H S^-1 x)) in [0, 1],

with S estimated from target-free secondary data by either the sample
covariance matrix or Tyler's fixed point

    S_{t+1} = (m/K) sum_k x_k x_k^H / (x_k^H S_t^-1 x_k),

iterated from the identity and trace-normalized to m each step (the fixed
point is defined only up to scale). Lambda is exactly invariant to complex
scaling of x and p, and with Tyler also to per-sample positive scalings of
the secondary data, which is what makes the pair CFAR under
compound-Gaussian clutter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from . import clx, rng
from .sigmodel import (
    Scenario,
    SampleBatch,
    clutter_covariance,
    noise_power,
    sample_secondary,
    steering_vector,
    _standard_complex_normal,
)

__all__ = [
    "SecondaryData",
    "CovEstimate",
    "TylerConvergenceError",
    "draw_secondary",
    "scm",
    "tyler",
    "anmf",
    "AnmfFpDetector",
    "anmf_fp_detector",
    "secondary_sets",
]


class TylerConvergenceError(RuntimeError):
    """Fixed-point iteration failed to reach tolerance; carries the last
    iterate (``last``) and its relative change (``residual``)."""

    def __init__(self, message, last=None, residual=None):
        super().__init__(message)
        self.last = last
        self.residual = residual


@dataclass(frozen=True, eq=False)
class SecondaryData:
    """Target-free training profiles, rows of shape (K, m) with K >= m."""

    samples: np.ndarray

    def __post_init__(self):
        a = np.array(self.samples, dtype=np.complex128)
        if a.ndim != 2:
            raise ValueError("secondary data must be a (K, m) array")
        k, m = a.shape
        if k < m:
            raise ValueError(f"need K >= m secondary samples, got K={k}, m={m}")
        a.setflags(write=False)
        object.__setattr__(self, "samples", a)

    @property
    def k(self) -> int:
        return self.samples.shape[0]

    @property
    def m(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True, eq=False)
class CovEstimate:
    """Hermitian positive-definite covariance estimate with provenance."""

    sigma_hat: np.ndarray
    kind: str
    iterations: int = 0
    rel_change: float = 0.0

    def __post_init__(self):
        sigma = clx.as_hermitian(np.asarray(self.sigma_hat, complex))
        sigma = np.array(sigma)
        sigma.setflags(write=False)
        object.__setattr__(self, "sigma_hat", sigma)
        if self.kind not in ("scm", "tyler"):
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        m = sigma.shape[0]
        if self.kind == "tyler" and abs(sigma.trace().real - m) > 1e-9 * m:
            raise ValueError("tyler estimate must be trace-normalized to m")
        object.__setattr__(self, "_low", clx.cholesky(sigma))

    @property
    def m(self) -> int:
        return self.sigma_hat.shape[0]

    @property
    def cholesky(self) -> np.ndarray:
        return self._low


def draw_secondary(scenario: Scenario, k: int | None = None,
                   seed=None) -> SecondaryData:
    """K secondary profiles from the scenario's H0 law (default K = 2m)."""
    k = 2 * scenario.m if k is None else k
    return SecondaryData(sample_secondary(scenario, k, seed=seed))


def _samples_array(data) -> np.ndarray:
    if isinstance(data, SecondaryData):
        return data.samples
    return SecondaryData(data).samples


def scm(data) -> CovEstimate:
    """Sample covariance (1/K) sum_k x_k x_k^H of secondary data."""
    xs = _samples_array(data)
    k = xs.shape[0]
    sigma = xs.T @ xs.conj() / k
    return CovEstimate(sigma_hat=sigma, kind="scm")


def tyler(data, tol: float = 1e-8, max_iter: int = 100) -> CovEstimate:
    """Tyler's fixed-point scatter estimate, trace-normalized to m."""
    xs = _samples_array(data)
    k, m = xs.shape
    if k < m + 1:
        raise ValueError(f"tyler needs K >= m + 1 samples, got K={k}, m={m}")
    norms = np.einsum("km,km->k", xs.conj(), xs).real
    if np.any(norms <= 0.0):
        raise ValueError("secondary data contains a zero-norm sample")
    sigma = np.eye(m, dtype=np.complex128)
    for it in range(1, max_iter + 1):
        qf = np.einsum("km,km->k", xs.conj(), np.linalg.solve(sigma, xs.T).T).real
        nxt = (m / k) * np.einsum("ki,kj->ij", xs / qf[:, None], xs.conj())
        nxt = 0.5 * (nxt + nxt.conj().T)
        nxt *= m / nxt.trace().real
        residual = float(np.linalg.norm(nxt - sigma) / np.linalg.norm(sigma))
        sigma = nxt
        if residual <= tol:
            return CovEstimate(sigma_hat=sigma, kind="tyler",
                               iterations=it, rel_change=residual)
    raise TylerConvergenceError(
        f"no fixed point after {max_iter} iterations (residual {residual:.3e})",
        last=sigma, residual=residual)


def _tyler_batch(sets: np.ndarray, tol: float = 1e-8,
                 max_iter: int = 100) -> np.ndarray:
    """Tyler estimates for a stack of secondary sets (n, K, m) -> (n, m, m)."""
    n, k, m = sets.shape
    if k < m + 1:
        raise ValueError(f"tyler needs K >= m + 1 samples, got K={k}, m={m}")
    sigma = np.tile(np.eye(m, dtype=np.complex128), (n, 1, 1))
    active = np.arange(n)
    residual = np.zeros(n)
    for _ in range(max_iter):
        if active.size == 0:
            return sigma
        xs = sets[active]
        sol = np.linalg.solve(sigma[active], np.swapaxes(xs, 1, 2))
        qf = np.einsum("akm,amk->ak", xs.conj(), sol).real
        nxt = (m / k) * np.einsum("aki,akj->aij", xs / qf[:, :, None], xs.conj())
        nxt = 0.5 * (nxt + np.conj(np.swapaxes(nxt, 1, 2)))
        traces = np.einsum("aii->a", nxt).real
        nxt *= (m / traces)[:, None, None]
        diff = np.linalg.norm(nxt - sigma[active], axis=(1, 2))
        base = np.linalg.norm(sigma[active], axis=(1, 2))
        res = diff / base
        sigma[active] = nxt
        residual[active] = res
        active = active[res > tol]
    raise TylerConvergenceError(
        f"{active.size} of {n} secondary sets unconverged after {max_iter} "
        f"iterations (worst residual {residual.max():.3e})",
        last=sigma, residual=float(residual.max()))


def anmf(x, p, sigma) -> np.ndarray:
    """Normalized coherence of test cells against the steering vector.

    ``x`` is one profile (m,) or a batch (n, m); ``sigma`` is a CovEstimate
    or a Hermitian PD matrix. Returns per-profile Lambda in [0, 1].
    """
    xs = np.asarray(x, dtype=np.complex128)
    if xs.ndim == 1:
        xs = xs[None, :]
    p = np.asarray(p, dtype=np.complex128)
    if np.linalg.norm(p) == 0.0:
        raise ValueError("steering vector must be nonzero")
    if np.any(np.einsum("nm,nm->n", xs.conj(), xs).real == 0.0):
        raise ValueError("test cell must be nonzero")
    low = sigma.cholesky if isinstance(sigma, CovEstimate) else clx.cholesky(
        clx.as_hermitian(np.asarray(sigma, complex)))
    wx = solve_triangular(low, xs.T, lower=True)
    wp = solve_triangular(low, p, lower=True)
    num = np.abs(wp.conj() @ wx) ** 2
    den = (wp.conj() @ wp).real * np.einsum("mn,mn->n", wx.conj(), wx).real
    return num / den


def secondary_sets(scenario: Scenario, n: int, k: int, family: int,
                   start_index: int = 0) -> np.ndarray:
    """Per-trial secondary data (n, K, m), one Philox stream per trial.

    Trial t (absolute index start_index + t) draws its whole set from its
    own stream, so results do not depend on how trials are batched.
    """
    m = scenario.m
    low = np.linalg.cholesky(clutter_covariance(scenario))
    sigma_b = math.sqrt(noise_power(scenario))
    compound = scenario.clutter_kind == "cCGN"
    mu = scenario.texture_shape
    out = np.empty((n, k, m), dtype=np.complex128)
    for t in range(n):
        gen = rng.signal_stream(family, start_index + t)
        w = _standard_complex_normal(gen, (k, m))
        c = w @ low.T
        if compound:
            tau = gen.gamma(shape=mu, scale=1.0 / mu, size=k)
            c *= np.sqrt(tau)[:, None]
        if sigma_b > 0.0:
            c = c + sigma_b * _standard_complex_normal(gen, (k, m))
        out[t] = c
    return out


class AnmfFpDetector:
    """Adaptive detector drawing fresh secondary data for every trial.

    Satisfies the common detector interface: ``scores(batch, stream,
    start_index)`` returns one statistic per profile, with the secondary
    draws keyed by (seed, stream, absolute trial index). The steering
    vector follows the batch scenario's doppler bin; the H0 distribution of
    the statistic does not depend on it, so one calibration serves every
    bin. ``share_secondary`` reuses a single secondary set for all trials
    (a variance-reducing shortcut, off by default).
    """

    def __init__(self, scenario: Scenario, k: int | None = None,
                 estimator: str = "tyler", seed=None,
                 share_secondary: bool = False, tol: float = 1e-8,
                 max_iter: int = 100, chunk: int = 8192):
        if estimator not in ("scm", "tyler"):
            raise ValueError(f"unknown estimator kind {estimator!r}")
        self.scenario = scenario
        self.k = 2 * scenario.m if k is None else int(k)
        if self.k < scenario.m + 1:
            raise ValueError("need K >= m + 1 secondary samples per trial")
        self.estimator = estimator
        self.seed = scenario.seed if seed is None else seed
        self.share_secondary = share_secondary
        self.tol, self.max_iter, self.chunk = tol, max_iter, chunk
        self.detector_id = "anmf-fp" if estimator == "tyler" else "anmf-scm"

    def _estimate(self, sets: np.ndarray) -> np.ndarray:
        if self.estimator == "tyler":
            return _tyler_batch(sets, tol=self.tol, max_iter=self.max_iter)
        return np.einsum("aki,akj->aij", sets, sets.conj()) / sets.shape[1]

    def scores(self, batch: SampleBatch, stream: str = "eval",
               start_index: int = 0) -> np.ndarray:
        xs = batch.signals
        scenario = batch.scenario
        p = steering_vector(scenario.m, scenario.doppler_bin)
        family = rng.family_key(self.seed, "anmf-secondary", stream)
        n = xs.shape[0]
        out = np.empty(n)
        if self.share_secondary:
            sets = secondary_sets(scenario, 1, self.k, family, start_index=0)
            return anmf(xs, p, self._estimate(sets)[0])
        for lo in range(0, n, self.chunk):
            hi = min(lo + self.chunk, n)
            sets = secondary_sets(scenario, hi - lo, self.k, family,
                                  start_index=start_index + lo)
            sigmas = self._estimate(sets)
            sol = np.linalg.solve(
                sigmas, np.stack([xs[lo:hi], np.broadcast_to(p, (hi - lo, scenario.m))],
                                 axis=-1))
            y, u = sol[:, :, 0], sol[:, :, 1]
            num = np.abs(np.einsum("m,nm->n", p.conj(), y)) ** 2
            den = (np.einsum("m,nm->n", p.conj(), u).real
                   * np.einsum("nm,nm->n", xs[lo:hi].conj(), y).real)
            out[lo:hi] = num / den
        return out


def anmf_fp_detector(scenario: Scenario, k: int | None = None,
                     estimator: str = "tyler", **kwargs) -> AnmfFpDetector:
    """The classical baseline as a bench-compatible detector."""
    return AnmfFpDetector(scenario, k=k, estimator=estimator, **kwargs)
