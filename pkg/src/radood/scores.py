"""Detection scores over the learned latent space, and threshold calibration.

Three scores are defined on top of a trained model:

* reconstruction power through the deterministic latent z = mu;
* KL divergence between the per-sample posterior and an empirical latent
  null, evaluated in closed form on per-component 2x2 augmented blocks;
* Hermitian Mahalanobis distance of a latent draw to an empirical Gaussian
  null with full q x q covariance.

Thresholds use the conservative higher-order-statistic percentile: the
k-th smallest calibration score with k = ceil(N * (1 - alpha)), so the
empirical false-alarm rate on the calibration set never exceeds alpha.
Scoring is pure; fitted nulls and thresholds are immutable.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from . import clx
from .cvae import CvaeModel, encode, decode, reparameterize
from .cvnn import no_grad

__all__ = [
    "EmpiricalNullKL",
    "EmpiricalNullMaha",
    "Threshold",
    "score_mse",
    "fit_null_kl",
    "score_kl",
    "fit_null_maha",
    "latent_points",
    "score_maha",
    "calibrate",
    "decide",
    "save_calibration",
    "load_calibration",
]

_EPS_CLIP = 1e-8
_PD_SHRINK = 1.0 - 1e-8
_CAL_FORMAT = "radood-calibration"
_CAL_VERSION = 1


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


def _c2pair(a: np.ndarray) -> list:
    return [np.asarray(a).real.tolist(), np.asarray(a).imag.tolist()]


def _pair2c(pair) -> np.ndarray:
    return np.asarray(pair[0], dtype=float) + 1j * np.asarray(pair[1], dtype=float)


@dataclass(frozen=True, eq=False)
class EmpiricalNullKL:
    """Latent null for the KL score: componentwise mean, circular variance
    and pseudo-variance, with per-component blocks [[s, d], [d*, s]] kept
    positive definite."""

    mu0: np.ndarray
    sigma0: np.ndarray
    delta0: np.ndarray
    eps_clip: float = _EPS_CLIP

    def __post_init__(self):
        object.__setattr__(self, "mu0", _readonly(np.asarray(self.mu0, complex)))
        object.__setattr__(self, "sigma0", _readonly(np.asarray(self.sigma0, float)))
        object.__setattr__(self, "delta0", _readonly(np.asarray(self.delta0, complex)))
        if self.mu0.ndim != 1 or self.sigma0.shape != self.mu0.shape \
                or self.delta0.shape != self.mu0.shape:
            raise ValueError("mu0, sigma0, delta0 must be equal-length vectors")
        if np.any(self.sigma0 <= 0):
            raise ValueError("sigma0 must be strictly positive")
        if np.any(np.abs(self.delta0) >= self.sigma0):
            raise ValueError("null blocks must be positive definite (|delta0| < sigma0)")

    @property
    def q(self) -> int:
        return self.mu0.shape[0]

    def to_dict(self) -> dict:
        return {"kind": "kl", "mu0": _c2pair(self.mu0),
                "sigma0": self.sigma0.tolist(), "delta0": _c2pair(self.delta0),
                "eps_clip": self.eps_clip}

    @classmethod
    def from_dict(cls, d: dict) -> "EmpiricalNullKL":
        return cls(_pair2c(d["mu0"]), np.asarray(d["sigma0"], float),
                   _pair2c(d["delta0"]), eps_clip=d.get("eps_clip", _EPS_CLIP))


@dataclass(frozen=True, eq=False)
class EmpiricalNullMaha:
    """Gaussian latent null for the Mahalanobis score; the Cholesky factor
    of the (regularized) covariance is computed once and cached."""

    mu_ref: np.ndarray
    sigma_ref: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu_ref", _readonly(np.asarray(self.mu_ref, complex)))
        sigma = clx.as_hermitian(np.asarray(self.sigma_ref, complex))
        object.__setattr__(self, "sigma_ref", _readonly(sigma))
        if self.mu_ref.ndim != 1 or sigma.shape != (self.q, self.q):
            raise ValueError("mu_ref must be length q and sigma_ref q x q")
        object.__setattr__(self, "_low", clx.cholesky(sigma))

    @property
    def q(self) -> int:
        return self.mu_ref.shape[0]

    @property
    def cholesky(self) -> np.ndarray:
        return self._low

    def to_dict(self) -> dict:
        return {"kind": "maha", "mu_ref": _c2pair(self.mu_ref),
                "sigma_ref": _c2pair(self.sigma_ref)}

    @classmethod
    def from_dict(cls, d: dict) -> "EmpiricalNullMaha":
        return cls(_pair2c(d["mu_ref"]), _pair2c(d["sigma_ref"]))


@dataclass(frozen=True)
class Threshold:
    value: float
    target_pfa: float
    n_cal: int
    kind: str

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("threshold value must be finite")
        if not (0 < self.target_pfa < 1):
            raise ValueError("target_pfa must lie in (0, 1)")
        if self.n_cal < 1:
            raise ValueError("n_cal must be positive")

    @property
    def k(self) -> int:
        """Order-statistic index the threshold was read from."""
        return min(self.n_cal,
                   max(1, int(np.ceil(self.n_cal * (1.0 - self.target_pfa)))))

    def to_dict(self) -> dict:
        return {"value": self.value, "target_pfa": self.target_pfa,
                "n_cal": self.n_cal, "k": self.k, "kind": self.kind}

    @classmethod
    def from_dict(cls, d: dict) -> "Threshold":
        return cls(float(d["value"]), float(d["target_pfa"]),
                   int(d["n_cal"]), str(d["kind"]))


def _encode_arrays(model: CvaeModel, x, batch: int = 2048):
    """Encode profiles in eval mode; returns (mu, v, delta) ndarrays."""
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim == 1:
        x = x[None, :]
    mus, vs, ds = [], [], []
    with no_grad():
        for start in range(0, x.shape[0], batch):
            post = encode(model, x[start:start + batch], training=False)
            mus.append(post.mu.data)
            vs.append(post.v.data.real)
            ds.append(post.delta.data)
    return np.concatenate(mus), np.concatenate(vs), np.concatenate(ds)


def score_mse(model: CvaeModel, x, n_samples: int = 0,
              gen: np.random.Generator | None = None) -> np.ndarray:
    """Reconstruction power per profile, decoding the posterior mean.

    With ``n_samples`` > 0 the score is instead averaged over that many
    reparameterized latent draws from ``gen``.
    """
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim == 1:
        x = x[None, :]
    out = np.zeros(x.shape[0])
    with no_grad():
        for start in range(0, x.shape[0], 2048):
            chunk = x[start:start + 2048]
            post = encode(model, chunk, training=False)
            if n_samples <= 0:
                xhat = decode(model, post.mu, training=False).data
                s = np.sum(np.abs(chunk - xhat) ** 2, axis=1)
            else:
                if gen is None:
                    raise ValueError("sampled scoring needs a generator")
                s = np.zeros(chunk.shape[0])
                for _ in range(n_samples):
                    z = reparameterize(post, gen=gen)
                    xhat = decode(model, z, training=False).data
                    s += np.sum(np.abs(chunk - xhat) ** 2, axis=1)
                s /= n_samples
            out[start:start + chunk.shape[0]] = s
    return out


def fit_null_kl(model: CvaeModel, profiles, eps_clip: float = _EPS_CLIP) -> EmpiricalNullKL:
    """Average the posterior statistics of an H0 set into a latent null.

    Per sample and component the circular covariance is
    k = max(v - |delta|^2, eps_clip); the null is the arithmetic mean of
    (mu, k, delta) over the set, with delta0 shrunk where needed so every
    2x2 block stays positive definite.
    """
    mu, v, delta = _encode_arrays(model, profiles)
    if mu.shape[0] < 2:
        raise ValueError("need at least 2 profiles to fit a null")
    k = np.maximum(v - np.abs(delta) ** 2, eps_clip)
    mu0 = mu.mean(axis=0)
    sigma0 = k.mean(axis=0)
    delta0 = delta.mean(axis=0)
    mag = np.abs(delta0)
    over = mag >= _PD_SHRINK * sigma0
    if np.any(over):
        delta0 = np.where(over, delta0 * (_PD_SHRINK * sigma0 / np.maximum(mag, 1e-300)),
                          delta0)
    return EmpiricalNullKL(mu0, sigma0, delta0, eps_clip=eps_clip)


def _kl_closed_form(mu, v, delta, null: EmpiricalNullKL) -> np.ndarray:
    """Per-sample KL from posterior rows to the null, per-component blocks."""
    s0 = null.sigma0[None, :]
    d0 = null.delta0[None, :]
    det_post = v * v - np.abs(delta) ** 2
    det_null = s0 * s0 - np.abs(d0) ** 2
    dm = null.mu0[None, :] - mu
    trace = (2.0 * v * s0 - 2.0 * (d0 * np.conj(delta)).real) / det_null
    mean = (2.0 * s0 * np.abs(dm) ** 2
            - 2.0 * (np.conj(d0) * dm * dm).real) / det_null
    per = np.log(det_null) - np.log(det_post) + trace + mean - 2.0
    return 0.5 * per.sum(axis=1)


def score_kl(model: CvaeModel, null: EmpiricalNullKL, x) -> np.ndarray:
    """KL divergence of each profile's posterior from the fitted null."""
    mu, v, delta = _encode_arrays(model, x)
    if mu.shape[1] != null.q:
        raise ValueError(f"null has q={null.q}, model emits q={mu.shape[1]}")
    return _kl_closed_form(mu, v, delta, null)


def fit_null_maha(model: CvaeModel, profiles,
                  gen: np.random.Generator | None = None,
                  use_mean: bool = False) -> EmpiricalNullMaha:
    """Fit the latent Gaussian null from one latent per H0 profile.

    Latents are single reparameterized draws (from ``gen``) by default, or
    the posterior means with ``use_mean``. The sample covariance gets a
    ridge of 1e-6 * trace / q (at least 1e-6, so a degenerate set still
    yields a usable null).
    """
    z = latent_points(model, profiles, gen=gen, use_mean=use_mean)
    n, q = z.shape
    if n < 2:
        raise ValueError("need at least 2 profiles to fit a null")
    mu_ref = z.mean(axis=0)
    ctr = z - mu_ref
    sigma = (ctr.T @ ctr.conj()) / (n - 1)
    sigma = 0.5 * (sigma + sigma.conj().T)
    lam = max(1e-6 * sigma.trace().real / q, 1e-6)
    sigma += lam * np.eye(q)
    return EmpiricalNullMaha(mu_ref, sigma)


def latent_points(model: CvaeModel, profiles,
                  gen: np.random.Generator | None = None,
                  use_mean: bool = False, batch: int = 2048) -> np.ndarray:
    """One latent row per profile: a reparameterized draw, or mu."""
    x = np.asarray(profiles, dtype=np.complex128)
    if x.ndim == 1:
        x = x[None, :]
    rows = []
    with no_grad():
        for start in range(0, x.shape[0], batch):
            post = encode(model, x[start:start + batch], training=False)
            if use_mean:
                rows.append(post.mu.data.copy())
            else:
                if gen is None:
                    raise ValueError("sampled latents need a generator")
                rows.append(reparameterize(post, gen=gen).data)
    return np.concatenate(rows)


def score_maha(null: EmpiricalNullMaha, z) -> np.ndarray:
    """Squared Mahalanobis distance of latent rows to the null."""
    z = np.asarray(z, dtype=np.complex128)
    if z.ndim == 1:
        z = z[None, :]
    if z.shape[1] != null.q:
        raise ValueError(f"null has q={null.q}, latents have {z.shape[1]}")
    white = solve_triangular(null.cholesky, (z - null.mu_ref).T, lower=True)
    return np.sum(np.abs(white) ** 2, axis=0)


def calibrate(scores, alpha: float, kind: str = "score") -> Threshold:
    """Threshold at the ceil(N*(1-alpha))-th order statistic of H0 scores."""
    scores = np.asarray(scores, dtype=float).ravel()
    n = scores.size
    if n == 0:
        raise ValueError("cannot calibrate on an empty score set")
    if not (0 < alpha < 1):
        raise ValueError("alpha must lie in (0, 1)")
    if n * alpha < 50:
        warnings.warn(f"only {n * alpha:.1f} expected tail samples; "
                      "threshold will be noisy (want N*alpha >= 50)",
                      stacklevel=2)
    k = int(np.ceil(n * (1.0 - alpha)))
    k = min(max(k, 1), n)
    value = float(np.partition(scores, k - 1)[k - 1])
    return Threshold(value=value, target_pfa=alpha, n_cal=n, kind=kind)


def decide(scores, threshold: Threshold) -> np.ndarray:
    """True means H1: score strictly above the threshold."""
    return np.asarray(scores, dtype=float) > threshold.value


def save_calibration(path, kind: str, threshold: Threshold, null=None,
                     seeds: dict | None = None, extra: dict | None = None) -> None:
    doc = {"format": _CAL_FORMAT, "version": _CAL_VERSION, "kind": kind,
           "threshold": threshold.to_dict(),
           "null": None if null is None else null.to_dict(),
           "seeds": seeds or {}}
    if extra:
        doc["extra"] = extra
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_calibration(path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != _CAL_FORMAT:
        raise ValueError(f"not a calibration file: {path}")
    if doc.get("version") != _CAL_VERSION:
        raise ValueError(f"unsupported calibration version {doc.get('version')}")
    out = dict(doc)
    out["threshold"] = Threshold.from_dict(doc["threshold"])
    if doc.get("null") is not None:
        null_kind = doc["null"].get("kind")
        if null_kind == "kl":
            out["null"] = EmpiricalNullKL.from_dict(doc["null"])
        elif null_kind == "maha":
            out["null"] = EmpiricalNullMaha.from_dict(doc["null"])
        else:
            raise ValueError(f"unknown null kind {null_kind!r}")
    return out
