"""Synthetic radar Doppler-profile scenes and IQ file ingestion.

A scene is m pulses of clutter + thermal noise, optionally with a target echo
alpha * p(d) injected on top. Clutter is correlated complex Gaussian with
covariance T(rho) (unit per-bin power); the compound variant multiplies each
profile by an independent Gamma texture with unit mean. Thermal noise level
is set by the clutter-to-noise ratio in dB.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import clx, rng

__all__ = [
    "CGN",
    "CCGN",
    "Scenario",
    "SampleBatch",
    "IqFormatError",
    "IqHeaderError",
    "IqTruncationError",
    "IqLengthMismatchError",
    "steering_vector",
    "target_amplitude",
    "clutter_covariance",
    "noise_power",
    "sample_clutter",
    "sample_secondary",
    "inject_target",
    "write_iq",
    "load_iq",
    "load_iq_batch",
]

CGN = "cGN"
CCGN = "cCGN"
_CLUTTER_KINDS = (CGN, CCGN)

IQ_MAGIC = b"CIQ1"
_HEADER = struct.Struct("<4sIQ")


@dataclass(frozen=True)
class Scenario:
    """Generative description of one synthetic radar scene."""

    m: int = 16
    rho: float = 0.5
    clutter_kind: str = CGN
    texture_shape: float = 1.0
    cnr_db: float = 15.0
    snr_db: float = 0.0
    doppler_bin: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.m < 2:
            raise ValueError(f"m must be >= 2, got {self.m}")
        if not abs(self.rho) < 1.0:
            raise ValueError(f"rho must satisfy |rho| < 1, got {self.rho}")
        if self.clutter_kind not in _CLUTTER_KINDS:
            raise ValueError(f"clutter_kind must be one of {_CLUTTER_KINDS}")
        if not self.texture_shape > 0:
            raise ValueError("texture_shape must be positive")
        if not 0 <= self.doppler_bin < self.m:
            raise ValueError(f"doppler_bin must be in [0, {self.m})")

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "rho": self.rho,
            "clutter_kind": self.clutter_kind,
            "texture_shape": self.texture_shape,
            "cnr_db": self.cnr_db,
            "snr_db": self.snr_db,
            "doppler_bin": self.doppler_bin,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(**d)


@dataclass(frozen=True)
class SampleBatch:
    """A batch of length-m profiles under a single hypothesis."""

    signals: np.ndarray  # (n, m) complex128
    label: str  # "H0" or "H1"
    scenario: Scenario = field(repr=False)

    def __post_init__(self):
        sig = np.asarray(self.signals, dtype=np.complex128)
        sig.setflags(write=False)
        object.__setattr__(self, "signals", sig)
        if sig.ndim != 2 or sig.shape[1] != self.scenario.m:
            raise ValueError(
                f"signals must have shape (n, {self.scenario.m}), got {sig.shape}"
            )
        if self.label not in ("H0", "H1"):
            raise ValueError("label must be 'H0' or 'H1'")

    def __len__(self) -> int:
        return self.signals.shape[0]


def steering_vector(m: int, d: int) -> np.ndarray:
    """Doppler steering vector p_k = exp(2i pi d k / m), k = 0..m-1."""
    if not 0 <= d < m:
        raise ValueError(f"doppler bin d must be in [0, {m})")
    k = np.arange(m)
    return np.exp(2j * np.pi * d * k / m)


def target_amplitude(snr_db: float, m: int, phase: float | None = None,
                     gen: np.random.Generator | None = None) -> complex:
    """Target amplitude sqrt(SNR) * exp(2i pi phi) / sqrt(m).

    ``phase`` is phi in [0, 1); drawn uniformly from ``gen`` when omitted.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if phase is None:
        if gen is None:
            raise ValueError("either phase or gen must be given")
        phase = gen.uniform(0.0, 1.0)
    snr_lin = 10.0 ** (snr_db / 10.0)
    return complex(math.sqrt(snr_lin / m) * np.exp(2j * np.pi * phase))


def clutter_covariance(scenario: Scenario) -> np.ndarray:
    """Clutter covariance T(rho) of size m (unit diagonal)."""
    return clx.toeplitz(scenario.rho, scenario.m)


def noise_power(scenario: Scenario) -> float:
    """Thermal noise per-bin power sigma_b^2 = 10^(-CNR/10); 0 at CNR=+inf."""
    if math.isinf(scenario.cnr_db) and scenario.cnr_db > 0:
        return 0.0
    return 10.0 ** (-scenario.cnr_db / 10.0)


def _standard_complex_normal(gen: np.random.Generator, size) -> np.ndarray:
    # (g_r + i g_i)/sqrt(2) so that E|w|^2 = 1
    g = gen.standard_normal(size=(2,) + tuple(size))
    return (g[0] + 1j * g[1]) / np.sqrt(2.0)


def sample_clutter(scenario: Scenario, n: int, seed=None,
                   stream: str = "clutter") -> SampleBatch:
    """Draw ``n`` H0 profiles (clutter + thermal noise).

    cGN:  x_i = L w_i + b_i with L L^H = T(rho), w_i ~ CN(0, I).
    cCGN: x_i = sqrt(tau_i) L w_i + b_i, tau_i ~ Gamma(mu, 1/mu) (unit mean).

    Each signal index draws from its own Philox stream, so a batch is
    reproducible from (scenario, n, seed) and prefix-stable in n. ``seed``
    defaults to ``scenario.seed``.
    """
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    seed = scenario.seed if seed is None else seed
    family = rng.family_key(seed, stream)
    m = scenario.m
    low = np.linalg.cholesky(clutter_covariance(scenario))
    sigma_b = math.sqrt(noise_power(scenario))
    compound = scenario.clutter_kind == CCGN
    mu = scenario.texture_shape

    signals = np.empty((n, m), dtype=np.complex128)
    for i in range(n):
        gen = rng.signal_stream(family, i)
        w = _standard_complex_normal(gen, (m,))
        c = low @ w
        if compound:
            c *= math.sqrt(gen.gamma(shape=mu, scale=1.0 / mu))
        if sigma_b > 0.0:
            c = c + sigma_b * _standard_complex_normal(gen, (m,))
        signals[i] = c
    return SampleBatch(signals=signals, label="H0", scenario=scenario)


def sample_secondary(scenario: Scenario, k: int, seed=None) -> np.ndarray:
    """K target-free training profiles, same law as H0; returns (k, m)."""
    return sample_clutter(scenario, k, seed=seed, stream="secondary").signals


def inject_target(batch: SampleBatch, scenario: Scenario | None = None,
                  seed=None) -> SampleBatch:
    """Add alpha_i * p to each H0 profile, independent uniform phase per signal."""
    if batch.label != "H0":
        raise ValueError("inject_target expects an H0 batch")
    scenario = batch.scenario if scenario is None else scenario
    seed = scenario.seed if seed is None else seed
    if 10.0 ** (scenario.snr_db / 10.0) == 0.0:
        return SampleBatch(signals=batch.signals.copy(), label="H1",
                           scenario=scenario)
    p = steering_vector(scenario.m, scenario.doppler_bin)
    family = rng.family_key(seed, "target")
    n = len(batch)
    alphas = np.empty(n, dtype=np.complex128)
    for i in range(n):
        gen = rng.signal_stream(family, i)
        alphas[i] = target_amplitude(scenario.snr_db, scenario.m, gen=gen)
    signals = batch.signals + alphas[:, None] * p[None, :]
    return SampleBatch(signals=signals, label="H1", scenario=scenario)


class IqFormatError(ValueError):
    """Base failure for the CIQ1 file format."""


class IqHeaderError(IqFormatError):
    """Missing or malformed CIQ1 header."""


class IqTruncationError(IqFormatError):
    """Payload ends mid-record or short of the declared record count."""


class IqLengthMismatchError(IqFormatError):
    """File's pulse count m differs from what the caller expects."""


def write_iq(path, signals: np.ndarray) -> None:
    """Write (n, m) complex profiles in the CIQ1 format.

    Layout: magic ``CIQ1``, little-endian u32 m, u64 record count, then
    records of m interleaved (re, im) float32 pairs.
    """
    sig = np.asarray(signals, dtype=np.complex128)
    if sig.ndim != 2:
        raise ValueError("signals must be a 2-D array (n, m)")
    n, m = sig.shape
    inter = np.empty((n, m, 2), dtype="<f4")
    inter[:, :, 0] = sig.real
    inter[:, :, 1] = sig.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(IQ_MAGIC, m, n))
        fh.write(inter.tobytes())


def load_iq(path, expect_m: int | None = None) -> np.ndarray:
    """Read a CIQ1 file back into an (n, m) complex128 array.

    ``expect_m`` asserts the header's pulse count. Distinct errors for a bad
    header, a truncated payload, and an m mismatch.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise IqHeaderError(f"file too short for CIQ1 header: {len(raw)} bytes")
    magic, m, count = _HEADER.unpack_from(raw)
    if magic != IQ_MAGIC:
        raise IqHeaderError(f"bad magic {magic!r}, expected {IQ_MAGIC!r}")
    if m == 0:
        raise IqHeaderError("header declares m = 0")
    if expect_m is not None and m != expect_m:
        raise IqLengthMismatchError(f"file has m={m}, expected m={expect_m}")
    payload = raw[_HEADER.size:]
    expected = count * m * 8  # two float32 per complex value
    if len(payload) < expected:
        raise IqTruncationError(
            f"payload holds {len(payload)} bytes, header promises {expected}"
        )
    flat = np.frombuffer(payload[:expected], dtype="<f4").reshape(count, m, 2)
    return (flat[:, :, 0].astype(np.float64)
            + 1j * flat[:, :, 1].astype(np.float64))


def load_iq_batch(path, scenario: Scenario | None = None) -> SampleBatch:
    """Load a CIQ1 file as an H0 SampleBatch (scenario defaults to the file's m)."""
    expect = scenario.m if scenario is not None else None
    signals = load_iq(path, expect_m=expect)
    if scenario is None:
        scenario = Scenario(m=signals.shape[1])
    return SampleBatch(signals=signals, label="H0", scenario=scenario)
