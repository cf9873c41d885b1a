"""Complex-valued variational autoencoder on Doppler profiles.

The encoder maps a length-m profile to a non-circular complex Gaussian
posterior over a q-dimensional latent: a mean mu, a per-component variance
v = E|z-mu|^2 and a pseudo-variance delta = E[(z-mu)^2] with |delta| < v.
Sampling uses

    z = mu + k_r * eps_r + i * k_i * eps_i,     eps_r, eps_i ~ N(0, I),

with k_r = (v + delta) / sqrt(2(v + Re delta)) and
k_i = sqrt((v^2 - |delta|^2) / (2(v + Re delta))), which reproduces the
posterior moments exactly. The loss is reconstruction power plus a weighted
KL divergence to the circular unit prior, computed in closed form from the
per-component 2x2 augmented covariance blocks [[v, delta], [conj(delta), v]].

All array interfaces are batch-first: profiles are (n, m), latent
quantities are (n, q), and per-sample outputs are length-n vectors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import cvnn
from .cvnn import Tensor
from .rng import derive

__all__ = [
    "LatentPosterior",
    "CvaeModel",
    "TrainConfig",
    "DivergenceError",
    "encode",
    "reparameterize",
    "decode",
    "kl_to_prior",
    "elbo_loss",
    "train",
]

_DELTA_SHRINK = 1.0 - 1e-6
_REPAR_EPS = 1e-8
_V_FLOOR = 1e-12


class DivergenceError(FloatingPointError):
    """A forward pass or training step produced non-finite values."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


def _as_tensor(x) -> Tensor:
    t = Tensor.ensure(x)
    if t.data.ndim == 1:
        t = t.reshape(1, t.data.shape[0])
    if t.data.ndim != 2:
        raise ValueError("expected a (n, length) array of row vectors")
    return t


@dataclass(frozen=True, eq=False)
class LatentPosterior:
    """Batched non-circular Gaussian posterior: rows of mu, v, delta."""

    mu: Tensor
    v: Tensor
    delta: Tensor

    def __post_init__(self):
        object.__setattr__(self, "mu", _as_tensor(self.mu))
        object.__setattr__(self, "v", _as_tensor(self.v))
        object.__setattr__(self, "delta", _as_tensor(self.delta))
        shapes = {self.mu.data.shape, self.v.data.shape, self.delta.data.shape}
        if len(shapes) != 1:
            raise ValueError(f"mu, v, delta shapes differ: {shapes}")
        vr = self.v.data.real
        if not np.all(np.isfinite(vr)) or np.any(vr <= 0):
            raise ValueError("v must be finite and strictly positive")
        bound = _DELTA_SHRINK * vr * (1.0 + 1e-9)
        if np.any(np.abs(self.delta.data) > bound):
            raise ValueError("|delta| exceeds (1 - 1e-6) * v")

    @property
    def q(self) -> int:
        return self.mu.data.shape[1]

    def __len__(self) -> int:
        return self.mu.data.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    lr: float = 1e-3
    batch: int = 128
    beta: float = 100.0
    q: int = 12
    seed: int = 0
    train_frac: float = 2.0 / 3.0
    val_frac: float = 1.0 / 3.0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0 or self.batch < 1 or self.q < 1:
            raise ValueError("lr, batch and q must be positive")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not (0 < self.train_frac < 1) or abs(self.train_frac + self.val_frac - 1.0) > 1e-9:
            raise ValueError("split fractions must be in (0, 1) and sum to 1")

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "lr": self.lr, "batch": self.batch,
                "beta": self.beta, "q": self.q, "seed": self.seed,
                "train_frac": self.train_frac, "val_frac": self.val_frac}


class CvaeModel:
    """Encoder/decoder stack for length-m profiles with latent dim q.

    Encoder: conv(1->8, k3, s2, p1), batch norm, CReLU, conv(8->16, k3, s2,
    p1), batch norm, CReLU, flatten, dense(16*l2 -> 32), then three dense
    heads of width q for mu, v (softplus of the real part) and delta
    (magnitude-bounded by v). Decoder mirrors it with transposed convs.
    """

    def __init__(self, q: int, m: int = 16, beta: float = 100.0, seed: int = 0):
        if q < 1 or m < 4:
            raise ValueError("need q >= 1 and m >= 4")
        if beta < 0:
            raise ValueError("beta must be >= 0")
        self.q, self.m, self.beta, self.seed = int(q), int(m), float(beta), int(seed)
        gen = derive(seed, "cvae", "init")
        self.enc_conv1 = cvnn.ComplexConv1d(1, 8, 3, stride=2, padding=1, gen=gen)
        self.enc_bn1 = cvnn.ComplexBatchNorm(8)
        self.enc_conv2 = cvnn.ComplexConv1d(8, 16, 3, stride=2, padding=1, gen=gen)
        self.enc_bn2 = cvnn.ComplexBatchNorm(16)
        l1 = self.enc_conv1.out_length(m)
        l2 = self.enc_conv2.out_length(l1)
        self.feat_len = l2
        flat = 16 * l2
        self.enc_dense = cvnn.ComplexDense(flat, 32, gen=gen)
        self.head_mu = cvnn.ComplexDense(32, q, gen=gen)
        self.head_v = cvnn.ComplexDense(32, q, gen=gen)
        self.head_delta = cvnn.ComplexDense(32, q, gen=gen)
        self.dec_dense1 = cvnn.ComplexDense(q, 32, gen=gen)
        self.dec_dense2 = cvnn.ComplexDense(32, flat, gen=gen)
        op1 = l1 - ((l2 - 1) * 2 - 2 + 3)
        op2 = m - ((l1 - 1) * 2 - 2 + 3)
        if not (0 <= op1 < 2 and 0 <= op2 < 2):
            raise ValueError(f"profile length {m} does not round-trip the conv stack")
        self.dec_convt1 = cvnn.ComplexConvTranspose1d(
            16, 8, 3, stride=2, padding=1, output_padding=op1, gen=gen)
        self.dec_bn = cvnn.ComplexBatchNorm(8)
        self.dec_convt2 = cvnn.ComplexConvTranspose1d(
            8, 1, 3, stride=2, padding=1, output_padding=op2, gen=gen)

    def named_layers(self):
        return [
            ("enc_conv1", self.enc_conv1), ("enc_bn1", self.enc_bn1),
            ("enc_conv2", self.enc_conv2), ("enc_bn2", self.enc_bn2),
            ("enc_dense", self.enc_dense), ("head_mu", self.head_mu),
            ("head_v", self.head_v), ("head_delta", self.head_delta),
            ("dec_dense1", self.dec_dense1), ("dec_dense2", self.dec_dense2),
            ("dec_convt1", self.dec_convt1), ("dec_bn", self.dec_bn),
            ("dec_convt2", self.dec_convt2),
        ]

    def parameters(self) -> list:
        out = []
        for _, layer in self.named_layers():
            out.extend(layer.parameters())
        return out

    def arch(self) -> dict:
        return {"q": self.q, "m": self.m, "beta": self.beta,
                "layers": {name: layer.spec() for name, layer in self.named_layers()}}

    def state_arrays(self) -> dict:
        out = {}
        for name, layer in self.named_layers():
            for key, value in layer.state_arrays().items():
                out[f"{name}.{key}"] = value
        return out

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {"arch": self.arch()}
        if extra_meta:
            meta.update(extra_meta)
        cvnn.save_checkpoint(path, meta, self.state_arrays())

    @classmethod
    def load(cls, path) -> "CvaeModel":
        meta, arrays = cvnn.load_checkpoint(path)
        arch = meta["arch"]
        model = cls(q=arch["q"], m=arch["m"], beta=arch["beta"])
        expected = model.arch()["layers"]
        if arch["layers"] != expected:
            raise cvnn.CheckpointFormatError(
                "checkpoint architecture does not match this model family")
        for name, layer in model.named_layers():
            own = layer.state_arrays()
            layer.load_state({key.split(".", 1)[1]: arrays[key]
                              for key in arrays if key.split(".", 1)[0] == name
                              and key.split(".", 1)[1] in own})
        model.loaded_meta = meta
        return model


def _check_finite(arrays, what: str):
    for a in arrays:
        if not np.all(np.isfinite(a.real)) or not np.all(np.isfinite(a.imag)):
            raise DivergenceError(f"non-finite {what}")


def encode(model: CvaeModel, x, training: bool = False) -> LatentPosterior:
    """Map profiles (n, m) to their latent posterior parameters."""
    xt = _as_tensor(x)
    n, m = xt.data.shape
    if m != model.m:
        raise ValueError(f"expected profiles of length {model.m}, got {m}")
    h = xt.reshape(n, 1, m)
    h = model.enc_conv1(h, training)
    h = model.enc_bn1(h, training).crelu()
    h = model.enc_conv2(h, training)
    h = model.enc_bn2(h, training).crelu()
    h = h.reshape(n, 16 * model.feat_len)
    h = model.enc_dense(h, training)
    mu = model.head_mu(h, training)
    v = model.head_v(h, training).real().softplus() + _V_FLOOR
    raw = model.head_delta(h, training)
    t = raw.abs()
    delta = (_DELTA_SHRINK * (t.tanh() / t.maximum(1e-12))) * v * raw
    _check_finite([mu.data, v.data, delta.data], "encoder activations")
    return LatentPosterior(mu, v, delta)


def reparameterize(post: LatentPosterior, gen: np.random.Generator | None = None,
                   eps: tuple | None = None) -> Tensor:
    """Draw z = mu + k_r*eps_r + i*k_i*eps_i, differentiable in (mu, v, delta).

    ``eps`` may supply the pair (eps_r, eps_i) of standard normal arrays for
    deterministic replay; otherwise they are drawn from ``gen``.
    """
    shape = post.mu.data.shape
    if eps is None:
        if gen is None:
            raise ValueError("reparameterize needs a generator or explicit eps")
        eps_r = gen.standard_normal(shape)
        eps_i = gen.standard_normal(shape)
    else:
        eps_r, eps_i = (np.asarray(e, dtype=float) for e in eps)
    v = post.v.real()
    den = (v + post.delta.real()).maximum(_REPAR_EPS) * 2.0
    k_r = (v + post.delta) / den.sqrt()
    k_i = ((v * v - post.delta.abs2()) / den).sqrt()
    return post.mu + k_r * Tensor(eps_r) + (1j * (k_i * Tensor(eps_i)))


def decode(model: CvaeModel, z, training: bool = False) -> Tensor:
    """Map latent rows (n, q) to reconstructed profiles (n, m)."""
    zt = _as_tensor(z)
    n, q = zt.data.shape
    if q != model.q:
        raise ValueError(f"expected latent dim {model.q}, got {q}")
    h = model.dec_dense1(zt, training).crelu()
    h = model.dec_dense2(h, training).crelu()
    h = h.reshape(n, 16, model.feat_len)
    h = model.dec_convt1(h, training)
    h = model.dec_bn(h, training).crelu()
    h = model.dec_convt2(h, training)
    out = h.reshape(n, model.m)
    _check_finite([out.data], "decoder output")
    return out


def kl_to_prior(post: LatentPosterior) -> Tensor:
    """Per-sample KL divergence to the circular unit Gaussian prior.

    Per component: v + |mu|^2 - 1 - 0.5*log(v^2 - |delta|^2), summed over
    the latent dimension; zero iff (mu, v, delta) = (0, 1, 0).
    """
    v = post.v.real()
    gap = v * v - post.delta.abs2()
    per = v + post.mu.abs2() - 1.0 - 0.5 * gap.log()
    return per.sum(axis=1)


def elbo_loss(model: CvaeModel, x, gen: np.random.Generator | None = None,
              eps: tuple | None = None, training: bool = False):
    """Mean reconstruction power plus beta-weighted KL over a batch.

    Returns (loss, rec, kl) as scalar tensors, where loss = rec + beta*kl.
    """
    xt = _as_tensor(x)
    if xt.data.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    post = encode(model, xt, training)
    z = reparameterize(post, gen=gen, eps=eps)
    xhat = decode(model, z, training)
    rec = (xt - xhat).abs2().sum(axis=1).mean()
    kl = kl_to_prior(post).mean()
    loss = rec + model.beta * kl
    if not np.isfinite(loss.data.real.reshape(())):
        raise DivergenceError("non-finite loss")
    return loss, rec, kl


def _mean_val_loss(model: CvaeModel, data: np.ndarray, batch: int,
                   gen: np.random.Generator) -> float:
    total = 0.0
    with cvnn.no_grad():
        for start in range(0, data.shape[0], batch):
            chunk = data[start:start + batch]
            loss, _, _ = elbo_loss(model, chunk, gen=gen, training=False)
            total += loss.real_item() * chunk.shape[0]
    return total / data.shape[0]


def train(model: CvaeModel, data, config: TrainConfig, log_path=None,
          checkpoint_path=None, start_epoch: int = 1) -> dict:
    """Fit the model on H0 profiles (n, m); returns the per-epoch history.

    The dataset is shuffled once and split train/validation by the config
    fractions. History lists: epoch, train_loss, val_loss, rec_term,
    kl_term. Non-finite losses or gradients abort with the offending epoch
    and batch recorded on the exception. ``start_epoch`` continues the
    epoch counter when resuming a loaded checkpoint for config.epochs more
    epochs.
    """
    if start_epoch < 1:
        raise ValueError("start_epoch counts from 1")
    data = np.asarray(data, dtype=np.complex128)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError("training data must be (n >= 2, m)")
    n_total = data.shape[0]
    split_gen = derive(config.seed, "cvae", "split")
    perm = split_gen.permutation(n_total)
    n_train = int(round(config.train_frac * n_total))
    n_train = min(max(n_train, 1), n_total - 1)
    train_data = data[perm[:n_train]]
    val_data = data[perm[n_train:]]

    opt = cvnn.Adam(model.parameters(), lr=config.lr)
    order_gen = derive(config.seed, "cvae", "order")
    eps_gen = derive(config.seed, "cvae", "eps")
    history = {"epoch": [], "train_loss": [], "val_loss": [],
               "rec_term": [], "kl_term": []}

    for epoch in range(start_epoch, start_epoch + config.epochs):
        order = order_gen.permutation(n_train)
        sums = np.zeros(3)
        for bidx, start in enumerate(range(0, n_train, config.batch)):
            chunk = train_data[order[start:start + config.batch]]
            try:
                loss, rec, kl = elbo_loss(model, chunk, gen=eps_gen, training=True)
                opt.zero_grad()
                loss.backward()
                opt.step()
            except (DivergenceError, cvnn.NonFiniteGradientError) as exc:
                raise DivergenceError(
                    f"training diverged at epoch {epoch}, batch {bidx}: {exc}",
                    epoch=epoch, batch=bidx) from exc
            sums += chunk.shape[0] * np.array(
                [loss.real_item(), rec.real_item(), kl.real_item()])
        train_loss, rec_term, kl_term = (float(s) for s in sums / n_train)
        val_gen = derive(config.seed, "cvae", "val", str(epoch))
        val_loss = _mean_val_loss(model, val_data, config.batch, val_gen)
        history["epoch"].append(epoch)
        history["train_loss"].append(train_loss)
        history["val_loss"].append(val_loss)
        history["rec_term"].append(rec_term)
        history["kl_term"].append(kl_term)

    if log_path is not None:
        with open(log_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "kl_term", "rec_term"])
            for i in range(len(history["epoch"])):
                writer.writerow([history["epoch"][i],
                                 f"{history['train_loss'][i]:.10g}",
                                 f"{history['val_loss'][i]:.10g}",
                                 f"{history['kl_term'][i]:.10g}",
                                 f"{history['rec_term'][i]:.10g}"])
    if checkpoint_path is not None:
        final = ({"final_train_loss": history["train_loss"][-1],
                  "final_val_loss": history["val_loss"][-1]}
                 if history["epoch"] else {})
        epochs_done = history["epoch"][-1] if history["epoch"] else start_epoch - 1
        model.save(checkpoint_path,
                   extra_meta={"train_config": config.to_dict(),
                               "epochs_done": epochs_done, **final})
    return history
