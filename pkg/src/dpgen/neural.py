"""Small fully connected networks with hand-written backpropagation.

The conditioning vector (one-hot label, possibly empty) is concatenated to the
input of every layer. Discriminators output a logit; ``D(x) = sigmoid(logit)``.
Generators end in tanh so samples live in the scaled data range [-1, 1].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

LEAKY_SLOPE = 0.2
ACTIVATIONS = ("leaky_relu", "sigmoid", "tanh", "identity")
CHECKPOINT_FORMAT = "dpgen-mlp"
CHECKPOINT_VERSION = 1


class NumericError(FloatingPointError):
    """Raised when a forward or backward pass produces non-finite values."""


def _act(name: str, a: np.ndarray) -> np.ndarray:
    if name == "leaky_relu":
        return np.where(a > 0, a, LEAKY_SLOPE * a)
    if name == "sigmoid":
        return sigmoid(a)
    if name == "tanh":
        return np.tanh(a)
    return a


def _act_grad(name: str, a: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Derivative of the activation given pre-activation a and output h."""
    if name == "leaky_relu":
        return np.where(a > 0, 1.0, LEAKY_SLOPE)
    if name == "sigmoid":
        return h * (1.0 - h)
    if name == "tanh":
        return 1.0 - h * h
    return np.ones_like(a)


def sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(a, dtype=float)))


def softplus(a):
    a = np.asarray(a, dtype=float)
    return np.logaddexp(0.0, a)


@dataclass
class Mlp:
    """Weights of a conditional MLP.

    ``sizes`` lists unconditioned widths ``[in, hidden..., out]``; layer i
    actually takes ``sizes[i] + cond_dim`` inputs.
    """

    sizes: list[int]
    activations: list[str]
    cond_dim: int = 0
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if len(self.sizes) < 2 or any(int(s) < 1 for s in self.sizes):
            raise ValueError(f"invalid layer sizes {self.sizes}")
        if len(self.activations) != len(self.sizes) - 1:
            raise ValueError("need one activation per layer")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.sizes[i] + self.cond_dim, self.sizes[i + 1]) or b.shape != (self.sizes[i + 1],):
                raise ValueError(f"layer {i} has incompatible shapes {w.shape}, {b.shape}")

    @classmethod
    def init(cls, sizes: Sequence[int], activations: Sequence[str], cond_dim: int = 0, rng=None) -> "Mlp":
        """Fan-in scaled uniform initialization."""
        rng = rng if rng is not None else np.random.default_rng(0)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in + cond_dim)
            weights.append(rng.uniform(-bound, bound, size=(fan_in + cond_dim, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(list(sizes), list(activations), cond_dim, weights, biases)

    @property
    def params(self) -> list[np.ndarray]:
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    def copy(self) -> "Mlp":
        return Mlp(
            list(self.sizes),
            list(self.activations),
            self.cond_dim,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    # -- passes ----------------------------------------------------------
    def _inputs(self, x, cond):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.cond_dim:
            cond = np.atleast_2d(np.asarray(cond, dtype=float))
            if cond.shape != (x.shape[0], self.cond_dim):
                raise ValueError(f"conditioning must be {(x.shape[0], self.cond_dim)}, got {cond.shape}")
        else:
            cond = np.zeros((x.shape[0], 0))
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"input width {x.shape[1]} != {self.sizes[0]}")
        return x, cond

    def forward(self, x, cond=None):
        """Returns (output, cache) for a batch of rows."""
        x, cond = self._inputs(x, cond)
        h = x
        cache = []
        with np.errstate(over="ignore", invalid="ignore"):
            for w, b, act in zip(self.weights, self.biases, self.activations):
                inp = np.concatenate([h, cond], axis=1) if self.cond_dim else h
                a = inp @ w + b
                h = _act(act, a)
                cache.append((inp, a, h))
        if not np.all(np.isfinite(h)):
            raise NumericError(f"non-finite network output (max |a| = {np.abs(cache[-1][1]).max():.3g})")
        return h, cache

    def __call__(self, x, cond=None) -> np.ndarray:
        return self.forward(x, cond)[0]

    def backward(self, cache, grad_out):
        """Gradients of ``sum(grad_out * output)``.

        Returns (param_grads, input_grad); ``param_grads`` follows :attr:`params`
        order and ``input_grad`` excludes the conditioning columns.
        """
        grads_w, grads_b = [], []
        g = np.asarray(grad_out, dtype=float)
        for (inp, a, h), w, act in zip(reversed(cache), reversed(self.weights), reversed(self.activations)):
            ga = g * _act_grad(act, a, h)
            grads_w.append(inp.T @ ga)
            grads_b.append(ga.sum(axis=0))
            g = (ga @ w.T)[:, : w.shape[0] - self.cond_dim]
        grads_w.reverse()
        grads_b.reverse()
        if not all(np.all(np.isfinite(x)) for x in grads_w + grads_b) or not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient in backward pass")
        return [p for wb in zip(grads_w, grads_b) for p in wb], g

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "numpy": np.__version__,
            "sizes": list(self.sizes),
            "cond_dim": self.cond_dim,
            "activations": list(self.activations),
            "params": [p.ravel().tolist() for p in self.params],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Mlp":
        if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError("not a version-1 dpgen-mlp checkpoint")
        sizes, cond = doc["sizes"], doc["cond_dim"]
        flat = doc["params"]
        weights, biases = [], []
        for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
            weights.append(np.array(flat[2 * i], dtype=float).reshape(fi + cond, fo))
            biases.append(np.array(flat[2 * i + 1], dtype=float).reshape(fo))
        return cls(list(sizes), list(doc["activations"]), cond, weights, biases)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "Mlp":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def make_generator(noise_dim: int, data_dim: int, cond_dim: int = 0, hidden=(64, 64), rng=None) -> Mlp:
    sizes = [noise_dim, *hidden, data_dim]
    acts = ["leaky_relu"] * len(hidden) + ["tanh"]
    return Mlp.init(sizes, acts, cond_dim, rng)


def make_discriminator(data_dim: int, cond_dim: int = 0, hidden=(64, 64), rng=None) -> Mlp:
    sizes = [data_dim, *hidden, 1]
    acts = ["leaky_relu"] * len(hidden) + ["identity"]
    return Mlp.init(sizes, acts, cond_dim, rng)


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """In-place update of ``params``."""
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def disc_loss(d: Mlp, x, is_real: bool, cond=None, generator_facing: bool = False) -> float:
    """Mean discriminator loss over the rows of ``x``.

    ``generator_facing=True`` gives the non-saturating ``-log D(x)``; otherwise
    binary cross-entropy with label 1 for real rows and 0 for fake rows.
    Evaluated on the logit, so no probability clamping is needed.
    """
    logit = d(x, cond)[:, 0]
    if generator_facing or is_real:
        return float(softplus(-logit).mean())
    return float(softplus(logit).mean())


def adversarial_perturbation(d: Mlp, x, cond=None, clip: float = 1e-4) -> np.ndarray:
    """Per-record perturbation that raises the discriminator's loss on fakes.

    Equals ``-d(-log D(x))/dx`` (the non-saturating direction that increases
    D(x)), clamped elementwise to [-clip, clip].
    """
    out, cache = d.forward(x, cond)
    # d/dlogit of -log sigmoid(logit) is -(1 - D); negate for the ascent direction.
    grad_logit = 1.0 - sigmoid(cache[-1][1])
    _, gx = d.backward(cache, grad_logit)
    return np.clip(gx, -clip, clip)


def teacher_step(d: Mlp, real_batch, fake_batch, opt: Adam, real_cond=None, fake_cond=None) -> float:
    """One Adam step on BCE over the concatenated real and fake rows; returns the loss."""
    real_batch = np.atleast_2d(real_batch)
    fake_batch = np.atleast_2d(fake_batch)
    if not len(real_batch) or not len(fake_batch):
        raise ValueError("teacher_step needs nonempty real and fake batches")
    x = np.concatenate([real_batch, fake_batch])
    cond = None
    if d.cond_dim:
        cond = np.concatenate([np.atleast_2d(real_cond), np.atleast_2d(fake_cond)])
    y = np.concatenate([np.ones(len(real_batch)), np.zeros(len(fake_batch))])
    out, cache = d.forward(x, cond)
    logit = cache[-1][1][:, 0]
    loss = float(np.mean(y * softplus(-logit) + (1 - y) * softplus(logit)))
    grad = ((sigmoid(logit) - y) / len(y))[:, None]
    grads, _ = d.backward(cache, grad)
    opt.step(d.params, grads)
    return loss


@dataclass
class CondInputs:
    """Generator inputs: noise rows and matching one-hot labels (or None)."""

    z: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.z = np.atleast_2d(np.asarray(self.z, dtype=float))
        if self.labels is not None:
            lab = np.atleast_2d(np.asarray(self.labels, dtype=float))
            if lab.size and not np.allclose(lab.sum(axis=1), 1.0):
                raise ValueError("labels must be one-hot rows")
            self.labels = lab


def mse_loss(out, x_hat) -> float:
    """Batch mean of (1/k) sum_i (out_i - x_hat_i)^2."""
    out, x_hat = np.asarray(out), np.asarray(x_hat)
    return float(np.mean(np.mean((out - x_hat) ** 2, axis=1)))


def generator_step(g: Mlp, z_batch: CondInputs, x_hat, opt: Adam) -> float:
    """One Adam step on the MSE toward ``x_hat``; returns the loss before the step."""
    out, cache = g.forward(z_batch.z, z_batch.labels)
    x_hat = np.asarray(x_hat, dtype=float)
    if x_hat.shape != out.shape:
        raise ValueError(f"target shape {x_hat.shape} does not match generator output {out.shape}")
    m, k = out.shape
    loss = mse_loss(out, x_hat)
    grads, _ = g.backward(cache, 2.0 * (out - x_hat) / (k * m))
    opt.step(g.params, grads)
    return loss
