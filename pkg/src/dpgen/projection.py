"""Gaussian random projection used around the private vote.

Forward entries are i.i.d. N(0, 1/k), which makes the transpose an unbiased
inverse in expectation: E[P^T P] = I. The projection is data independent and
costs no privacy budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ProjectionPair:
    forward: np.ndarray  # k x d
    backward: np.ndarray  # d x k
    seed: int | None = None

    def __post_init__(self):
        k, d = self.forward.shape
        if self.backward.shape != (d, k):
            raise ValueError(f"backward must be {(d, k)}, got {self.backward.shape}")
        if not 1 <= k <= d:
            raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
        self.forward.setflags(write=False)
        self.backward.setflags(write=False)

    @property
    def d(self) -> int:
        return self.forward.shape[1]

    @property
    def k(self) -> int:
        return self.forward.shape[0]

    @classmethod
    def identity(cls, d: int) -> "ProjectionPair":
        """k = d pair with both maps equal to the identity (for tests)."""
        eye = np.eye(d)
        return cls(eye, eye.copy(), None)


def make_projection(d: int, k: int, seed: int, backward: str = "transpose") -> ProjectionPair:
    """Draw a k x d Gaussian projection from ``seed``.

    ``backward`` selects the back-projection: ``"transpose"`` (default) or
    ``"pinv"`` for the Moore-Penrose pseudo-inverse.
    """
    d, k = int(d), int(k)
    if not 1 <= k <= d:
        raise ValueError(f"projection needs 1 <= k <= d, got k={k}, d={d}")
    rng = np.random.Generator(np.random.PCG64(seed))
    forward = rng.normal(0.0, np.sqrt(1.0 / k), size=(k, d))
    if backward == "transpose":
        back = forward.T.copy()
    elif backward == "pinv":
        back = np.linalg.pinv(forward)
    else:
        raise ValueError(f"unknown back-projection {backward!r}")
    return ProjectionPair(forward, back, seed)


def project_down(v, p: ProjectionPair) -> np.ndarray:
    """``forward @ v``; ``v`` may carry leading batch axes, last axis length d."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1:] != (p.d,):
        raise ValueError(f"expected trailing dimension {p.d}, got shape {v.shape}")
    return v @ p.forward.T


def project_up(u, p: ProjectionPair) -> np.ndarray:
    """``backward @ u``; last axis length k."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1:] != (p.k,):
        raise ValueError(f"expected trailing dimension {p.k}, got shape {u.shape}")
    return u @ p.backward.T
