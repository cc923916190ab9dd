"""Private aggregation of teacher gradients by discretized voting.

Each teacher's perturbation vector is projected to k dimensions, every
coordinate is mapped to one of B equal-width bins on [-c, c], teachers vote for
bins dimension by dimension, and a Confident-GNMax query picks the winning bin.
The aggregated vector is made of the winning bin midpoints (0 for rejected
dimensions) and is projected back to the original space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dpgen.accountant import PrivacyLedger
from dpgen.projection import ProjectionPair, project_down, project_up

REJECTED = -1


@dataclass(frozen=True)
class BinGrid:
    clip: float
    num_bins: int = 10

    def __post_init__(self):
        if not self.clip > 0 or not math.isfinite(self.clip):
            raise ValueError(f"clip must be positive, got {self.clip}")
        if int(self.num_bins) != self.num_bins or self.num_bins < 2:
            raise ValueError(f"num_bins must be an integer >= 2, got {self.num_bins}")

    @property
    def width(self) -> float:
        return 2.0 * self.clip / self.num_bins

    @property
    def midpoints(self) -> np.ndarray:
        j = np.arange(self.num_bins)
        return -self.clip + (j + 0.5) * self.width


def discretize(vector, grid: BinGrid) -> np.ndarray:
    """Bin index of every element after clamping to [-c, c].

    Bin j covers [-c + j w, -c + (j+1) w); the top edge c falls in the last bin.
    Works elementwise on arrays of any shape.
    """
    v = np.asarray(vector, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot discretize non-finite values")
    c = grid.clip
    v = np.clip(v, -c, c)
    idx = np.floor((v + c) / (2.0 * c) * grid.num_bins).astype(np.int64)
    return np.minimum(idx, grid.num_bins - 1)


@dataclass(frozen=True)
class VoteTally:
    counts: np.ndarray  # dims x bins

    @property
    def dims(self) -> int:
        return self.counts.shape[0]

    def top3(self) -> np.ndarray:
        """Per-dimension (n1, n2, n3), largest first; missing ranks are 0."""
        s = -np.sort(-self.counts, axis=-1)
        pad = max(0, 3 - s.shape[-1])
        if pad:
            s = np.concatenate([s, np.zeros(s.shape[:-1] + (pad,), dtype=s.dtype)], axis=-1)
        return s[..., :3]

    def to_csv(self) -> str:
        """Rows are dimensions, columns are bins."""
        header = ",".join(f"bin{j}" for j in range(self.counts.shape[1]))
        rows = [",".join(str(int(c)) for c in row) for row in self.counts]
        return "\n".join([header] + rows) + "\n"


def tally(bin_indices, num_bins: int) -> VoteTally:
    """Count votes: ``bin_indices`` is teachers x dims."""
    idx = np.asarray(bin_indices, dtype=np.int64)
    if idx.ndim == 1:
        idx = idx[:, None]
    if idx.size and (idx.min() < 0 or idx.max() >= num_bins):
        raise IndexError(f"bin index out of range 0..{num_bins - 1}")
    n, k = idx.shape
    counts = np.zeros((k, num_bins), dtype=np.int64)
    if n:
        np.add.at(counts, (np.broadcast_to(np.arange(k), (n, k)), idx), 1)
    return VoteTally(counts)


@dataclass(frozen=True)
class VoteRecord:
    """Noise-free accounting data for one Confident-GNMax query."""

    n1: int
    n2: int
    n3: int
    passed_threshold: bool


def _check_noise(sigma1: float, sigma2: float, threshold: float):
    if sigma1 < 0 or sigma2 < 0:
        raise ValueError("noise scales must be nonnegative")
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")


def _vote(counts: np.ndarray, threshold: float, sigma1: float, sigma2: float, rng) -> np.ndarray:
    """Confident-GNMax over the rows of ``counts``; REJECTED marks failed rows.

    Noise order: one threshold draw per row, then B argmax draws per passing row.
    A zero sigma disables that noise (test-only path); ties go to the lowest bin.
    """
    rows = counts.shape[0]
    top = counts.max(axis=1).astype(float)
    if sigma1 > 0:
        top = top + rng.normal(0.0, sigma1, size=rows)
    passed = top >= threshold
    winners = np.full(rows, REJECTED, dtype=np.int64)
    noisy = counts[passed].astype(float)
    if sigma2 > 0:
        noisy = noisy + rng.normal(0.0, sigma2, size=noisy.shape)
    winners[passed] = np.argmax(noisy, axis=1) if noisy.size else []
    return winners


def confident_gnmax(tally_row, threshold: float, sigma1: float, sigma2: float, rng=None) -> tuple[int | None, VoteRecord]:
    """Noisy threshold check, then noisy argmax; ``None`` stands for a rejection.

    ``threshold`` is an absolute vote count here.
    """
    _check_noise(sigma1, sigma2, threshold)
    row = np.asarray(tally_row, dtype=np.int64)[None, :]
    if rng is None and (sigma1 > 0 or sigma2 > 0):
        raise ValueError("a random generator is required when noise is enabled")
    winner = int(_vote(row, threshold, sigma1, sigma2, rng)[0])
    n1, n2, n3 = (int(x) for x in VoteTally(row).top3()[0])
    record = VoteRecord(n1, n2, n3, winner != REJECTED)
    return (None if winner == REJECTED else winner), record


def absolute_threshold(fraction: float, num_teachers: int) -> int:
    """Threshold fraction of the teacher count, rounded up to a whole vote."""
    if not 0 < fraction <= 1:
        raise ValueError(f"threshold fraction must lie in (0, 1], got {fraction}")
    return int(math.ceil(fraction * num_teachers - 1e-9))


@dataclass
class AggregationOutcome:
    """Result of aggregating one batch of records.

    ``winners`` holds bin indices (REJECTED for failed dimensions),
    ``midpoints`` the winning midpoints (NaN when rejected), ``top3`` the
    noise-free (n1, n2, n3) per dimension and ``gradient`` the back-projected
    aggregate; all but ``gradient`` and ``tally`` are records x k. ``tally``
    stacks the vote counts of every (record, dimension) query.
    """

    winners: np.ndarray
    midpoints: np.ndarray
    top3: np.ndarray
    passed: np.ndarray
    gradient: np.ndarray
    tally: VoteTally | None = None

    @property
    def pass_rate(self) -> float:
        return float(self.passed.mean()) if self.passed.size else 0.0

    @property
    def mean_vote_gap(self) -> float:
        return float((self.top3[..., 0] - self.top3[..., 1]).mean()) if self.top3.size else 0.0


def aggregate(
    gradients,
    grid: BinGrid,
    proj: ProjectionPair,
    threshold: float,
    sigma1: float,
    sigma2: float,
    ledger: PrivacyLedger | None = None,
    rng=None,
    query_prefix: str = "",
) -> AggregationOutcome:
    """Full aggregation with its per-dimension accounting record.

    ``gradients`` is teachers x d, or teachers x records x d for a batch; each
    record is aggregated independently under the same projection.
    ``threshold`` is a fraction of the teacher count.
    """
    g = np.asarray(gradients, dtype=float)
    single = g.ndim == 2
    if single:
        g = g[:, None, :]
    if g.ndim != 3:
        raise ValueError(f"gradients must be teachers x [records x] d, got shape {g.shape}")
    n, m, d = g.shape
    if d != proj.d:
        raise ValueError(f"gradient dimension {d} does not match projection input {proj.d}")
    _check_noise(sigma1, sigma2, threshold)
    if ledger is not None and (sigma1 <= 0 or sigma2 <= 0):
        raise ValueError("noise-free aggregation cannot be charged to a privacy ledger")
    t_abs = absolute_threshold(threshold, n)

    k = proj.k
    bins = discretize(project_down(g, proj), grid)  # n x m x k
    flat = bins.reshape(n, m * k)
    counts = tally(flat, grid.num_bins).counts  # (m*k) x B
    winners = _vote(counts, t_abs, sigma1, sigma2, rng)
    passed = winners != REJECTED
    top3 = VoteTally(counts).top3()

    if ledger is not None:
        for q in range(m * k):
            rec, dim = divmod(q, k)
            ledger.charge_gaussian_threshold(sigma1, f"{query_prefix}r{rec}d{dim}/thr")
            if passed[q]:
                ledger.charge_gnmax(top3[q], sigma2, f"{query_prefix}r{rec}d{dim}/argmax")

    mids = np.full(m * k, np.nan)
    mids[passed] = grid.midpoints[winners[passed]]
    agg = project_up(np.where(passed, mids, 0.0).reshape(m, k), proj)
    shape = (m, k) if not single else (k,)
    return AggregationOutcome(
        winners=winners.reshape(shape),
        midpoints=mids.reshape(shape),
        top3=top3.reshape(shape + (3,)),
        passed=passed.reshape(shape),
        gradient=agg[0] if single else agg,
        tally=VoteTally(counts),
    )


def dp_grad_agg(
    gradients,
    grid: BinGrid,
    proj: ProjectionPair,
    threshold: float,
    sigma1: float,
    sigma2: float,
    ledger: PrivacyLedger | None = None,
    rng=None,
) -> np.ndarray:
    """Privately aggregated gradient (rejected dimensions contribute 0)."""
    return aggregate(gradients, grid, proj, threshold, sigma1, sigma2, ledger, rng).gradient
