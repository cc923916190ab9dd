"""Renyi-DP accounting for the noisy voting queries.

All epsilons are in nats. The ledger tracks three kinds of charges:

* ``gaussian-threshold``: the noisy max-count check, ``(lam, lam / (2 sigma^2))``-RDP.
* ``gnmax-data-dependent``: the noisy argmax. Charged with the data-dependent
  bound when the vote gaps are wide enough, otherwise with the data-independent
  Gaussian argmax cost ``lam / sigma^2``.
* ``laplace``: pure epsilon-DP releases, added after the RDP -> DP conversion.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

GAUSSIAN_THRESHOLD = "gaussian-threshold"
GNMAX = "gnmax-data-dependent"
LAPLACE = "laplace"
KINDS = (GAUSSIAN_THRESHOLD, GNMAX, LAPLACE)

DEFAULT_ORDERS: tuple[float, ...] = (1.5,) + tuple(float(o) for o in range(2, 65)) + (
    128.0,
    256.0,
    512.0,
    1024.0,
)

# The data-dependent GNMax bound is only used when both vote gaps are at
# least GATE_SIGMAS noise standard deviations and the order is >= MIN_DD_ORDER.
GATE_SIGMAS = 4.0
MIN_DD_ORDER = 2.0


@dataclass(frozen=True)
class RdpCurve:
    """RDP epsilons at a strictly increasing list of orders (all > 1)."""

    orders: tuple[float, ...]
    epsilons: tuple[float, ...]

    def __post_init__(self):
        orders = tuple(float(o) for o in self.orders)
        eps = tuple(float(e) for e in self.epsilons)
        if len(orders) != len(eps):
            raise ValueError("orders and epsilons must have equal length")
        if any(o <= 1 or not math.isfinite(o) for o in orders):
            raise ValueError("RDP orders must be finite and > 1")
        if any(b <= a for a, b in zip(orders, orders[1:])):
            raise ValueError("RDP orders must be strictly increasing")
        if any(e < 0 or math.isnan(e) for e in eps):
            raise ValueError("RDP epsilons must be nonnegative")
        object.__setattr__(self, "orders", orders)
        object.__setattr__(self, "epsilons", eps)

    @classmethod
    def zeros(cls, orders: Sequence[float] = DEFAULT_ORDERS) -> "RdpCurve":
        return cls(tuple(orders), (0.0,) * len(orders))

    def __len__(self):
        return len(self.orders)


@dataclass(frozen=True)
class DpGuarantee:
    """An (epsilon, delta)-DP statement and the Renyi order that produced it.

    ``witness_order`` is None only for an empty ledger, where nothing about the
    data has been released and ``epsilon`` is 0.
    """

    epsilon: float
    delta: float
    witness_order: float | None

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.epsilon < 0 or math.isnan(self.epsilon):
            raise ValueError(f"epsilon must be nonnegative, got {self.epsilon}")


def _check_orders(orders: Iterable[float]) -> np.ndarray:
    arr = np.asarray(list(orders), dtype=float)
    if arr.size == 0 or np.any(arr <= 1) or not np.all(np.isfinite(arr)):
        raise ValueError("orders must be finite and > 1")
    return arr


def _check_sigma(sigma: float) -> float:
    sigma = float(sigma)
    if not sigma > 0 or not math.isfinite(sigma):
        raise ValueError(f"sigma must be a positive finite number, got {sigma}")
    return sigma


def gaussian_threshold_rdp(sigma: float, orders: Sequence[float] = DEFAULT_ORDERS) -> RdpCurve:
    """RDP curve of a sensitivity-1 Gaussian query: ``lam / (2 sigma^2)``."""
    sigma = _check_sigma(sigma)
    lam = _check_orders(orders)
    return RdpCurve(tuple(lam), tuple(lam / (2.0 * sigma * sigma)))


def gnmax_fallback_rdp(sigma: float, orders: Sequence[float] = DEFAULT_ORDERS) -> RdpCurve:
    """Data-independent GNMax cost ``lam / sigma^2`` (count vector has L2 sensitivity sqrt(2))."""
    sigma = _check_sigma(sigma)
    lam = _check_orders(orders)
    return RdpCurve(tuple(lam), tuple(lam / (sigma * sigma)))


def gnmax_data_dependent_rdp(vote_counts: Sequence[float], sigma: float) -> RdpCurve | None:
    """Data-dependent GNMax bound at the single order ``(n1 - n2) / 4``.

    ``vote_counts`` holds the top counts in descending order; a missing third
    count is treated as 0. Returns ``None`` when the gap gate fails, in which
    case the caller should charge :func:`gnmax_fallback_rdp` instead.
    """
    sigma = _check_sigma(sigma)
    counts = [float(c) for c in vote_counts]
    if len(counts) < 2:
        raise ValueError("need at least the top two vote counts")
    counts = (counts + [0.0])[:3] if len(counts) == 2 else counts[:3]
    n1, n2, n3 = counts
    if min(counts) < 0:
        raise ValueError("vote counts must be nonnegative")
    if not n1 >= n2 >= n3:
        raise ValueError(f"vote counts must be sorted descending, got {counts}")
    lam = (n1 - n2) / 4.0
    if n1 - n2 < GATE_SIGMAS * sigma or n2 - n3 < GATE_SIGMAS * sigma or lam < MIN_DD_ORDER:
        return None
    return RdpCurve((lam,), (math.exp(-2.0 * lam / sigma**2) / lam,))


def to_dp(curve: RdpCurve, delta: float) -> DpGuarantee:
    """Convert RDP to (eps, delta)-DP, minimizing ``eps(lam) + ln(1/delta) / (lam - 1)``.

    Ties go to the smaller order.
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if len(curve) == 0:
        raise ValueError("cannot convert an empty RDP curve")
    lam = np.asarray(curve.orders)
    total = np.asarray(curve.epsilons) + math.log(1.0 / delta) / (lam - 1.0)
    i = int(np.argmin(total))
    return DpGuarantee(float(total[i]), float(delta), float(lam[i]))


@dataclass(frozen=True)
class LedgerEntry:
    query_id: str
    kind: str
    sigma: float | None
    # data-dependent (order, epsilon) for GNMax entries whose gate passed
    dd_order: float | None = None
    dd_epsilon: float | None = None
    # pure epsilon for Laplace entries
    pure_epsilon: float | None = None

    def rdp_at(self, orders) -> np.ndarray:
        """This entry's RDP epsilon at each of ``orders`` (tightest bound valid there)."""
        lam = np.asarray(orders, dtype=float)
        if self.kind == GAUSSIAN_THRESHOLD:
            return lam / (2.0 * self.sigma**2)
        if self.kind == GNMAX:
            eps = lam / self.sigma**2
            if self.dd_order is not None:
                # Renyi divergence is nondecreasing in the order, so the bound
                # proven at dd_order also holds at every smaller order.
                eps = np.where(lam <= self.dd_order, np.minimum(eps, self.dd_epsilon), eps)
            return eps
        return np.zeros_like(lam)


@dataclass
class PrivacyLedger:
    """Append-only record of privacy charges.

    Appends are serialized by an internal lock; :meth:`composed` returns an
    immutable snapshot so concurrent readers never see a half-applied entry.
    """

    base_orders: tuple[float, ...] = DEFAULT_ORDERS
    entries: list[LedgerEntry] = field(default_factory=list)

    def __post_init__(self):
        self._lock = threading.Lock()
        self._grid = np.array(sorted(set(float(o) for o in self.base_orders)))
        self._sums = np.zeros_like(self._grid)
        self._laplace = 0.0
        self._counter = 0
        existing, self.entries = self.entries, []
        for e in existing:
            self._append(e)

    # -- appends -------------------------------------------------------
    def _next_id(self, prefix: str) -> str:
        self._counter += 1
        return f"{prefix}{self._counter}"

    def _append(self, entry: LedgerEntry) -> LedgerEntry:
        with self._lock:
            lam = entry.dd_order
            if lam is not None and lam not in self._grid:
                back = 0.0
                for e in self.entries:
                    back += float(e.rdp_at([lam])[0])
                i = int(np.searchsorted(self._grid, lam))
                grid = np.insert(self._grid, i, lam)
                sums = np.insert(self._sums, i, back)
                self._grid, self._sums = grid, sums
            if entry.kind == LAPLACE:
                self._laplace += entry.pure_epsilon
            else:
                self._sums = self._sums + entry.rdp_at(self._grid)
            self.entries.append(entry)
        return entry

    def charge_gaussian_threshold(self, sigma: float, query_id: str | None = None) -> LedgerEntry:
        sigma = _check_sigma(sigma)
        qid = query_id or self._next_id("thr-")
        return self._append(LedgerEntry(qid, GAUSSIAN_THRESHOLD, sigma))

    def charge_gnmax(self, vote_counts: Sequence[float], sigma: float, query_id: str | None = None) -> LedgerEntry:
        bound = gnmax_data_dependent_rdp(vote_counts, sigma)
        qid = query_id or self._next_id("gnmax-")
        if bound is None:
            return self._append(LedgerEntry(qid, GNMAX, float(sigma)))
        return self._append(
            LedgerEntry(qid, GNMAX, float(sigma), dd_order=bound.orders[0], dd_epsilon=bound.epsilons[0])
        )

    def charge_laplace(self, epsilon: float, query_id: str | None = None) -> LedgerEntry:
        """Record a pure epsilon-DP release (basic composition after conversion)."""
        return self._append(laplace_rdp_or_dp(epsilon, query_id or self._next_id("laplace-")))

    # -- reads ---------------------------------------------------------
    @property
    def laplace_epsilon(self) -> float:
        return self._laplace

    def __len__(self):
        return len(self.entries)

    def composed(self, orders: Sequence[float] | None = None) -> RdpCurve:
        """Pointwise sum of every RDP entry, on the ledger's grid or on ``orders``."""
        if orders is not None:
            return compose(self.entries, orders)
        with self._lock:
            grid, sums = self._grid, self._sums
        return RdpCurve(tuple(grid.tolist()), tuple(sums.tolist()))

    def has_rdp_entries(self) -> bool:
        return any(e.kind != LAPLACE for e in self.entries)

    def guarantee(self, delta: float) -> DpGuarantee:
        """Final (eps, delta): RDP part converted, then Laplace epsilons added."""
        if not self.entries:
            return DpGuarantee(0.0, float(delta), None)
        if not self.has_rdp_entries():
            return DpGuarantee(self._laplace, float(delta), None)
        g = to_dp(self.composed(), delta)
        return DpGuarantee(g.epsilon + self._laplace, g.delta, g.witness_order)

    def report(self, delta: float) -> dict:
        """Privacy report document (see README for the schema)."""
        final = self.guarantee(delta)
        curve = self.composed()
        lam = final.witness_order
        queries = []
        for e in self.entries:
            if e.kind == LAPLACE:
                queries.append(
                    {"id": e.query_id, "kind": e.kind, "sigma": None, "lambda": None, "epsilon_rdp": e.pure_epsilon}
                )
            else:
                eps = float(e.rdp_at([lam])[0]) if lam is not None else None
                queries.append({"id": e.query_id, "kind": e.kind, "sigma": e.sigma, "lambda": lam, "epsilon_rdp": eps})
        return {
            "queries": queries,
            "composed": {"orders": list(curve.orders), "epsilons": list(curve.epsilons)},
            "final": {
                "epsilon": final.epsilon,
                "delta": final.delta,
                "witness_order": final.witness_order,
                "laplace_extra": self._laplace,
            },
        }

    def dumps_report(self, delta: float) -> str:
        return json.dumps(self.report(delta), indent=1, sort_keys=False)


def laplace_rdp_or_dp(epsilon_pure: float, query_id: str = "laplace") -> LedgerEntry:
    """Ledger entry for a pure epsilon-DP release."""
    epsilon_pure = float(epsilon_pure)
    if not epsilon_pure > 0 or not math.isfinite(epsilon_pure):
        raise ValueError(f"Laplace epsilon must be positive, got {epsilon_pure}")
    return LedgerEntry(query_id, LAPLACE, None, pure_epsilon=epsilon_pure)


def compose(ledger: PrivacyLedger | Sequence[LedgerEntry], orders: Sequence[float] | None = None) -> RdpCurve:
    """Sum RDP costs order by order. An empty ledger gives the zero curve.

    Without ``orders`` the grid is the default orders plus every
    data-dependent order present in the entries.
    """
    entries = ledger.entries if isinstance(ledger, PrivacyLedger) else list(ledger)
    if orders is None:
        grid = set(ledger.base_orders if isinstance(ledger, PrivacyLedger) else DEFAULT_ORDERS)
        grid.update(e.dd_order for e in entries if e.dd_order is not None)
        orders = sorted(grid)
    lam = _check_orders(orders)
    total = np.zeros_like(lam)
    for e in entries:
        total += e.rdp_at(lam)
    return RdpCurve(tuple(lam), tuple(total))
