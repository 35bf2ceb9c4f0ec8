"""Partial identification of the average IFR from asymptotic signals.

In the large-data limit each group reveals ``a = IFR * IR`` (death rate) and
``b = 1 - (1 - IR)^phi`` (test positivity).  Given bounds on ``phi`` the IFR
of a group is confined to an interval; combining groups under a cap on the
cross-group IFR standard deviation gives an interval for the average IFR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class GroupSignal:
    a: float
    b: float
    phi_lo: float = 1.0
    phi_hi: float = 1.0

    def __post_init__(self):
        if not self.a > 0:
            raise DomainError("a must be positive")
        if not self.b > 0:
            raise DomainError("b must be positive")
        if not 0 < self.phi_lo <= self.phi_hi:
            raise DomainError("need 0 < phi_lo <= phi_hi")


@dataclass(frozen=True)
class IdentInterval:
    """Closed interval; ``empty=True`` marks an empty set (bounds are then nan)."""

    lower: float
    upper: float
    empty: bool = False

    def __post_init__(self):
        if not self.empty and self.lower > self.upper:
            raise DomainError("lower must not exceed upper")

    @classmethod
    def empty_set(cls):
        return cls(math.nan, math.nan, empty=True)

    @property
    def width(self):
        return 0.0 if self.empty else self.upper - self.lower

    def contains(self, x, tol=0.0):
        return (not self.empty) and self.lower - tol <= x <= self.upper + tol


@dataclass
class GlobalProblem:
    """Identification problem for the average IFR.

    ``ddof=1`` measures heterogeneity with the sample variance (divisor
    K - 1); ``ddof=0`` uses the population variance.
    """

    signals: Sequence[GroupSignal]
    tau_bar: float = 0.0
    grid_step: float = 1e-4
    ddof: int = 1
    refine: bool = False

    def __post_init__(self):
        if len(self.signals) < 1:
            raise DomainError("at least one signal is required")
        if self.tau_bar < 0:
            raise DomainError("tau_bar must be non-negative")
        if not self.grid_step > 0:
            raise DomainError("grid_step must be positive")
        if self.ddof not in (0, 1):
            raise DomainError("ddof must be 0 or 1")


def ifr_of_phi(a: float, b: float, phi: float) -> float:
    """IFR implied by signals (a, b) at preferentiality phi: a / (1 - (1 - b)^(1/phi))."""
    if b <= 0:
        raise DomainError("b must be positive")
    if not phi > 0 or not a > 0:
        raise DomainError("need a > 0 and phi > 0")
    if b >= 1:
        return a
    return a / -math.expm1(math.log1p(-b) / phi)


def group_interval(signal: GroupSignal) -> IdentInterval:
    s = signal
    return IdentInterval(ifr_of_phi(s.a, s.b, s.phi_lo), ifr_of_phi(s.a, s.b, s.phi_hi))


def global_interval_tau0(intervals: Sequence[IdentInterval]) -> IdentInterval:
    """Intersection of the group intervals."""
    if len(intervals) == 0:
        raise DomainError("at least one interval is required")
    if any(iv.empty for iv in intervals):
        return IdentInterval.empty_set()
    lo = max(iv.lower for iv in intervals)
    hi = min(iv.upper for iv in intervals)
    return IdentInterval(lo, hi) if lo <= hi else IdentInterval.empty_set()


def _bounds(boxes):
    lo = np.array([b.lower for b in boxes], dtype=float)
    hi = np.array([b.upper for b in boxes], dtype=float)
    return lo, hi


def project_mean(x: float, lo: np.ndarray, hi: np.ndarray, tol: float = 1e-12):
    """Closest point to the constant vector x inside the box with mean x.

    The minimiser has the form clamp(x + mu, lo, hi); ``mu`` solves the
    monotone mean equation by bisection.  Returns ``None`` if infeasible.
    """
    k = lo.size
    if k * x < lo.sum() - 1e-12 * max(1.0, abs(lo.sum())) or k * x > hi.sum() + 1e-12 * max(1.0, abs(hi.sum())):
        return None
    if np.all(lo <= x) and np.all(x <= hi):
        return np.full(k, float(x))
    a = float(np.min(lo - x)) - 1.0
    b = float(np.max(hi - x)) + 1.0
    scale = max(hi.max() - lo.min(), abs(x), 1e-300)
    for _ in range(200):
        mid = 0.5 * (a + b)
        if np.clip(x + mid, lo, hi).mean() < x:
            a = mid
        else:
            b = mid
        if b - a <= tol * scale:
            break
    return np.clip(x + 0.5 * (a + b), lo, hi)


def min_variance_at_mean(x: float, boxes: Sequence[IdentInterval], ddof: int = 0) -> float:
    """Minimal variance of f over f_k in box k subject to mean(f) = x.

    ``ddof=0`` gives (1/K) sum (f_k - x)^2, ``ddof=1`` divides by K - 1.
    Returns ``inf`` when no such f exists.
    """
    if any(b.empty for b in boxes):
        return math.inf
    lo, hi = _bounds(boxes)
    f = project_mean(x, lo, hi)
    if f is None:
        return math.inf
    k = lo.size
    if k - ddof <= 0:
        return 0.0
    return float(np.sum((f - x) ** 2) / (k - ddof))


def _member(x, boxes, tau_bar, ddof):
    return min_variance_at_mean(x, boxes, ddof) <= tau_bar * tau_bar * (1 + 1e-12) + 1e-300


def _start_point(boxes, tau_bar, ddof):
    """A point of minimal min-variance; feasible iff the problem is."""
    inter = global_interval_tau0(boxes)
    if not inter.empty:
        return 0.5 * (inter.lower + inter.upper)
    lo, hi = _bounds(boxes)
    a, b = lo.mean(), hi.mean()
    # min-variance is convex in x on [mean(lo), mean(hi)]
    for _ in range(200):
        m1 = a + (b - a) / 3
        m2 = b - (b - a) / 3
        if min_variance_at_mean(m1, boxes, ddof) <= min_variance_at_mean(m2, boxes, ddof):
            b = m2
        else:
            a = m1
    return 0.5 * (a + b)


def _scan(x0, direction, boxes, tau_bar, ddof, step, refine):
    last = x0
    n = 1
    while True:
        x = x0 + direction * n * step
        if not _member(x, boxes, tau_bar, ddof):
            break
        last = x
        n += 1
    if not refine:
        return last
    a, b = last, last + direction * step
    for _ in range(60):
        mid = 0.5 * (a + b)
        if _member(mid, boxes, tau_bar, ddof):
            a = mid
        else:
            b = mid
    return a


def global_interval(problem: GlobalProblem) -> IdentInterval:
    """Set of average-IFR values compatible with every group and SD(IFR) <= tau_bar.

    Scans outward in steps of ``grid_step`` from a feasible interior point
    until membership fails.  Endpoints are the last passing grid points
    (bisected further when ``refine`` is set).  With ``tau_bar = 0`` the
    intersection of group intervals is returned exactly.
    """
    boxes = [group_interval(s) for s in problem.signals]
    if problem.tau_bar == 0:
        return global_interval_tau0(boxes)
    x0 = _start_point(boxes, problem.tau_bar, problem.ddof)
    if not _member(x0, boxes, problem.tau_bar, problem.ddof):
        return IdentInterval.empty_set()
    lo = _scan(x0, -1.0, boxes, problem.tau_bar, problem.ddof, problem.grid_step, problem.refine)
    hi = _scan(x0, 1.0, boxes, problem.tau_bar, problem.ddof, problem.grid_step, problem.refine)
    return IdentInterval(lo, hi)


def ifr_heterogeneity_sd(ifr: Sequence[float], ddof: int = 1) -> float:
    """Cross-group standard deviation of IFR values."""
    return float(np.std(np.asarray(ifr, dtype=float), ddof=ddof))


# ---------------------------------------------------------------------------
# illustrative 12-group example


@dataclass(frozen=True)
class ExampleTable:
    population: np.ndarray
    tests: np.ndarray
    deaths: np.ndarray
    confirmed: dict  # gamma -> CC column
    infections: np.ndarray
    ir: np.ndarray
    ifr: np.ndarray
    phi: dict = field(default_factory=dict)  # gamma -> phi column


def load_example_table() -> ExampleTable:
    """The bundled 12-group illustrative dataset."""
    text = resources.files("ifrpref").joinpath("data/table1.csv").read_text()
    rows = np.genfromtxt(text.splitlines(), delimiter=",", names=True)
    cc = {g: rows[f"cc_gamma{g}"].astype(int) for g in (0, 4, 11, 22)}
    phi = {0: np.ones(rows.size)}
    phi.update({g: rows[f"phi_gamma{g}"].astype(float) for g in (4, 11, 22)})
    return ExampleTable(population=rows["population"].astype(int), tests=rows["tests"].astype(int),
                        deaths=rows["deaths"].astype(int), confirmed=cc,
                        infections=rows["infections"].astype(int), ir=rows["ir"].astype(float),
                        ifr=rows["ifr"].astype(float), phi=phi)


def example_signals(gamma: int, ifr: float | None = 0.02, phi_bounds=(1.0, 40.0)):
    """Asymptotic signals for the illustrative example.

    ``a_k = IFR_k IR_k`` and ``b_k = 1 - (1 - IR_k)^phi_k`` with the IR and
    phi columns of the table.  By default every group has IFR ``ifr``; pass
    ``ifr=None`` to use the table's own IFR column.
    """
    tab = load_example_table()
    if gamma not in tab.phi:
        raise DomainError(f"gamma must be one of {sorted(tab.phi)}")
    ifr_k = tab.ifr if ifr is None else np.full(tab.ir.size, float(ifr))
    a = ifr_k * tab.ir
    b = -np.expm1(tab.phi[gamma] * np.log1p(-tab.ir))
    return [GroupSignal(float(ai), float(bi), *phi_bounds) for ai, bi in zip(a, b)]
