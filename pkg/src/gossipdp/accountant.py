"""(ε, δ) guarantees of the Gaussian mechanism and its compositions."""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.special import log_ndtr, ndtr

from gossipdp.errors import ParameterError

DEFAULT_DELTA = 1e-5


@dataclasses.dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float
    sigma: float
    rounds: int = 1

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ParameterError(f"delta must lie in [0, 1], got {self.delta}")
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be positive, got {self.sigma}")
        if self.rounds < 1:
            raise ParameterError(f"rounds must be >= 1, got {self.rounds}")


@dataclasses.dataclass(frozen=True, eq=False)
class GuaranteeTable:
    """Pairwise ε at a fixed δ; entry ``(i, j)`` is node ``j`` seen from ``i``."""

    epsilon: np.ndarray
    sensitivity: np.ndarray
    sigma: float
    delta: float

    def _values(self, ordered: bool = True) -> np.ndarray:
        n = self.epsilon.shape[0]
        mask = ~np.eye(n, dtype=bool)
        if not ordered:
            mask &= np.triu(np.ones((n, n), dtype=bool), 1)
        return self.epsilon[mask]

    @property
    def mean(self) -> float:
        return float(self._values().mean())

    @property
    def min(self) -> float:
        return float(self._values().min())

    @property
    def max(self) -> float:
        return float(self._values().max())

    def mean_unordered(self) -> float:
        """Mean over pairs ``i < j`` of ``(ε_{i←j} + ε_{j←i}) / 2``."""
        sym = (self.epsilon + self.epsilon.T) / 2
        n = sym.shape[0]
        return float(sym[np.triu_indices(n, 1)].mean())

    def to_csv(self) -> str:
        lines = ["i,j,delta_sens,epsilon"]
        n = self.epsilon.shape[0]
        for i in range(n):
            for j in range(n):
                if i != j:
                    lines.append(f"{i},{j},{float(self.sensitivity[i, j])!r},{float(self.epsilon[i, j])!r}")
        lines.append(f"# summary: mean={self.mean!r} min={self.min!r} max={self.max!r} "
                     f"mean_unordered={self.mean_unordered()!r} sigma={self.sigma!r} delta={self.delta!r}")
        return "\n".join(lines) + "\n"


def _check(delta_sens: float, sigma: float, rounds: int) -> None:
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    if delta_sens < 0:
        raise ParameterError(f"sensitivity must be non-negative, got {delta_sens}")
    if rounds < 1:
        raise ParameterError(f"rounds must be >= 1, got {rounds}")


def gauss_delta(delta_sens: float, sigma: float, rounds: int, epsilon: float) -> float:
    """Tight δ(ε) of ``rounds`` adaptively composed Gaussian mechanisms.

    With ``μ = √T·Δ/σ`` this is ``Φ(-ε/μ + μ/2) - e^ε Φ(-ε/μ - μ/2)``; the
    second term is evaluated as ``exp(ε + log Φ(·))`` so that large ε neither
    overflows nor loses the tail.
    """
    _check(delta_sens, sigma, rounds)
    mu = math.sqrt(rounds) * delta_sens / sigma
    if mu == 0.0:
        return 0.0 if epsilon >= 0 else -math.expm1(epsilon)
    a = -epsilon / mu + mu / 2
    b = a - mu
    value = float(ndtr(a)) - math.exp(epsilon + float(log_ndtr(b)))
    return min(1.0, max(0.0, value))


def epsilon_for_delta(delta_sens: float, sigma: float, rounds: int, target_delta: float, rtol: float = 1e-9) -> float:
    """Smallest ε ≥ 0 with ``gauss_delta(ε) ≤ target_delta``, by bisection."""
    _check(delta_sens, sigma, rounds)
    if not 0.0 < target_delta < 1.0:
        raise ParameterError(f"target delta must lie in (0, 1), got {target_delta}")

    def f(eps: float) -> float:
        return gauss_delta(delta_sens, sigma, rounds, eps)

    if f(0.0) <= target_delta:
        return 0.0
    lo, hi = 0.0, 1.0
    while f(hi) > target_delta:
        lo, hi = hi, 2.0 * hi
    while hi - lo > rtol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if f(mid) > target_delta:
            lo = mid
        else:
            hi = mid
    return hi


def ldp_epsilon(sigma: float, rounds: int, target_delta: float) -> float:
    """Baseline where each node's noised contribution is seen directly every round."""
    return epsilon_for_delta(1.0, sigma, rounds, target_delta)


def central_sigma_for_epsilon(epsilon: float, rounds: int, target_delta: float, hi: float = 1e4) -> float:
    """Noise multiplier σ with ``ldp_epsilon(σ, rounds, δ) = epsilon`` (bisection on log σ)."""
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    lo = 1e-6
    if ldp_epsilon(hi, rounds, target_delta) > epsilon:
        raise ParameterError(f"epsilon {epsilon} needs sigma above {hi}")
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if ldp_epsilon(mid, rounds, target_delta) > epsilon:
            lo = mid
        else:
            hi = mid
        if hi / lo - 1 < 1e-12:
            break
    return hi


def guarantee_table(sens: np.ndarray, sigma: float, target_delta: float = DEFAULT_DELTA) -> GuaranteeTable:
    """Elementwise ε for a pairwise sensitivity matrix (diagonal ignored).

    The sensitivities already encode the whole trajectory, so each entry is a
    single Gaussian mechanism.
    """
    sens = np.asarray(sens, dtype=float)
    n = sens.shape[0]
    eps = np.full((n, n), np.nan)
    cache: dict[float, float] = {}
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            d = float(sens[i, j])
            if d not in cache:
                cache[d] = epsilon_for_delta(d, sigma, 1, target_delta)
            eps[i, j] = cache[d]
    return GuaranteeTable(eps, sens, sigma, target_delta)


def mean_epsilon(sens: np.ndarray, sigma: float, target_delta: float = DEFAULT_DELTA) -> float:
    return guarantee_table(sens, sigma, target_delta).mean
