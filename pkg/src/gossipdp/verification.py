"""Independent oracles for the accounting machinery.

None of these share code paths with :mod:`gossipdp.accountant` or the Gram
route in :mod:`gossipdp.sensitivity`: the Gaussian divergence is integrated
numerically, projected mechanisms are sampled in the full noise space, and
worst-case perturbations are enumerated.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import math
from typing import Sequence

import numpy as np
from scipy import integrate

from gossipdp.errors import ParameterError, RangeError, ResourceError

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def numeric_gauss_delta(mu: float, epsilon: float) -> float:
    """``∫ [N(μ,1)(t) - e^ε N(0,1)(t)]_+ dt`` by adaptive quadrature.

    The integrand is positive exactly for ``t > ε/μ + μ/2``; it is written as
    ``φ(t-μ)·(1 - e^{ε - μt + μ²/2})`` to avoid cancellation near the threshold.
    """
    if mu < 0:
        raise ParameterError(f"mu must be non-negative, got {mu}")
    if mu == 0.0:
        return max(0.0, -math.expm1(epsilon))
    lo = epsilon / mu + mu / 2
    hi = mu + 40.0
    if lo >= hi:
        return 0.0

    def f(t: float) -> float:
        return math.exp(-0.5 * (t - mu) ** 2) / _SQRT_2PI * -math.expm1(epsilon - mu * t + 0.5 * mu * mu)

    points = [mu] if lo < mu < hi else None
    value, _ = integrate.quad(f, lo, hi, points=points, epsabs=1e-14, epsrel=1e-12, limit=500)
    return max(0.0, value)


@dataclasses.dataclass(frozen=True, eq=False)
class MechanismPair:
    """``M(D) = f(D) + A Z`` vs ``M(D') = f(D') + A Z`` with ``Z ~ N(0, σ² I)``.

    Only the difference ``mean_shift = f(D) - f(D')`` matters.
    """

    mean_shift: np.ndarray
    projection: np.ndarray
    sigma: float

    def __post_init__(self):
        shift = np.atleast_1d(np.asarray(self.mean_shift, dtype=float))
        proj = np.atleast_2d(np.asarray(self.projection, dtype=float))
        if proj.shape[0] != shift.shape[0]:
            raise ParameterError(f"projection has {proj.shape[0]} rows but shift has length {shift.shape[0]}")
        if not self.sigma > 0:
            raise ParameterError("sigma must be positive")
        object.__setattr__(self, "mean_shift", shift)
        object.__setattr__(self, "projection", proj)


@dataclasses.dataclass(frozen=True)
class MonteCarloEstimate:
    estimate: float
    stderr: float
    samples: int
    rank: int


def mc_hockey_stick(
    pair: MechanismPair,
    epsilon: float,
    samples: int = 1_000_000,
    seed: int = 0,
    chunk: int = 1 << 16,
    range_tol: float = 1e-8,
) -> MonteCarloEstimate:
    """Monte-Carlo estimate of ``H_{e^ε}(M(D) ‖ M(D'))``.

    Outputs ``y = shift + A Z`` are drawn from ``M(D)`` with ``Z`` sampled in
    the full noise space. Both mechanisms live on the same affine subspace, so
    the log likelihood ratio is evaluated in the range coordinates
    ``w = Σ_r⁻¹ U_rᵀ y / σ`` of the compact SVD, where it is linear. The
    estimator is the sample mean of ``[1 - e^{ε - L(y)}]_+``.
    """
    if samples < 1:
        raise ParameterError("samples must be positive")
    A = pair.projection
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    cut = max(A.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    r = int(np.sum(s > cut))
    Ur, sr = U[:, :r], s[:r]

    shift = pair.mean_shift
    snorm = float(np.linalg.norm(shift))
    if snorm > 0:
        residual = float(np.linalg.norm(Ur @ (Ur.T @ shift) - shift)) / snorm
        if residual > range_tol:
            raise RangeError("mean shift is outside the range of the projection", residual)

    sigma = pair.sigma
    mu = (Ur.T @ shift) / sr / sigma
    half_sq = 0.5 * float(mu @ mu)
    proj = (Ur / sr).T / sigma

    total = 0.0
    total_sq = 0.0
    seqs = np.random.SeedSequence(seed).spawn(-(-samples // chunk))
    done = 0
    for ss in seqs:
        k = min(chunk, samples - done)
        rng = np.random.default_rng(ss)
        Z = rng.standard_normal((k, A.shape[1])) * sigma
        y = shift + Z @ A.T
        w = y @ proj.T
        loss = w @ mu - half_sq
        vals = np.maximum(0.0, -np.expm1(epsilon - loss))
        total += float(vals.sum())
        total_sq += float((vals * vals).sum())
        done += k

    mean = total / samples
    var = max(0.0, total_sq / samples - mean * mean)
    stderr = math.sqrt(var / max(samples - 1, 1))
    return MonteCarloEstimate(mean, stderr, samples, r)


@dataclasses.dataclass(frozen=True)
class WorstDirection:
    signs: tuple[int, ...]
    value: float
    all_ones_value: float

    @property
    def is_all_ones(self) -> bool:
        return all(s == 1 for s in self.signs)


MAX_BRUTE_FORCE_T = 12


def brute_force_worst_direction(H: np.ndarray, columns: Sequence[int], tol: float = 1e-12) -> WorstDirection:
    """Maximize ``‖V_rᵀ Δx‖`` over perturbations with ``±1`` at ``columns``.

    ``columns`` are the positions of the target node's input in each round;
    all other entries of ``Δx`` are zero. Ties within ``tol`` (relative) go to
    the pattern with the most ``+1`` entries, then to the lexicographically
    largest one, so a pattern and its negation resolve to the positive one.
    """
    T = len(columns)
    if T > MAX_BRUTE_FORCE_T:
        raise ResourceError(f"2^{T} sign patterns exceed the enumeration limit (T <= {MAX_BRUTE_FORCE_T})")
    if T == 0:
        raise ParameterError("need at least one column")
    _, s, Vt = np.linalg.svd(np.atleast_2d(H), full_matrices=False)
    cut = max(H.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    Vr = Vt[s > cut].T
    M = Vr[list(columns), :]

    patterns = np.array(list(itertools.product((1, -1), repeat=T)), dtype=float)
    values = np.linalg.norm(patterns @ M, axis=1)
    best = values.max()
    near = np.flatnonzero(values >= best - tol * max(best, 1.0))
    # itertools.product puts +1 first, so lower indices are lexicographically larger.
    plus = patterns[near].sum(axis=1)
    pick = near[np.lexsort((near, -plus))[0]]
    return WorstDirection(tuple(int(v) for v in patterns[pick]), float(values[pick]), float(values[0]))


def verdict(name: str, passed: bool, **details) -> dict:
    return {"criterion": name, "passed": bool(passed), **details}


def verdicts_json(items: Sequence[dict]) -> str:
    return json.dumps(list(items), indent=2, sort_keys=True, default=float)
