"""Adversary-view sensitivities of noisy gossip averaging.

Gossip averaging with additive Gaussian noise is a discrete-time linear system

    theta_{t+1} = A theta_t + B (x_t + u_t),    y_t = C theta_t,

with ``theta_0 = 0``. Stacking the observations ``y_1..y_T`` of an adversary
gives ``x̃_T + H_T ũ_T`` where ``H_T`` is block lower-triangular Toeplitz with
blocks ``R_k = C A^k B`` and ``x̃_T`` is the response to a unit change of the
target node's contribution in every round. The guarantee for the target is
that of a scalar Gaussian mechanism with sensitivity ``‖H_T⁺ x̃_T‖₂``.

The default route never materializes ``H_T``: it assembles the Gram matrix
``G = H_T H_Tᵀ`` from the row blocks and evaluates ``Δ² = x̃ᵀ G⁺ x̃``. A dense
SVD route is kept as a cross-check.
"""

from __future__ import annotations

import dataclasses
import enum
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from gossipdp.config import load_dataclass
from gossipdp.errors import ModelError, ParameterError, RangeError, ResourceError
from gossipdp.graph import selector
from gossipdp.mixing import GossipMatrix


class Variant(str, enum.Enum):
    """Threat models. Values double as CLI names."""

    NON_ADAPTIVE_SS = "nonadaptive-ss"
    COLLUDING = "colluding"
    NO_SS = "no-ss"
    ADAPTIVE_SS = "adaptive-ss"


class Route(str, enum.Enum):
    GRAM = "gram"
    DENSE_SVD = "dense-svd"


@dataclasses.dataclass(frozen=True)
class SensitivityConfig:
    """Numerical knobs.

    Attributes:
      rank_tol: relative cutoff for eigen/singular values. ``None`` means
        ``max_dim * machine_epsilon``.
      range_tol: maximum relative residual of the range-membership check.
      dense_limit: maximum number of entries of a materialized ``H_T``.
    """

    rank_tol: float | None = None
    range_tol: float = 1e-8
    dense_limit: int = 20_000_000

    @classmethod
    def from_file(cls, path) -> "SensitivityConfig":
        return load_dataclass(cls, path)


DEFAULT_CONFIG = SensitivityConfig()


@dataclasses.dataclass(frozen=True)
class ThreatModel:
    """Which adversary view is analyzed for the data of node ``target``.

    ``observer`` is required for the non-adaptive secure-summation model. For
    the no-summation and adaptive secure-summation models it is optional and
    only selects which node's own noise is removed under the knowledge
    correction; when it is omitted, :func:`sensitivity` takes the worst case
    over all admissible observers.
    """

    variant: Variant
    target: int
    observer: int | None = None
    colluders: tuple[int, ...] | None = None
    correction: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.colluders is not None:
            object.__setattr__(self, "colluders", tuple(sorted(set(int(c) for c in self.colluders))))
        v = self.variant
        if v is Variant.NON_ADAPTIVE_SS:
            if self.observer is None:
                raise ModelError("the non-adaptive secure-summation model needs an observer")
            if self.observer == self.target:
                raise ModelError("observer must differ from target")
        elif v is Variant.COLLUDING:
            if not self.colluders:
                raise ModelError("the colluding model needs a non-empty colluder set")
            if self.target in self.colluders:
                raise ModelError("target must not be among the colluders")
        elif self.observer is not None and self.observer == self.target:
            raise ModelError("observer must differ from target")


@dataclasses.dataclass(frozen=True, eq=False)
class SystemSpec:
    """The ``(A, B, C)`` triple of one threat model plus the noise mask.

    ``input_identity`` marks ``B = I`` (no-summation model); otherwise
    ``B = A = W``. ``noise_mask`` lists the nodes whose noise the adversary
    knows and is therefore removed from the noise operator.
    """

    variant: Variant
    W: np.ndarray
    C: np.ndarray
    observed: tuple[int, ...]
    noise_mask: tuple[int, ...]
    T: int
    target: int
    input_identity: bool

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def A(self) -> np.ndarray:
        return self.W

    @property
    def B(self) -> np.ndarray:
        return np.eye(self.n) if self.input_identity else self.W

    @property
    def kept_columns(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n), np.asarray(self.noise_mask, dtype=int))


@dataclasses.dataclass(frozen=True)
class SensitivityResult:
    delta: float
    delta_sq: float
    rank: int
    residual: float
    route: Route
    T: int
    observer: int | None = None


def _as_matrix(W) -> np.ndarray:
    w = W.W if isinstance(W, GossipMatrix) else np.asarray(W, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ParameterError(f"W must be square, got shape {w.shape}")
    return w


def _closed_neighborhood(W, j: int) -> list[int]:
    if isinstance(W, GossipMatrix):
        return W.closed_neighborhood(j)
    return GossipMatrix(W).closed_neighborhood(j)


def _check_node(j: int, n: int, what: str) -> None:
    if not 0 <= j < n:
        raise ParameterError(f"{what} {j} out of range for n={n}")


def system_spec(model: ThreatModel, W, T: int) -> SystemSpec:
    """Assemble the linear system for ``model`` over ``T`` rounds.

    With the knowledge correction on, the observer's own noise (or every
    colluder's) is masked. For the no-summation and adaptive models without an
    explicit observer the mask is left empty; :func:`sensitivity` handles the
    worst case over observers.
    """
    if T < 1:
        raise ParameterError(f"T must be >= 1, got {T}")
    w = _as_matrix(W)
    n = w.shape[0]
    j = model.target
    _check_node(j, n, "target")
    v = model.variant

    if v is Variant.NON_ADAPTIVE_SS:
        _check_node(model.observer, n, "observer")
        observed = (model.observer,)
        mask = (model.observer,)
    elif v is Variant.COLLUDING:
        for c in model.colluders:
            _check_node(c, n, "colluder")
        observed = model.colluders
        mask = model.colluders
    elif v is Variant.NO_SS:
        observed = (j,)
        mask = (model.observer,) if model.observer is not None else ()
    else:
        observed = tuple(_closed_neighborhood(W, j))
        mask = (model.observer,) if model.observer is not None else ()
    if mask:
        _check_node(mask[0], n, "observer")
    if not model.correction:
        mask = ()

    return SystemSpec(
        variant=v,
        W=w,
        C=selector(observed, n),
        observed=observed,
        noise_mask=tuple(mask),
        T=T,
        target=j,
        input_identity=v is Variant.NO_SS,
    )


def _operator(w: np.ndarray):
    # Sparse products pay off only for large, sparse mixing matrices.
    n = w.shape[0]
    if n >= 256 and np.count_nonzero(w) < 0.1 * n * n:
        return sp.csr_matrix(w)
    return w


def build_direction(spec: SystemSpec) -> np.ndarray:
    """Stacked response ``x̃_T`` (length ``m*T``) to a unit change of the target.

    Computed by running the state recursion ``s_t = A s_{t-1} + B e_j`` from
    ``s_0 = 0`` and emitting ``C s_t``.
    """
    op = _operator(spec.W)
    e = np.zeros(spec.n)
    e[spec.target] = 1.0
    push = e if spec.input_identity else op @ e
    s = np.zeros(spec.n)
    out = np.empty((spec.T, spec.m))
    for t in range(spec.T):
        s = op @ s + push
        out[t] = s[list(spec.observed)]
    return out.reshape(-1)


def _propagate(C: np.ndarray, op, steps: int) -> list[np.ndarray]:
    """``[C, C A, C A², ...]`` by repeated vector-matrix products."""
    out = [C]
    L = C
    for _ in range(steps):
        L = np.asarray((op.T @ L.T).T) if sp.issparse(op) else L @ op
        out.append(L)
    return out


def build_rows(spec: SystemSpec, full: bool = False) -> np.ndarray:
    """Row blocks ``R_k = C A^k B`` for ``k = 0..T-1`` with masked columns removed.

    Returns an array of shape ``(T, m, n')``. With ``full`` the mask is
    ignored and all ``n`` columns are returned.
    """
    op = _operator(spec.W)
    if spec.input_identity:
        powers = _propagate(spec.C, op, spec.T - 1)
    else:
        powers = _propagate(spec.C, op, spec.T)[1:]
    rows = np.stack(powers)
    return rows if full else rows[:, :, spec.kept_columns]


def gram_matrix(rows: np.ndarray) -> np.ndarray:
    """``G = H Hᵀ`` of the block Toeplitz operator whose blocks are ``rows``.

    Block ``(s, t)`` equals ``Σ_{k=0}^{min(s,t)} R_{s-k} R_{t-k}ᵀ``, obtained
    from the block Gram matrix ``K[a, b] = R_a R_bᵀ`` by the recursion
    ``G[s, t] = K[s, t] + G[s-1, t-1]``.
    """
    T, m, _ = rows.shape
    flat = rows.reshape(T * m, -1)
    G = (flat @ flat.T).reshape(T, m, T, m)
    for s in range(1, T):
        G[s, :, 1:, :] += G[s - 1, :, :-1, :]
    return G.reshape(T * m, T * m)


def _rank_cutoff(values_max: float, max_dim: int, config: SensitivityConfig) -> float:
    rel = config.rank_tol if config.rank_tol is not None else max_dim * np.finfo(float).eps
    return rel * values_max


def gram_solve(G: np.ndarray, x: np.ndarray, config: SensitivityConfig = DEFAULT_CONFIG) -> tuple[float, int, float]:
    """Return ``(x̃ᵀ G⁺ x̃, rank, relative residual)`` via a symmetric eigendecomposition.

    Raises:
      RangeError: if ``x`` is not in the range of ``G`` within ``config.range_tol``.
    """
    xnorm = float(np.linalg.norm(x))
    lam, V = np.linalg.eigh(G)
    cut = _rank_cutoff(max(float(lam[-1]), 0.0), G.shape[0], config)
    keep = lam > cut
    rank = int(keep.sum())
    if xnorm == 0.0:
        return 0.0, rank, 0.0
    coeff = V[:, keep].T @ x
    y = V[:, keep] @ (coeff / lam[keep])
    residual = float(np.linalg.norm(G @ y - x)) / xnorm
    if residual > config.range_tol:
        raise RangeError("sensitivity direction is outside the range of H_T", residual)
    return float(np.dot(coeff, coeff / lam[keep])), rank, residual


def _result(delta_sq: float, rank: int, residual: float, route: Route, T: int, observer) -> SensitivityResult:
    delta_sq = max(delta_sq, 0.0)
    return SensitivityResult(float(np.sqrt(delta_sq)), delta_sq, rank, residual, route, T, observer)


def _candidate_observers(model: ThreatModel, W) -> list[int] | None:
    """Observers to maximize over, or None when the model fixes the mask."""
    if not model.correction or model.observer is not None:
        return None
    if model.variant is Variant.NO_SS:
        n = _as_matrix(W).shape[0]
        found = [i for i in range(n) if i != model.target]
    elif model.variant is Variant.ADAPTIVE_SS:
        found = [i for i in _closed_neighborhood(W, model.target) if i != model.target]
    else:
        return None
    # An isolated target has nobody whose noise could be removed.
    return found or None


def sensitivity_sweep(
    model: ThreatModel,
    W,
    Ts: Sequence[int],
    config: SensitivityConfig = DEFAULT_CONFIG,
) -> list[SensitivityResult]:
    """Sensitivities for every horizon in ``Ts`` from a single Gram assembly.

    The Gram matrix and direction for horizon ``T`` are the leading blocks of
    those for ``max(Ts)``, so the operator is built once per observer.
    """
    Ts = [int(T) for T in Ts]
    if not Ts or min(Ts) < 1:
        raise ParameterError("horizons must be >= 1")
    T_max = max(Ts)
    candidates = _candidate_observers(model, W)
    if candidates is None:
        return _sweep_fixed(system_spec(model, W, T_max), Ts, config, model.observer)

    base = system_spec(dataclasses.replace(model, correction=False), W, T_max)
    x = build_direction(base)
    rows = build_rows(base, full=True)
    # Masking a node whose noise never reaches the view changes nothing.
    active = np.flatnonzero(np.any(rows != 0, axis=(0, 1)))
    masks: list[int | None] = [i for i in candidates if i in set(active.tolist())]
    if len(masks) < len(candidates):
        masks.append(None)

    best: list[SensitivityResult] | None = None
    for i in masks:
        keep = np.setdiff1d(np.arange(base.n), [] if i is None else [i])
        G = gram_matrix(rows[:, :, keep])
        res = _sweep_gram(G, x, base.m, Ts, config, i)
        if best is None:
            best = res
        else:
            best = [r if r.delta_sq > b.delta_sq else b for r, b in zip(res, best)]
    return best


def _sweep_gram(G, x, m, Ts, config, observer) -> list[SensitivityResult]:
    out = []
    for T in Ts:
        d = m * T
        dsq, rank, res = gram_solve(G[:d, :d], x[:d], config)
        out.append(_result(dsq, rank, res, Route.GRAM, T, observer))
    return out


def _sweep_fixed(spec: SystemSpec, Ts, config, observer) -> list[SensitivityResult]:
    G = gram_matrix(build_rows(spec))
    return _sweep_gram(G, build_direction(spec), spec.m, Ts, config, observer)


def sensitivity(model: ThreatModel, W, T: int, config: SensitivityConfig = DEFAULT_CONFIG) -> SensitivityResult:
    """``Δ^T_{j→i} = ‖H_T⁺ x̃_T‖₂`` by the Gram route.

    For the no-summation and adaptive models with the knowledge correction on
    and no explicit observer, the maximum over admissible observers is
    returned and the maximizing observer is recorded in the result.
    """
    return sensitivity_sweep(model, W, [T], config)[0]


def dense_operator(spec: SystemSpec) -> np.ndarray:
    """Materialize ``H_T`` (shape ``(m*T, n'*T)``)."""
    rows = build_rows(spec)
    T, m, k = rows.shape
    H = np.zeros((T * m, T * k))
    for s in range(T):
        for t in range(s + 1):
            H[s * m:(s + 1) * m, t * k:(t + 1) * k] = rows[s - t]
    return H


def svd_sensitivity(H: np.ndarray, x: np.ndarray, config: SensitivityConfig = DEFAULT_CONFIG) -> tuple[float, int, float]:
    """Return ``(‖V_r Σ_r⁻¹ U_rᵀ x‖², rank, residual)`` from the compact SVD of ``H``."""
    if H.size > config.dense_limit:
        raise ResourceError(f"H has {H.size} entries, above the dense limit {config.dense_limit}")
    U, s, _ = np.linalg.svd(H, full_matrices=False)
    smax = float(s[0]) if s.size else 0.0
    keep = s > _rank_cutoff(smax, max(H.shape), config)
    rank = int(keep.sum())
    xnorm = float(np.linalg.norm(x))
    if xnorm == 0.0:
        return 0.0, rank, 0.0
    coeff = U[:, keep].T @ x
    residual = float(np.linalg.norm(U[:, keep] @ coeff - x)) / xnorm
    if residual > config.range_tol:
        raise RangeError("sensitivity direction is outside the range of H_T", residual)
    # ‖V_r z‖ = ‖z‖ since V_r has orthonormal columns.
    z = coeff / s[keep]
    return float(z @ z), rank, residual


def sensitivity_dense(model: ThreatModel, W, T: int, config: SensitivityConfig = DEFAULT_CONFIG) -> SensitivityResult:
    """Same quantity as :func:`sensitivity`, from the SVD of the materialized ``H_T``."""
    candidates = _candidate_observers(model, W)
    observers = [model.observer] if candidates is None else candidates
    best = None
    for i in observers:
        m = model if candidates is None else dataclasses.replace(model, observer=i)
        spec = system_spec(m, W, T)
        cols = spec.kept_columns.size
        if spec.m * T * cols * T > config.dense_limit:
            raise ResourceError(f"H_T would have {spec.m * T * cols * T} entries, above {config.dense_limit}")
        dsq, rank, res = svd_sensitivity(dense_operator(spec), build_direction(spec), config)
        r = _result(dsq, rank, res, Route.DENSE_SVD, T, i)
        if best is None or r.delta_sq > best.delta_sq:
            best = r
    return best


def time_varying_system(model: ThreatModel, Ws: Sequence) -> tuple[SystemSpec, list[np.ndarray], np.ndarray]:
    """Operator and direction for a sequence of mixing matrices ``W_0..W_{T-1}``.

    Round ``t`` uses ``A_t = W_t`` and ``B_t = W_t`` (or ``I`` without secure
    summation). The coefficient of round-``k`` noise in observation ``t`` is
    ``C A_{t-1} ··· A_{k+1} B_k``. The observed node set is that of ``W_0``.

    Returns the spec built from ``W_0`` (observed set and mask), the block
    rows of ``H`` (row ``t`` has ``t + 1`` column-masked blocks) and ``x̃``.
    """
    mats = [_as_matrix(W) for W in Ws]
    if not mats:
        raise ParameterError("need at least one mixing matrix")
    n = mats[0].shape[0]
    if any(w.shape != (n, n) for w in mats):
        raise ParameterError("all mixing matrices must have the same shape")
    T = len(mats)
    spec = system_spec(model, Ws[0], T)
    keep = spec.kept_columns
    ops = [_operator(w) for w in mats]

    def right(L, op):
        return np.asarray((op.T @ L.T).T) if sp.issparse(op) else L @ op

    blocks: list[np.ndarray] = []
    for t in range(1, T + 1):
        L = spec.C
        row = [None] * t
        for k in range(t - 1, -1, -1):
            if k < t - 1:
                L = right(L, ops[k + 1])
            R = L if spec.input_identity else right(L, ops[k])
            row[k] = R[:, keep]
        blocks.append(np.hstack(row))

    e = np.zeros(n)
    e[spec.target] = 1.0
    s = np.zeros(n)
    x = np.empty((T, spec.m))
    for t in range(T):
        push = e if spec.input_identity else ops[t] @ e
        s = ops[t] @ s + push
        x[t] = s[list(spec.observed)]
    return spec, blocks, x.reshape(-1)


def time_varying_operator(model: ThreatModel, Ws: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """Materialized ``(H_T, x̃_T)`` for a time-varying sequence."""
    spec, blocks, x = time_varying_system(model, Ws)
    T, m, k = len(blocks), spec.m, spec.kept_columns.size
    H = np.zeros((T * m, T * k))
    for t, b in enumerate(blocks):
        H[t * m:(t + 1) * m, : b.shape[1]] = b
    return H, x


def sensitivity_time_varying(
    model: ThreatModel,
    Ws: Sequence,
    config: SensitivityConfig = DEFAULT_CONFIG,
) -> SensitivityResult:
    """Gram-route sensitivity for time-varying mixing matrices.

    With the correction on and no explicit observer, the no-summation and
    adaptive models maximize over observers as in :func:`sensitivity`.
    """
    if not len(Ws):
        raise ParameterError("need at least one mixing matrix")
    candidates = _candidate_observers(model, Ws[0])
    if candidates is not None:
        results = [sensitivity_time_varying(dataclasses.replace(model, observer=i), Ws, config) for i in candidates]
        return max(results, key=lambda r: r.delta_sq)

    spec, blocks, x = time_varying_system(model, Ws)
    T, m, k = len(blocks), spec.m, spec.kept_columns.size
    # G[s, t] = Σ_{c ≤ min(s,t)} R_{s,c} R_{t,c}ᵀ, accumulated from c = min(s,t)
    # down to 0: the order in which the time-invariant recursion adds terms.
    G = np.zeros((T, m, T, m))
    for s in range(T):
        for t in range(s + 1):
            acc = np.zeros((m, m))
            for c in range(t, -1, -1):
                acc = acc + blocks[s][:, c * k:(c + 1) * k] @ blocks[t][:, c * k:(c + 1) * k].T
            G[s, :, t, :] = acc
            G[t, :, s, :] = acc.T
    dsq, rank, res = gram_solve(G.reshape(T * m, T * m), x, config)
    return _result(dsq, rank, res, Route.GRAM, T, model.observer)


def pairwise_sensitivities(
    variant: Variant,
    W,
    T: int,
    correction: bool = True,
    config: SensitivityConfig = DEFAULT_CONFIG,
    threads: int | None = None,
) -> np.ndarray:
    """``n × n`` matrix with entry ``(i, j) = Δ^T_{j→i}``; the diagonal is NaN.

    For the no-summation and adaptive models the value does not depend on the
    observer (worst case over observers under the correction), so it is
    computed once per target and broadcast down the column.
    """
    variant = Variant(variant)
    if variant is Variant.COLLUDING:
        raise ModelError("pairwise sensitivities are defined for single observers; use sensitivity() for coalitions")
    n = _as_matrix(W).shape[0]
    out = np.full((n, n), np.nan)

    def per_target(j: int) -> np.ndarray:
        col = np.full(n, np.nan)
        try:
            if variant is Variant.NON_ADAPTIVE_SS:
                for i in range(n):
                    if i != j:
                        col[i] = sensitivity(ThreatModel(variant, j, observer=i, correction=correction), W, T, config).delta
            else:
                col[:] = sensitivity(ThreatModel(variant, j, correction=correction), W, T, config).delta
                col[j] = np.nan
        except RangeError as exc:
            raise RangeError(f"target {j}: {exc}", exc.residual) from exc
        return col

    for j, col in _map_targets(per_target, n, threads):
        out[:, j] = col
    return out


def pairwise_sweep(
    variant: Variant,
    W,
    Ts: Sequence[int],
    correction: bool = True,
    config: SensitivityConfig = DEFAULT_CONFIG,
    threads: int | None = None,
) -> dict[int, np.ndarray]:
    """:func:`pairwise_sensitivities` for several horizons at once, keyed by ``T``."""
    variant = Variant(variant)
    if variant is Variant.COLLUDING:
        raise ModelError("pairwise sensitivities are defined for single observers")
    n = _as_matrix(W).shape[0]
    Ts = [int(T) for T in Ts]
    out = {T: np.full((n, n), np.nan) for T in Ts}

    def per_target(j: int) -> np.ndarray:
        cols = np.full((len(Ts), n), np.nan)
        if variant is Variant.NON_ADAPTIVE_SS:
            for i in range(n):
                if i != j:
                    res = sensitivity_sweep(ThreatModel(variant, j, observer=i, correction=correction), W, Ts, config)
                    cols[:, i] = [r.delta for r in res]
        else:
            res = sensitivity_sweep(ThreatModel(variant, j, correction=correction), W, Ts, config)
            cols[:, :] = np.array([r.delta for r in res])[:, None]
            cols[:, j] = np.nan
        return cols

    for j, cols in _map_targets(per_target, n, threads):
        for a, T in enumerate(Ts):
            out[T][:, j] = cols[a]
    return out


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("GDP_THREADS", "1")))
    except ValueError:
        return 1


def _map_targets(fn, n: int, threads: int | None):
    threads = default_threads() if threads is None else max(1, threads)
    if threads == 1:
        return [(j, fn(j)) for j in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(zip(range(n), pool.map(fn, range(n))))
