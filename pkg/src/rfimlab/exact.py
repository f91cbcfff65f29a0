"""Exact finite-volume Gibbs computations.

Full enumeration of {-1, 1}^V for small volumes, plus 2x2 transfer matrices
for open chains.  Configuration ``c`` assigns ``sigma_x = 1 - 2 * bit_x(c)``,
so ``c = 0`` is the all-up state.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .disorder import DisorderRealization
from .errors import CapacityError, ValidationError
from .lattice import LatticeSpec
from .replicas import (
    ClippedOverlapFunction,
    OverlapPolynomial,
    as_config_function,
    contract_monomial,
)

ENUMERATION_CAP = 24
REPLICA_BUDGET = 1 << 24
_SPIN_CACHE_CAP = 20
_FLOAT_CACHE_CAP = 16


@dataclass(frozen=True)
class ModelParams:
    """Inverse temperature and field strength.

    ``beta = 0`` is outside the model's parameter range and only accepted
    with ``allow_zero_beta=True`` (factorization checks).
    """

    beta: float
    h: float
    allow_zero_beta: bool = field(default=False, compare=False)

    def __post_init__(self):
        if not self.h > 0:
            raise ValidationError(f"field strength h must be > 0, got {self.h}")
        if self.beta == 0 and self.allow_zero_beta:
            return
        if not self.beta > 0:
            raise ValidationError(f"inverse temperature beta must be > 0, got {self.beta}")

    def with_h(self, h: float) -> "ModelParams":
        return ModelParams(self.beta, h, self.allow_zero_beta)


def _fields(disorder) -> tuple[np.ndarray, np.ndarray | None]:
    if isinstance(disorder, DisorderRealization):
        return disorder.g, disorder.weights
    return np.asarray(disorder, dtype=float), None


def _spin_column(codes: np.ndarray, x: int) -> np.ndarray:
    return 1.0 - 2.0 * ((codes >> x) & 1)


def all_configurations(n_sites: int) -> np.ndarray:
    """(2**N, N) int8 matrix of spins in enumeration order."""
    codes = np.arange(1 << n_sites, dtype=np.int64)
    return (1 - 2 * ((codes[:, None] >> np.arange(n_sites)) & 1)).astype(np.int8)


@functools.lru_cache(maxsize=4)
def _shared_configurations(n_sites: int) -> np.ndarray:
    S = all_configurations(n_sites)
    S.flags.writeable = False
    return S


@functools.lru_cache(maxsize=4)
def _float_configurations(n_sites: int) -> np.ndarray:
    S = all_configurations(n_sites).astype(float)
    S.flags.writeable = False
    return S


@functools.lru_cache(maxsize=8)
def _bond_sums(n_sites: int, edge_bytes: bytes) -> np.ndarray:
    """sum over edges of sigma_i sigma_j for every configuration."""
    edges = np.frombuffer(edge_bytes, dtype=np.int64).reshape(-1, 2)
    S = _float_configurations(n_sites)
    out = np.einsum("ce,ce->c", S[:, edges[:, 0]], S[:, edges[:, 1]])
    out.flags.writeable = False
    return out


def _log_weights(spec: LatticeSpec, params: ModelParams, g: np.ndarray) -> np.ndarray:
    N = spec.volume
    codes = np.arange(1 << N, dtype=np.int64)
    if N <= _FLOAT_CACHE_CAP:
        lw = _float_configurations(N) @ (params.h * g)
        if len(spec.edges) and params.beta != 0:
            lw += params.beta * _bond_sums(N, np.ascontiguousarray(spec.edges, dtype=np.int64).tobytes())
        return lw
    # larger volumes: add one site at a time; codes with bit k set fill the upper half
    lower = [spec.edges[spec.edges[:, 1] == k, 0] for k in range(N)]
    lw = np.zeros(1)
    for k in range(N):
        local = params.h * g[k]
        if params.beta != 0 and len(lower[k]):
            c = codes[: lw.size]
            local = local + params.beta * sum(1.0 - 2.0 * ((c >> j) & 1) for j in lower[k])
        lw = np.concatenate([lw + local, lw - local])
    return lw


def check_enumerable(spec: LatticeSpec, cap: int = ENUMERATION_CAP) -> None:
    if spec.volume > cap:
        raise CapacityError(f"|V| = {spec.volume} spins exceeds the enumeration cap of {cap}")


def log_partition(spec: LatticeSpec, params: ModelParams, disorder, cap: int = ENUMERATION_CAP) -> float:
    """F_n = log Z_n by enumeration with log-sum-exp."""
    check_enumerable(spec, cap)
    g, _ = _fields(disorder)
    return float(logsumexp(_log_weights(spec, params, g)))


class ExactGibbs:
    """A fully evaluated Gibbs state: log Z and the normalized weights.

    Marginals and k-point correlation tensors are computed on demand and
    cached.  ``weights`` are the overlap site weights h_x**2.
    """

    def __init__(self, spec: LatticeSpec, params: ModelParams, disorder, cap: int = ENUMERATION_CAP):
        check_enumerable(spec, cap)
        g, w = _fields(disorder)
        if g.shape != (spec.volume,):
            raise ValidationError(f"disorder has shape {g.shape}, lattice has {spec.volume} sites")
        self.spec = spec
        self.params = params
        self.disorder = disorder if isinstance(disorder, DisorderRealization) else None
        self.g = g
        self.weights = np.ones(spec.volume) if w is None else w
        lw = _log_weights(spec, params, g)
        self.logZ = float(logsumexp(lw))
        self.probs = np.exp(lw - self.logZ)
        self._spins = None
        self._corr: dict[int, np.ndarray] = {}

    @property
    def n_sites(self) -> int:
        return self.spec.volume

    @property
    def spins(self) -> np.ndarray:
        if self._spins is None:
            if self.n_sites > _SPIN_CACHE_CAP:
                raise CapacityError(f"spin matrix for {self.n_sites} sites is not materialized")
            self._spins = _shared_configurations(self.n_sites)
        return self._spins

    def correlator(self, k: int) -> np.ndarray:
        """k-point correlation tensor <sigma_x1 ... sigma_xk>."""
        if k in self._corr:
            return self._corr[k]
        N, p = self.n_sites, self.probs
        if k == 0:
            out = np.array(1.0)
        elif k == 1:
            if N <= _SPIN_CACHE_CAP:
                out = p @ self.spins
            else:
                codes = np.arange(1 << N, dtype=np.int64)
                out = np.array([p @ _spin_column(codes, x) for x in range(N)])
        elif k == 2:
            if N <= _SPIN_CACHE_CAP:
                S = self.spins.astype(float)
                out = S.T @ (p[:, None] * S)
            else:
                codes = np.arange(1 << N, dtype=np.int64)
                out = np.eye(N)
                for x in range(N):
                    px = p * _spin_column(codes, x)
                    for y in range(x + 1, N):
                        out[x, y] = out[y, x] = px @ _spin_column(codes, y)
        else:
            if (1 << N) * N ** (k - 1) > 1 << 28:
                raise CapacityError(f"{k}-point correlations of {N} spins exceed the tensor budget")
            S = self.spins.astype(float)
            lead = S
            for _ in range(k - 2):
                lead = (lead[:, :, None] * S[:, None, :]).reshape(S.shape[0], -1)
            out = (lead.T @ (p[:, None] * S)).reshape((N,) * k)
        self._corr[k] = out
        return out

    @property
    def site_means(self) -> np.ndarray:
        return self.correlator(1)

    @property
    def pair_means(self) -> np.ndarray:
        return self.correlator(2)

    def expect(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        """Single-replica expectation of a function of the (2**N, N) spin matrix."""
        return float(self.probs @ f(self.spins))


def enumerate_gibbs(spec, params, disorder, cap: int = ENUMERATION_CAP) -> ExactGibbs:
    return ExactGibbs(spec, params, disorder, cap)


@dataclass(frozen=True)
class ReplicaProduct:
    """f(sigma^1, ..., sigma^m) = prod_r f_r(sigma^r); each f_r maps (K, V) -> (K,)."""

    factors: tuple[Callable[[np.ndarray], np.ndarray], ...]


def replica_expectation(state: ExactGibbs, m: int, f, budget: int = REPLICA_BUDGET) -> float:
    """Exact <f> under the m-fold product of the Gibbs measure.

    ``f`` may be an OverlapPolynomial (contracted against correlation
    tensors), a ReplicaProduct (product of single-replica expectations), a
    clipped overlap function, or any callable on m configuration batches of
    shape (K, V); the last two are summed over all replica tuples.
    """
    if m < 1:
        raise ValidationError(f"replica count must be >= 1, got {m}")
    if isinstance(f, OverlapPolynomial):
        if f.n_replicas > m:
            raise ValidationError(f"function uses replica {f.n_replicas} but m = {m}")
        return float(sum(c * contract_monomial(pairs, state.correlator, state.weights) for c, pairs in f.terms))
    if isinstance(f, ReplicaProduct):
        if len(f.factors) != m:
            raise ValidationError(f"ReplicaProduct has {len(f.factors)} factors, m = {m}")
        return float(np.prod([state.expect(fr) for fr in f.factors]))
    if isinstance(f, ClippedOverlapFunction):
        if f.n_replicas > m:
            raise ValidationError(f"function uses replica {f.n_replicas} but m = {m}")
        f = as_config_function(f, state.weights)
    return _enumerate_replicas(state, m, f, budget)


def _enumerate_replicas(state: ExactGibbs, m: int, f, budget: int, chunk: int = 1 << 18) -> float:
    N = state.n_sites
    total = 1 << (m * N)
    if total > budget:
        raise CapacityError(f"{m} replicas of {N} spins need 2^{m * N} tuples, budget is {budget}")
    S, p, mask = state.spins, state.probs, (1 << N) - 1
    acc = 0.0
    for start in range(0, total, chunk):
        t = np.arange(start, min(start + chunk, total), dtype=np.int64)
        idx = [(t >> (r * N)) & mask for r in range(m)]
        w = np.prod([p[i] for i in idx], axis=0)
        vals = np.asarray(f(*[S[i] for i in idx]), dtype=float)
        acc += float(w @ vals)
    return acc


def truncated_correlation(state: ExactGibbs, x: int, y: int) -> float:
    """<sigma_x sigma_y> - <sigma_x><sigma_y>."""
    N = state.n_sites
    if not (0 <= x < N and 0 <= y < N):
        raise ValidationError(f"site index out of range for {N} sites: ({x}, {y})")
    m = state.site_means
    if x == y:
        return float(1.0 - m[x] ** 2)
    return float(state.pair_means[x, y] - m[x] * m[y])


def truncated_matrix(state: ExactGibbs) -> np.ndarray:
    m = state.site_means
    C = state.pair_means - np.outer(m, m)
    np.fill_diagonal(C, 1.0 - m**2)
    return C


def derivative_stack(state: ExactGibbs, x: int, order: int) -> float:
    """d^k F_n / d g_x^k from the single-site magnetization (sigma_x^2 = 1).

    order 4 is 2 h^4 (3 m^2 - 1)(1 - m^2); see tests for the finite-difference
    check of every order.
    """
    if order not in (1, 2, 3, 4):
        raise ValidationError(f"derivative order must be in 1..4, got {order}")
    h = state.params.h
    m = float(state.site_means[x])
    c = 1.0 - m * m
    if order == 1:
        return h * m
    if order == 2:
        return h**2 * c
    if order == 3:
        return -2.0 * h**3 * m * c
    return 2.0 * h**4 * (3.0 * m * m - 1.0) * c


def mixed_fourth_derivative(state: ExactGibbs, x: int, y: int) -> float:
    """d^4 F / dg_x^2 dg_y^2 = 4 h^4 C_xy (m_x m_y - C_xy / 2)."""
    h = state.params.h
    m = state.site_means
    C = truncated_correlation(state, x, y)
    return 4.0 * h**4 * C * (m[x] * m[y] - 0.5 * C)


def fd_derivative(spec, params, disorder, x: int, step: float | None = None, order: int = 1, y: int | None = None,
                  cap: int = ENUMERATION_CAP) -> float:
    """Central finite differences of log_partition in the disorder values.

    order 1: dF/dg_x (default step 1e-4).  order 2: d^2F/dg_x dg_y by nested
    central differences (default step 1e-3); ``y=None`` means y = x.
    """
    if order not in (1, 2):
        raise ValidationError(f"finite-difference order must be 1 or 2, got {order}")
    if step is None:
        step = 1e-4 if order == 1 else 1e-3
    if not step > 0:
        raise ValidationError(f"step must be > 0, got {step}")
    check_enumerable(spec, cap)
    g0, _ = _fields(disorder)

    def F(*shifts):
        g = g0.copy()
        for site, delta in shifts:
            g[site] += delta
        return log_partition(spec, params, g, cap)

    if order == 1:
        return (F((x, step)) - F((x, -step))) / (2 * step)
    y = x if y is None else y
    s = step
    return (F((x, s), (y, s)) - F((x, s), (y, -s)) - F((x, -s), (y, s)) + F((x, -s), (y, -s))) / (4 * s * s)


def _check_chain(spec_or_n) -> int:
    if isinstance(spec_or_n, LatticeSpec):
        if spec_or_n.d != 1:
            raise ValidationError(f"transfer matrices need a d=1 chain, got d={spec_or_n.d}")
        return spec_or_n.n
    n = int(spec_or_n)
    if n < 1:
        raise ValidationError(f"chain length must be >= 1, got {n}")
    return n


def transfer_matrix_logZ(n, params: ModelParams, disorder) -> float | np.ndarray:
    """F_n of an open chain by log-scaled 2x2 transfer matrices.

    ``n`` is a chain length or a d=1 LatticeSpec.  ``disorder`` may have a
    leading batch axis (B, n); the result then has shape (B,).
    """
    n = _check_chain(n)
    g, _ = _fields(disorder)
    if g.shape[-1] != n:
        raise ValidationError(f"disorder length {g.shape[-1]} != chain length {n}")
    if g.ndim == 1:
        return _tm_logz_scalar(params.beta, params.h, g.tolist())
    # Batched: state vector (up, down) per realization.
    hb = params.h * g
    eb, emb = math.exp(params.beta), math.exp(-params.beta)
    up, dn = np.exp(hb[:, 0]), np.exp(-hb[:, 0])
    logz = np.zeros(g.shape[0])
    for k in range(1, n):
        up, dn = (up * eb + dn * emb) * np.exp(hb[:, k]), (up * emb + dn * eb) * np.exp(-hb[:, k])
        s = up + dn
        logz += np.log(s)
        up, dn = up / s, dn / s
    return logz + np.log(up + dn)


def _tm_logz_scalar(beta: float, h: float, g: list[float]) -> float:
    eb, emb = math.exp(beta), math.exp(-beta)
    # Carry log of the largest component to stay in range for any field size.
    a, b = h * g[0], -h * g[0]
    for gk in g[1:]:
        top = max(a, b)
        ua, ub = math.exp(a - top), math.exp(b - top)
        hk = h * gk
        a = top + math.log(ua * eb + ub * emb) + hk
        b = top + math.log(ua * emb + ub * eb) - hk
    top = max(a, b)
    return top + math.log(math.exp(a - top) + math.exp(b - top))


def chain_correlations(n, params: ModelParams, disorder, pairs: bool = True):
    """Site means and (optionally) the full <sigma_x sigma_y> matrix of an open chain.

    Forward/backward transfer-matrix vectors with per-step normalization;
    O(n) for means and O(n^2) for the pair matrix.
    """
    n = _check_chain(n)
    g, _ = _fields(disorder)
    hb = params.h * g
    T = np.array([[math.exp(params.beta), math.exp(-params.beta)], [math.exp(-params.beta), math.exp(params.beta)]])
    s = np.array([1.0, -1.0])
    site = np.exp(np.outer(hb, s) - np.abs(hb)[:, None])  # (n, 2), scaled per site
    fwd = np.empty((n, 2))
    norms = np.empty(n)
    v = site[0].copy()
    norms[0] = v.sum()
    fwd[0] = v / norms[0]
    for k in range(1, n):
        v = (fwd[k - 1] @ T) * site[k]
        norms[k] = v.sum()
        fwd[k] = v / norms[k]
    bwd = np.empty((n, 2))
    bwd[n - 1] = 1.0
    for k in range(n - 2, -1, -1):
        v = T @ (site[k + 1] * bwd[k + 1])
        bwd[k] = v / v.sum()
    joint = fwd * bwd
    means = (joint @ s) / joint.sum(axis=1)
    if not pairs:
        return means, None
    C = np.eye(n)
    for i in range(n):
        u = fwd[i] * s
        for j in range(i + 1, n):
            u = (u @ T) * site[j] / norms[j]
            C[i, j] = C[j, i] = (u * s) @ bwd[j] / (fwd[j] @ bwd[j])
    return means, C


def _as_config_callable(state: ExactGibbs, f):
    if isinstance(f, (OverlapPolynomial, ClippedOverlapFunction)):
        return as_config_function(f, state.weights)
    return f


def _j1_integrand(f, m: int, x: int):
    def a(*sig):
        tot = sum(sig[s][:, x] for s in range(m)) - m * sig[m][:, x]
        return sig[0][:, x] * tot * f(*sig[:m])

    return a


def replica_derivative_check(state: ExactGibbs, m: int, f, x: int, j: int, step: float | None = None,
                             budget: int = REPLICA_BUDGET) -> tuple[float, float]:
    """Both sides of d^j/du^j <sigma^1_x f>_{g_x = u} at the realized g_x.

    Analytic side: j=1 is h <sigma^1_x (sum_{s<=m} sigma^s_x - m sigma^{m+1}_x) f>
    over m+1 replicas; j=2 differentiates that (m+1)-replica expectation once
    more, giving an (m+2)-replica expectation.  The other side is a central
    finite difference in g_x of the m-replica expectation.
    """
    if j not in (1, 2):
        raise ValidationError(f"derivative order j must be 1 or 2, got {j}")
    h = state.params.h
    fc = _as_config_callable(state, f)
    a1 = _j1_integrand(fc, m, x)
    if j == 1:
        analytic = h * replica_expectation(state, m + 1, a1, budget)
    else:
        def a2(*sig):
            tot = sum(sig[s][:, x] for s in range(m + 1)) - (m + 1) * sig[m + 1][:, x]
            return a1(*sig[: m + 1]) * tot

        analytic = h * h * replica_expectation(state, m + 2, a2, budget)

    def base(*sig):
        return sig[0][:, x] * fc(*sig)

    def F(delta):
        g = state.g.copy()
        g[x] += delta
        shifted = ExactGibbs(state.spec, state.params, g)
        shifted.weights = state.weights
        return replica_expectation(shifted, m, base, budget)

    if j == 1:
        s = 1e-4 if step is None else step
        fd = (F(s) - F(-s)) / (2 * s)
    else:
        s = 1e-3 if step is None else step
        fd = (F(s) - 2 * F(0.0) + F(-s)) / (s * s)
    return float(analytic), float(fd)


def in_princ_power_form(state: ExactGibbs, m: int, f, x: int, j: int, budget: int = REPLICA_BUDGET) -> float:
    """h^j <sigma^1_x (sum_{s<=m} sigma^s_x - m sigma^{m+1}_x)^j f> over m+1 replicas.

    Equals the j-th derivative only for j = 1.
    """
    fc = _as_config_callable(state, f)

    def a(*sig):
        tot = sum(sig[s][:, x] for s in range(m)) - m * sig[m][:, x]
        return sig[0][:, x] * tot**j * fc(*sig[:m])

    return state.params.h**j * replica_expectation(state, m + 1, a, budget)


class ChainGibbs:
    """Transfer-matrix counterpart of ExactGibbs for open chains of any length.

    Provides logZ and correlators up to two points, which is all the overlap
    polynomials of degree <= 2 per replica need.
    """

    def __init__(self, spec, params: ModelParams, disorder, pairs: bool = True):
        n = _check_chain(spec)
        g, w = _fields(disorder)
        if g.shape != (n,):
            raise ValidationError(f"disorder has shape {g.shape}, chain has {n} sites")
        self.spec = spec if isinstance(spec, LatticeSpec) else None
        self.params = params
        self.disorder = disorder if isinstance(disorder, DisorderRealization) else None
        self.g = g
        self.weights = np.ones(n) if w is None else w
        self.logZ = float(transfer_matrix_logZ(n, params, g))
        self._n = n
        means, C = chain_correlations(n, params, g, pairs)
        self._corr = {0: np.array(1.0), 1: means}
        if C is not None:
            self._corr[2] = C

    @property
    def n_sites(self) -> int:
        return self._n

    def correlator(self, k: int) -> np.ndarray:
        if k not in self._corr:
            raise CapacityError(f"transfer-matrix state provides correlators up to 2 points, asked for {k}")
        return self._corr[k]

    @property
    def site_means(self) -> np.ndarray:
        return self._corr[1]

    @property
    def pair_means(self) -> np.ndarray:
        return self.correlator(2)


ENGINES = ("exact", "transfer-matrix")


def gibbs_state(spec: LatticeSpec, params: ModelParams, disorder, engine: str = "exact"):
    """ExactGibbs or ChainGibbs by engine name."""
    if engine == "exact":
        return ExactGibbs(spec, params, disorder)
    if engine == "transfer-matrix":
        return ChainGibbs(spec, params, disorder)
    raise ValidationError(f"engine must be one of {ENGINES}, got {engine!r}")


def cavity_fields(state) -> np.ndarray:
    """phi_x with <sigma_x> = tanh(h g_x + phi_x); phi_x does not depend on g_x."""
    m = np.clip(state.site_means, -1.0, 1.0)
    return np.arctanh(m) - state.params.h * state.g
