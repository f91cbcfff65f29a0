"""Overlaps, Delta_n, identity residuals and their quenched averages.

Per-seed work produces thermal averages (exact, transfer-matrix or MCMC);
the reducers here fold them into nu-level estimates with standard errors.
Every reducer visits seeds in ascending order, so results do not depend on
how the per-seed work was scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .disorder import DisorderRealization, FieldProfile, ZetaDistribution, realize_disorder
from .errors import ValidationError
from .exact import ModelParams, cavity_fields, gibbs_state, replica_expectation
from .lattice import LatticeSpec
from .mcmc import SamplerConfig, batch_means_se, sample_replica_array
from .replicas import ClippedOverlapFunction, OverlapPolynomial, overlap_matrix

CSV_COLUMNS = ("observable", "n", "d", "beta", "h", "profile", "dist", "mean", "variance", "SE", "seeds")


@dataclass(frozen=True)
class OverlapSample:
    value: float
    pair: tuple[int, int]
    weights: np.ndarray = field(repr=False, compare=False)


def overlap(sigma_l, sigma_s, weights, pair: tuple[int, int] = (1, 2)) -> OverlapSample:
    """R_{l,s} = (1/V) sum_x w_x sigma^l_x sigma^s_x; 1 when l == s."""
    a = np.asarray(sigma_l, dtype=float)
    b = np.asarray(sigma_s, dtype=float)
    w = np.asarray(weights, dtype=float)
    if a.shape != b.shape or a.shape != w.shape:
        raise ValidationError(f"size mismatch: {a.shape}, {b.shape}, weights {w.shape}")
    if pair[0] == pair[1]:
        return OverlapSample(1.0, pair, w)
    return OverlapSample(float(np.sum(w * a * b) / a.size), pair, w)


def _g(disorder) -> np.ndarray:
    return disorder.g if isinstance(disorder, DisorderRealization) else np.asarray(disorder, dtype=float)


def delta_n(sigma, disorder) -> float:
    """(1/V) sum_x g_x sigma_x."""
    s = np.asarray(sigma, dtype=float)
    g = _g(disorder)
    if s.shape != g.shape:
        raise ValidationError(f"size mismatch: configuration {s.shape}, disorder {g.shape}")
    return float(s @ g / s.size)


def magnetization(sigma) -> float:
    return float(np.mean(np.asarray(sigma, dtype=float)))


def self_overlap(weights) -> float:
    """Q_n = (1/V) sum_x w_x, the weighted overlap of a configuration with itself."""
    w = np.asarray(weights, dtype=float)
    return float(w.sum() / w.size)


# ---------------------------------------------------------------- statistics


@dataclass(frozen=True)
class QuenchedStats:
    """Per-seed records of one observable; optional per-seed thermal variances."""

    seeds: tuple[int, ...]
    values: tuple[float, ...]
    thermal: tuple[float, ...] | None = None

    def __post_init__(self):
        if len(self.seeds) != len(self.values):
            raise ValidationError("seeds and values differ in length")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValidationError("duplicate seeds in QuenchedStats")
        if self.thermal is not None and len(self.thermal) != len(self.values):
            raise ValidationError("thermal records differ in length")

    @classmethod
    def from_records(cls, records: dict[int, float], thermal: dict[int, float] | None = None) -> "QuenchedStats":
        seeds = tuple(sorted(records))
        th = None if thermal is None else tuple(float(thermal[s]) for s in seeds)
        return cls(seeds, tuple(float(records[s]) for s in seeds), th)

    @property
    def count(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values)) if self.values else float("nan")

    @property
    def variance(self) -> float:
        """Between-seed sample variance of the thermal averages."""
        return float(np.var(self.values, ddof=1)) if self.count > 1 else 0.0

    @property
    def se(self) -> float:
        return math.sqrt(self.variance / self.count) if self.count else float("nan")

    @property
    def disorder_variance(self) -> float:
        """Population variance of the per-seed thermal averages."""
        return float(np.var(self.values)) if self.values else float("nan")

    @property
    def thermal_mean(self) -> float:
        return float(np.mean(self.thermal)) if self.thermal else float("nan")

    def merge(self, other: "QuenchedStats") -> "QuenchedStats":
        if set(self.seeds) & set(other.seeds):
            raise ValidationError("cannot merge QuenchedStats with overlapping seeds")
        if (self.thermal is None) != (other.thermal is None):
            raise ValidationError("cannot merge stats with and without thermal records")
        rec = dict(zip(self.seeds + other.seeds, self.values + other.values))
        th = None
        if self.thermal is not None:
            th = dict(zip(self.seeds + other.seeds, self.thermal + other.thermal))
        return QuenchedStats.from_records(rec, th)

    def csv_row(self, observable: str, spec: LatticeSpec, params: ModelParams, profile: str, dist: str) -> dict:
        return dict(observable=observable, n=spec.n, d=spec.d, beta=params.beta, h=params.h, profile=profile,
                    dist=dist, mean=self.mean, variance=self.variance, SE=self.se, seeds=self.count)


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float

    def to_dict(self) -> dict:
        return {"value": self.value, "se": self.se}


def jackknife(columns: np.ndarray, fn: Callable[[np.ndarray], float]) -> Estimate:
    """Delete-one jackknife over seeds; ``fn`` maps column means to the estimate."""
    X = np.asarray(columns, dtype=float)
    N = X.shape[0]
    full = float(fn(X.mean(axis=0)))
    if N < 2:
        return Estimate(full, float("nan"))
    total = X.sum(axis=0)
    loo = np.array([fn((total - X[i]) / (N - 1)) for i in range(N)])
    se = math.sqrt((N - 1) / N * np.sum((loo - loo.mean()) ** 2))
    return Estimate(full, se)


def mean_estimate(values) -> Estimate:
    v = np.asarray(values, dtype=float)
    se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else float("nan")
    return Estimate(float(v.mean()), se)


# ---------------------------------------------------------------- ensembles

ENSEMBLE_ENGINES = ("exact", "transfer-matrix", "mcmc")


def derived_seed(*parts: int) -> int:
    """A 63-bit seed determined by a tuple of integers."""
    state = np.random.SeedSequence([int(p) for p in parts]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


@dataclass(frozen=True)
class Ensemble:
    """A quenched ensemble: one lattice/parameter cell and its disorder seeds."""

    spec: LatticeSpec
    params: ModelParams
    profile: FieldProfile
    dist: ZetaDistribution
    seeds: tuple[int, ...]
    engine: str = "exact"
    sampler: SamplerConfig = SamplerConfig()

    def __post_init__(self):
        if not self.seeds:
            raise ValidationError("ensemble has no seeds")
        if self.engine not in ENSEMBLE_ENGINES:
            raise ValidationError(f"engine must be one of {ENSEMBLE_ENGINES}, got {self.engine!r}")
        object.__setattr__(self, "seeds", tuple(sorted(int(s) for s in self.seeds)))

    def realization(self, seed: int) -> DisorderRealization:
        return realize_disorder(self.spec, self.profile, self.dist, seed)

    def state(self, seed: int, params: ModelParams | None = None):
        if self.engine == "mcmc":
            raise ValidationError("mcmc ensembles have no exact state; use samples()")
        return gibbs_state(self.spec, params or self.params, self.realization(seed), self.engine)

    def samples(self, seed: int, m: int) -> np.ndarray:
        cfg = replace(self.sampler, seed=derived_seed(self.sampler.seed, seed))
        return sample_replica_array(self.spec, self.params, self.realization(seed), m, cfg)

    def with_params(self, params: ModelParams) -> "Ensemble":
        return replace(self, params=params)


def nu_stats(evaluator: Callable[[Ensemble, int], float | tuple[float, float]], ensemble: Ensemble) -> QuenchedStats:
    """Fold ``evaluator(ensemble, seed)`` over seeds.

    The evaluator returns the thermal average, or (thermal average, thermal
    variance) to enable the thermal/disorder decomposition.
    """
    rec: dict[int, float] = {}
    th: dict[int, float] = {}
    for s in ensemble.seeds:
        out = evaluator(ensemble, s)
        if isinstance(out, tuple):
            rec[s], th[s] = float(out[0]), float(out[1])
        else:
            rec[s] = float(out)
    return QuenchedStats.from_records(rec, th or None)


# ---------------------------------------------------------------- per-seed moments


def overlap_moments(source, weights=None) -> tuple[float, float, float]:
    """(<R12>, <R12^2>, <R12>^2) from an exact state or an MCMC array (T, m>=2, V).

    For MCMC with m >= 4 the squared mean is estimated without bias by R12*R34.
    """
    if isinstance(source, np.ndarray):
        if weights is None:
            raise ValidationError("weights are required for sampled configurations")
        T, m, V = source.shape
        if m < 2:
            raise ValidationError("overlap moments need at least 2 replicas")
        R = overlap_matrix([source[:, r] for r in range(m)], weights)
        r12 = R[:, 0, 1]
        if m >= 4:
            r34 = R[:, 2, 3]
            mean = 0.5 * (r12.mean() + r34.mean())
            sq = 0.5 * (np.mean(r12**2) + np.mean(r34**2))
            return float(mean), float(sq), float(np.mean(r12 * r34))
        return float(r12.mean()), float(np.mean(r12**2)), float(r12.mean() ** 2)
    st = source
    w = st.weights
    V = w.size
    mloc = st.site_means
    r12 = float(np.sum(w * mloc**2) / V)
    C = st.pair_means
    sq = float(np.einsum("x,y,xy->", w, w, C**2) / V**2)
    return r12, sq, r12 * r12


def gg_terms(source, m: int, f, weights=None) -> np.ndarray:
    """Per-seed [<f R_{1,m+1}>, <f>, <R_{1,2}>, sum_{s=2..m} <f R_{1,s}>]."""
    if m < 2:
        raise ValidationError(f"Ghirlanda-Guerra residual needs m >= 2, got {m}")
    if isinstance(f, (OverlapPolynomial, ClippedOverlapFunction)) and f.n_replicas > m:
        raise ValidationError(f"f uses replica {f.n_replicas} but m = {m}")
    R1 = {s: OverlapPolynomial.overlap(1, s) for s in range(2, m + 2)}
    if isinstance(source, np.ndarray):
        if weights is None:
            raise ValidationError("weights are required for sampled configurations")
        if source.shape[1] < m + 1:
            raise ValidationError(f"need {m + 1} replicas, samples have {source.shape[1]}")
        R = overlap_matrix([source[:, r] for r in range(m + 1)], weights)
        fv = f(R[:, :m, :m])
        return np.array([
            np.mean(fv * R[:, 0, m]),
            np.mean(fv),
            np.mean(R[:, 0, 1]),
            sum(np.mean(fv * R[:, 0, s - 1]) for s in range(2, m + 1)),
        ])
    st = source
    if isinstance(f, OverlapPolynomial):
        def E(poly):
            return replica_expectation(st, m + 1, poly)

        return np.array([E(f * R1[m + 1]), E(f), E(R1[2]), sum(E(f * R1[s]) for s in range(2, m + 1))])

    def lift(extra):
        def g(*sig):
            R = overlap_matrix(sig, st.weights)
            val = f(R[:, :m, :m])
            return val if extra is None else val * R[:, 0, extra - 1]

        return g

    return np.array([
        replica_expectation(st, m + 1, lift(m + 1)),
        replica_expectation(st, m, lift(None)),
        replica_expectation(st, 2, R1[2]),
        sum(replica_expectation(st, m, lift(s)) for s in range(2, m + 1)),
    ])


def gg_combine(means: np.ndarray, m: int) -> float:
    A, B, C, D = means
    return float(A - B * C / m - D / m)


def gg_residual(terms: np.ndarray, m: int) -> Estimate:
    """nu(f R_{1,m+1}) - (1/m) nu(f) nu(R12) - (1/m) sum_s nu(f R_{1,s}) with a jackknife SE.

    ``terms`` has one row of gg_terms per seed.
    """
    T = np.atleast_2d(np.asarray(terms, dtype=float))
    return jackknife(T, lambda c: gg_combine(c, m))


def delta_moment(source, disorder, weights=None) -> float:
    """<Delta_n> from an exact state or sampled configurations (T, m, V)."""
    g = _g(disorder)
    if isinstance(source, np.ndarray):
        S = source.reshape(-1, source.shape[-1]).astype(float)
        return float(np.mean(S @ g) / g.size)
    return float(source.site_means @ g / g.size)


def abs_delta_moment(source, disorder, center: float) -> float:
    """<|Delta_n - center|>."""
    g = _g(disorder)
    if isinstance(source, np.ndarray):
        S = source.reshape(-1, source.shape[-1]).astype(float)
        return float(np.mean(np.abs(S @ g / g.size - center)))
    if not hasattr(source, "probs"):
        raise ValidationError("|Delta_n - c| needs the full Gibbs distribution (exact engine) or samples")
    d = source.spins.astype(float) @ g / g.size
    return float(source.probs @ np.abs(d - center))


def pressure_derivative(ensemble: Ensemble, seed: int, step: float = 1e-4) -> float:
    """d psi_n / dh by central differences at fixed disorder (psi_n = F_n / |V_n|)."""
    p = ensemble.params
    up = ensemble.state(seed, p.with_h(p.h + step)).logZ
    dn = ensemble.state(seed, p.with_h(p.h - step)).logZ
    return (up - dn) / (2 * step * ensemble.spec.volume)


def _gauss_hermite(n: int = 64):
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x, w / w.sum()


def conditional_gap(state, dist: ZetaDistribution) -> float:
    """(1/V) sum_x E_zeta[h_x zeta m_x(zeta) - h h_x^2 (1 - m_x(zeta)^2)] at fixed cavity fields.

    m_x(zeta) = tanh(h h_x zeta + phi_x) is the site mean with zeta_x
    replaced; averaging over zeta_x exactly is a conditional expectation of
    the per-site gap, so its seed average estimates the same quantity with
    less variance.
    """
    phi = cavity_fields(state)
    hx = state.disorder.hprofile if state.disorder is not None else None
    if hx is None:
        raise ValidationError("conditional gap needs a DisorderRealization with its field profile")
    h = state.params.h
    if dist.kind == "rademacher":
        z, wz = np.array([-1.0, 1.0]), np.array([0.5, 0.5])
    elif dist.kind == "gaussian":
        z, wz = _gauss_hermite()
    else:
        raise ValidationError(f"conditional gap supports rademacher and gaussian, got {dist.kind}")
    mz = np.tanh(h * np.outer(hx, z) + phi[:, None])
    per_site = (hx[:, None] * z * mz - h * (hx**2)[:, None] * (1 - mz**2)) @ wz
    return float(per_site.mean())


# ---------------------------------------------------------------- ensemble-level observables


@dataclass(frozen=True)
class OverlapVarianceReport:
    nu_variance: Estimate
    thermal: Estimate
    disorder: Estimate
    nu_r12: Estimate

    def to_dict(self) -> dict:
        return {k: getattr(self, k).to_dict() for k in ("nu_variance", "thermal", "disorder", "nu_r12")}


def overlap_variance_from_moments(mom: np.ndarray) -> OverlapVarianceReport:
    """Rows (<R12>, <R12^2>, <R12>^2) per seed.

    nu-variance = mean <R12^2> - (mean <R12>)^2 splits exactly into the mean
    thermal variance plus the between-seed (population) variance of <R12>.
    """
    M = np.atleast_2d(np.asarray(mom, dtype=float))
    nu_var = jackknife(M[:, :2], lambda c: c[1] - c[0] ** 2)
    thermal = mean_estimate(M[:, 1] - M[:, 2])
    disorder = jackknife(np.column_stack([M[:, 0], M[:, 2]]), lambda c: c[1] - c[0] ** 2)
    return OverlapVarianceReport(nu_var, thermal, disorder, mean_estimate(M[:, 0]))


def _per_seed_overlap_moments(ensemble: Ensemble, seed: int) -> tuple[float, float, float]:
    if ensemble.engine == "mcmc":
        real = ensemble.realization(seed)
        return overlap_moments(ensemble.samples(seed, 4), real.weights)
    return overlap_moments(ensemble.state(seed))


def overlap_variance(ensemble: Ensemble) -> OverlapVarianceReport:
    return overlap_variance_from_moments([_per_seed_overlap_moments(ensemble, s) for s in ensemble.seeds])


def gg_residual_ensemble(ensemble: Ensemble, m: int, f) -> Estimate:
    rows = []
    for s in ensemble.seeds:
        if ensemble.engine == "mcmc":
            rows.append(gg_terms(ensemble.samples(s, m + 1), m, f, ensemble.realization(s).weights))
        else:
            rows.append(gg_terms(ensemble.state(s), m, f))
    return gg_residual(np.array(rows), m)


@dataclass(frozen=True)
class DeltaReport:
    nu_delta: Estimate
    abs_dev: Estimate  # nu(|Delta_n - nu(Delta_n)|)
    fd_max_error: float  # max over seeds of |<Delta_n> - d psi_n / dh|; nan for mcmc

    def to_dict(self) -> dict:
        return {"nu_delta": self.nu_delta.to_dict(), "abs_dev": self.abs_dev.to_dict(),
                "fd_max_error": self.fd_max_error}


def delta_self_averaging(ensemble: Ensemble, step: float = 1e-4) -> DeltaReport:
    """Two passes: nu(Delta_n) first, then <|Delta_n - nu(Delta_n)|> per seed."""
    means, fd_err = [], 0.0
    cache: dict[int, object] = {}
    for s in ensemble.seeds:
        real = ensemble.realization(s)
        if ensemble.engine == "mcmc":
            src = ensemble.samples(s, 1)
            fd = float("nan")
        else:
            src = ensemble.state(s)
            fd = abs(delta_moment(src, real) - pressure_derivative(ensemble, s, step))
        cache[s] = src if ensemble.engine == "mcmc" else None
        means.append(delta_moment(src, real))
        fd_err = max(fd_err, fd) if not math.isnan(fd) else float("nan")
    nu = mean_estimate(means)
    devs = []
    for s in ensemble.seeds:
        src = cache[s] if cache[s] is not None else ensemble.state(s)
        devs.append(abs_delta_moment(src, ensemble.realization(s), nu.value))
    return DeltaReport(nu, mean_estimate(devs), fd_err)


@dataclass(frozen=True)
class QReport:
    nu_r12: Estimate
    q_from_pressure: Estimate  # Q_n - (1/h) d p_n / dh
    gap: Estimate  # d p_n/dh - h (Q_n - nu(R12))
    gap_conditional: Estimate | None  # same expectation, zeta_x integrated out site by site
    self_overlap: float  # Q_n
    gap_unit: Estimate  # d p_n/dh - h (1 - nu(R12)), the unweighted reading

    def to_dict(self) -> dict:
        out = {k: getattr(self, k).to_dict() for k in ("nu_r12", "q_from_pressure", "gap", "gap_unit")}
        out["gap_conditional"] = None if self.gap_conditional is None else self.gap_conditional.to_dict()
        out["self_overlap"] = self.self_overlap
        return out


def q_consistency(ensemble: Ensemble, step: float = 1e-4) -> QReport:
    """Both sides of nu(Delta_n) = h (Q_n - nu(R12)) + remainder, with common seeds for h +- step."""
    if ensemble.engine == "mcmc":
        raise ValidationError("q-consistency needs log Z, use the exact or transfer-matrix engine")
    h = ensemble.params.h
    r12, dp, Q, cond = [], [], None, []
    for s in ensemble.seeds:
        st = ensemble.state(s)
        Q = self_overlap(st.weights)
        r12.append(overlap_moments(st)[0])
        dp.append(pressure_derivative(ensemble, s, step))
        if ensemble.dist.kind in ("rademacher", "gaussian"):
            cond.append(conditional_gap(st, ensemble.dist))
    r12, dp = np.array(r12), np.array(dp)
    return QReport(
        nu_r12=mean_estimate(r12),
        q_from_pressure=mean_estimate(Q - dp / h),
        gap=mean_estimate(dp - h * (Q - r12)),
        gap_conditional=mean_estimate(cond) if cond else None,
        self_overlap=Q,
        gap_unit=mean_estimate(dp - h * (1.0 - r12)),
    )


def truncated_pair_mean(ensemble: Ensemble) -> tuple[np.ndarray, np.ndarray]:
    """Seed mean and SE of <sigma_x; sigma_y> for every pair (exact states only)."""
    mats = []
    for s in ensemble.seeds:
        st = ensemble.state(s)
        mloc = st.site_means
        mats.append(st.pair_means - np.outer(mloc, mloc))
    A = np.array(mats)
    se = A.std(axis=0, ddof=1) / math.sqrt(len(A)) if len(A) > 1 else np.full(A.shape[1:], np.nan)
    return A.mean(axis=0), se


def mcmc_site_estimates(samples: np.ndarray) -> dict[str, np.ndarray]:
    """Means and batch-means SEs of <sigma_x> and <sigma_x sigma_y> from one chain (T, V)."""
    S = samples.astype(float)
    pairs = np.einsum("tx,ty->txy", S, S)
    return {
        "site": S.mean(axis=0),
        "site_se": batch_means_se(S),
        "pair": pairs.mean(axis=0),
        "pair_se": batch_means_se(pairs),
    }


def exchangeability_gap(state, m: int = 3) -> float:
    """max |nu(R_{ls}) - nu(R_{12})| over pairs l<s<=m on an exact state (0 up to rounding)."""
    base = replica_expectation(state, m, OverlapPolynomial.overlap(1, 2))
    return max(abs(replica_expectation(state, m, OverlapPolynomial.overlap(l, s)) - base)
               for l in range(1, m + 1) for s in range(l + 1, m + 1))

