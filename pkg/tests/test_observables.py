import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from rfimlab.disorder import FieldProfile, ZetaDistribution, fixed_disorder, realize_disorder
from rfimlab.errors import ValidationError
from rfimlab.exact import ExactGibbs, ModelParams, replica_expectation
from rfimlab.lattice import build_lattice
from rfimlab.mcmc import SamplerConfig, sample_replica_array
from rfimlab.observables import (Ensemble, QuenchedStats, abs_delta_moment, conditional_gap, delta_moment, delta_n,
                                 delta_self_averaging, exchangeability_gap, gg_residual, gg_residual_ensemble,
                                 gg_terms, jackknife, magnetization, mean_estimate, nu_stats, overlap,
                                 overlap_moments, overlap_variance, overlap_variance_from_moments,
                                 pressure_derivative, q_consistency, self_overlap, truncated_pair_mean)
from rfimlab.replicas import F_CATALOG, OverlapPolynomial, parse_overlap_function

ONE = build_lattice(1, 1)
GAUSS, RAD = ZetaDistribution("gaussian"), ZetaDistribution("rademacher")


def test_overlap_examples():
    up = np.array([1, 1, -1])
    assert overlap(up, up, np.ones(3)).value == 1
    assert overlap(up, -up, np.ones(3)).value == -1
    assert overlap([1, 1], [1, -1], [1.0, 0.25]).value == pytest.approx(0.375)
    assert overlap(up, -up, np.ones(3), pair=(2, 2)).value == 1


def test_delta_and_magnetization_examples():
    spec = build_lattice(1, 2)
    assert delta_n([1, 1], fixed_disorder(spec, [1.0, -0.5])) == pytest.approx(0.25)
    g = np.array([0.4, -1.2, 0.3])
    assert delta_n(np.sign(g), g) == pytest.approx(np.abs(g).mean())
    assert delta_n([1, -1, 1], np.zeros(3)) == 0
    assert magnetization([1, 1, 1, 1]) == 1 and magnetization([-1] * 4) == -1
    assert magnetization([1, 1, -1, 1]) == 0.5


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=30), st.integers(1, 29))
def test_quenched_stats_merge_is_exact(values, cut):
    cut = min(cut, len(values) - 1)
    rec = dict(enumerate(values))
    full = QuenchedStats.from_records(rec)
    a = QuenchedStats.from_records({k: v for k, v in rec.items() if k < cut})
    b = QuenchedStats.from_records({k: v for k, v in rec.items() if k >= cut})
    for merged in (a.merge(b), b.merge(a)):
        assert merged == full
        assert merged.mean == full.mean and merged.se == full.se
    assert full.variance >= 0
    assert full.se == pytest.approx(math.sqrt(full.variance / full.count))


def test_quenched_stats_errors():
    a = QuenchedStats.from_records({1: 0.5})
    with pytest.raises(ValidationError):
        a.merge(QuenchedStats.from_records({1: 0.2}))
    with pytest.raises(ValidationError):
        QuenchedStats((1, 1), (0.0, 1.0))


def test_jackknife_linear_equals_plain_se(rng):
    x = rng.standard_normal(50)
    jk = jackknife(x[:, None], lambda c: c[0])
    me = mean_estimate(x)
    assert jk.value == pytest.approx(me.value) and jk.se == pytest.approx(me.se)


def _ens(n=4, profile=None, dist=GAUSS, seeds=range(10), params=ModelParams(0.8, 0.9), engine="exact", d=1):
    return Ensemble(build_lattice(d, n), params, profile or FieldProfile.power_law(0.5, 1.0), dist, tuple(seeds),
                    engine)


def test_constant_observable_stats():
    s = nu_stats(lambda e, seed: 2.5, _ens())
    assert s.mean == 2.5 and s.variance == 0 and s.count == 10


def test_beta_zero_overlap_closed_form():
    """nu(R12) at beta = 0 vs a per-site Gaussian quadrature oracle, within 3 SE."""
    h = 1.1
    ens = _ens(n=5, params=ModelParams(0.0, h, allow_zero_beta=True), seeds=range(400))
    stats = nu_stats(lambda e, s: overlap_moments(e.state(s))[0], ens)
    hx = FieldProfile.power_law(0.5, 1.0).values(build_lattice(1, 5))
    phi = lambda z: math.exp(-z * z / 2) / math.sqrt(2 * math.pi)
    target = np.mean([a**2 * integrate.quad(lambda z: math.tanh(h * a * z) ** 2 * phi(z), -12, 12)[0] for a in hx])
    assert abs(stats.mean - target) < 3 * stats.se


def test_gg_exactness_f_one():
    ens = _ens(n=5)
    one = OverlapPolynomial.const(1.0)
    for m in (2, 3, 4):
        est = gg_residual_ensemble(ens, m, one)
        assert abs(est.value) < 1e-12


def test_gg_single_site_hand_enumeration():
    """f = R12, m = 2, one site: sum over the 2^3 replica outcomes by hand."""
    hx, g, h = 0.7, 0.9, 1.3
    st_ = ExactGibbs(ONE, ModelParams(1.0, h), fixed_disorder(ONE, [g], [hx]))
    p_up = (1 + math.tanh(h * g)) / 2
    E = {}
    for key, fn in (("A", lambda s: hx**2 * s[0] * s[1] * hx**2 * s[0] * s[2]), ("B", lambda s: hx**2 * s[0] * s[1]),
                    ("D", lambda s: hx**2 * s[0] * s[1] * hx**2 * s[0] * s[1])):
        tot = 0.0
        for c in range(8):
            s = [1 - 2 * ((c >> r) & 1) for r in range(3)]
            w = np.prod([p_up if v == 1 else 1 - p_up for v in s])
            tot += w * fn(s)
        E[key] = tot
    hand = E["A"] - E["B"] * E["B"] / 2 - E["D"] / 2
    terms = gg_terms(st_, 2, OverlapPolynomial.overlap(1, 2))
    assert gg_residual(terms[None], 2).value == pytest.approx(hand, abs=1e-12)


@pytest.mark.parametrize("name", F_CATALOG)
def test_gg_residual_bounded(name):
    f = parse_overlap_function(name)
    ens = _ens(n=3, seeds=range(4), params=ModelParams(1.2, 1.0))
    m = max(2, f.n_replicas)
    assert abs(gg_residual_ensemble(ens, m, f).value) <= 2


def test_single_site_overlap_variance():
    hx, g, h = 0.6, -0.4, 0.9
    st_ = ExactGibbs(ONE, ModelParams(1.0, h), fixed_disorder(ONE, [g], [hx]))
    r, r2, rsq = overlap_moments(st_)
    m = math.tanh(h * g)
    assert r2 - rsq == pytest.approx(hx**4 * (1 - m**4), abs=1e-12)


def test_variance_decomposition_is_additive():
    rep = overlap_variance(_ens(n=6, seeds=range(30)))
    assert rep.nu_variance.value == pytest.approx(rep.thermal.value + rep.disorder.value, abs=1e-12)
    assert rep.nu_variance.value > 0


def test_identical_replicas_give_zero_nu_variance():
    spec = build_lattice(1, 4)
    rows = []
    for seed in range(5):
        real = realize_disorder(spec, FieldProfile.constant(1.0), GAUSS, seed)
        S = sample_replica_array(spec, ModelParams(1, 1), real, 4, SamplerConfig(sweeps=600, burn_in=100, seed=seed),
                                 identical=True)
        rows.append(overlap_moments(S, real.weights))
    assert overlap_variance_from_moments(rows).nu_variance.value == pytest.approx(0.0, abs=1e-15)


def test_delta_fd_identity_and_zero_disorder():
    ens = _ens(n=6, dist=RAD, seeds=range(5))
    rep = delta_self_averaging(ens)
    assert rep.fd_max_error < 1e-6
    zero = _ens(n=4, profile=FieldProfile.constant(0.0), seeds=range(3))
    rep0 = delta_self_averaging(zero)
    assert rep0.nu_delta.value == 0 and rep0.abs_dev.value == 0


def test_abs_delta_moment_mcmc_path():
    spec = build_lattice(1, 3)
    real = realize_disorder(spec, FieldProfile.constant(1.0), GAUSS, 1)
    S = sample_replica_array(spec, ModelParams(1, 1), real, 1, SamplerConfig(sweeps=1100, burn_in=100))
    d = S[:, 0].astype(float) @ real.g / 3
    assert abs_delta_moment(S, real, 0.1) == pytest.approx(np.mean(np.abs(d - 0.1)))
    assert delta_moment(S, real) == pytest.approx(d.mean())


def test_q_consistency_single_site_gaussian_quadrature():
    """nu(Delta) = h (h1^2 - nu(R12)) for Gaussian zeta, checked by quadrature."""
    h, a = 0.8, 0.6
    phi = lambda z: math.exp(-z * z / 2) / math.sqrt(2 * math.pi)
    nu_delta = integrate.quad(lambda z: a * z * math.tanh(h * a * z) * phi(z), -12, 12)[0]
    nu_r12 = integrate.quad(lambda z: a**2 * math.tanh(h * a * z) ** 2 * phi(z), -12, 12)[0]
    assert nu_delta == pytest.approx(h * (a**2 - nu_r12), abs=1e-12)
    # the engine's conditional gap integrates zeta exactly, so it vanishes seed by seed
    ens = Ensemble(ONE, ModelParams(1.0, h), FieldProfile.constant(a), GAUSS, (0, 1, 2))
    rep = q_consistency(ens)
    assert abs(rep.gap_conditional.value) < 1e-12
    assert rep.self_overlap == pytest.approx(a**2)


def test_q_consistency_zero_profile():
    rep = q_consistency(_ens(n=3, profile=FieldProfile.constant(0.0), seeds=range(3)))
    assert rep.gap.value == 0 and rep.nu_r12.value == 0 and rep.self_overlap == 0


def test_conditional_gap_rademacher_oracle():
    """Average over flipping each zeta_x separately, recomputing the whole state."""
    spec = build_lattice(1, 3)
    params = ModelParams(0.9, 0.7)
    real = realize_disorder(spec, FieldProfile.power_law(0.8, 1.0), RAD, 5)
    hx = real.hprofile
    tot = 0.0
    for x in range(3):
        for z in (-1.0, 1.0):
            g = real.g.copy()
            g[x] = hx[x] * z
            m = ExactGibbs(spec, params, g).site_means[x]
            tot += 0.5 * (hx[x] * z * m - params.h * hx[x] ** 2 * (1 - m * m))
    st_ = ExactGibbs(spec, params, real)
    assert conditional_gap(st_, RAD) == pytest.approx(tot / 3, abs=1e-12)


def test_pressure_derivative_matches_delta():
    ens = _ens(n=5, seeds=(3,))
    st_ = ens.state(3)
    assert pressure_derivative(ens, 3) == pytest.approx(delta_moment(st_, ens.realization(3)), abs=1e-7)


def test_exchangeability_exact():
    ens = _ens(n=4, seeds=(1,))
    assert exchangeability_gap(ens.state(1), 3) < 1e-12


def test_fkg_seed_average_nonnegative():
    mean, se = truncated_pair_mean(_ens(n=2, d=2, seeds=range(40)))
    assert np.all(mean >= -2 * se - 1e-15)


def test_mcmc_ensemble_requires_samples():
    ens = _ens(engine="mcmc")
    with pytest.raises(ValidationError):
        ens.state(0)
    with pytest.raises(ValidationError):
        q_consistency(ens)
    with pytest.raises(ValidationError):
        Ensemble(build_lattice(1, 2), ModelParams(1, 1), FieldProfile.constant(), GAUSS, ())


def test_csv_row():
    s = QuenchedStats.from_records({0: 1.0, 1: 3.0})
    row = s.csv_row("x", build_lattice(1, 4), ModelParams(1, 0.5), "p", "gaussian")
    assert row["mean"] == 2.0 and row["variance"] == 2.0 and row["seeds"] == 2 and row["n"] == 4
