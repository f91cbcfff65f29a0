import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from rfimlab.disorder import (FieldProfile, ZetaDistribution, fixed_disorder, realize_disorder, sample_zeta,
                              site_stream, smallness_ratio)
from rfimlab.errors import ValidationError
from rfimlab.lattice import build_lattice

DISTS = [ZetaDistribution("gaussian"), ZetaDistribution("rademacher"), ZetaDistribution("uniform"),
         ZetaDistribution("centered-exponential"), ZetaDistribution("student-t", 7.0),
         ZetaDistribution("student-t", 12.0)]


def oracle_abs_moment(dist, k):
    """Closed forms or direct numerical integration, independent of the package."""
    if dist.kind == "gaussian":
        return 2 ** (k / 2) * math.gamma((k + 1) / 2) / math.sqrt(math.pi)
    if dist.kind == "rademacher":
        return 1.0
    if dist.kind == "uniform":
        return math.sqrt(3.0) ** k / (k + 1)
    if dist.kind == "centered-exponential":
        return integrate.quad(lambda e: abs(e - 1) ** k * math.exp(-e), 0, np.inf)[0]
    s = math.sqrt((dist.nu - 2) / dist.nu)
    return stats.t(dist.nu).expect(lambda t: abs(s * t) ** k)


def oracle_third(dist):
    return {"centered-exponential": 2.0}.get(dist.kind, 0.0)


@pytest.mark.parametrize("dist", DISTS, ids=lambda d: d.name)
def test_closed_form_moments(dist):
    for k in (1, 2, 3, 5):
        assert dist.abs_moment(k) == pytest.approx(oracle_abs_moment(dist, k), rel=1e-8)
    assert dist.raw_moment(1) == pytest.approx(0.0, abs=1e-12)
    assert dist.raw_moment(2) == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("dist", DISTS, ids=lambda d: d.name)
def test_sample_moments_within_4se(dist):
    z = dist.sample(np.random.default_rng(7), 1_000_000)
    checks = [(z, 0.0), (z**2, 1.0), (np.abs(z) ** 3, oracle_abs_moment(dist, 3)),
              (np.abs(z) ** 5, oracle_abs_moment(dist, 5))]
    for vals, target in checks:
        se = vals.std(ddof=1) / math.sqrt(vals.size)
        assert abs(vals.mean() - target) <= 4 * se, (dist.name, target, vals.mean(), se)


def test_sample_examples():
    rng = np.random.default_rng(3)
    r = ZetaDistribution("rademacher").sample(rng, 1_000_000)
    assert set(np.unique(r)) == {-1.0, 1.0}
    assert abs(r.mean()) < 4 / 1000
    u = ZetaDistribution("uniform").sample(rng, 1_000_000)
    assert np.all(np.abs(u) <= math.sqrt(3))
    assert abs(u.var() - 1) < 0.005
    e = ZetaDistribution("centered-exponential").sample(rng, 2_000_000)
    third = np.mean(e**3)
    assert abs(third - 2) < 4 * np.std(e**3) / math.sqrt(e.size)


def test_student_t_rejects_nu_at_most_5():
    with pytest.raises(ValidationError, match="finite fifth moment requires ν > 5"):
        ZetaDistribution("student-t", 4.0)
    with pytest.raises(ValidationError):
        ZetaDistribution("student-t", 5.0)
    with pytest.raises(ValidationError):
        ZetaDistribution("gaussian", 3.0)
    with pytest.raises(ValidationError):
        ZetaDistribution("cauchy")


def test_support_and_pdf():
    rad = ZetaDistribution("rademacher")
    pts, w = rad.support()
    assert list(pts) == [-1.0, 1.0] and list(w) == [0.5, 0.5]
    for dist in DISTS[2:]:
        lo, hi = dist.interval()
        mass = integrate.quad(dist.pdf, max(lo, -60), min(hi, 60), limit=200)[0]
        assert mass == pytest.approx(1.0, abs=1e-7)


def test_profile_examples():
    spec = build_lattice(1, 3)
    h = FieldProfile.power_law(0.5, 1.0).values(spec)
    assert list(h) == [0.5, 0.5, 0.25]
    real = realize_disorder(build_lattice(2, 3), FieldProfile.constant(1.0), ZetaDistribution("rademacher"), 5)
    assert set(np.abs(real.g)) == {1.0}


def test_realization_contract():
    spec = build_lattice(2, 4)
    prof, dist = FieldProfile.power_law(0.7, 1.5), ZetaDistribution("student-t", 9.0)
    a, b = realize_disorder(spec, prof, dist, 11), realize_disorder(spec, prof, dist, 11)
    assert a.g.tobytes() == b.g.tobytes()
    assert np.array_equal(a.g, a.hprofile * a.zeta)
    assert np.max(np.abs(a.hprofile)) <= 1
    assert np.array_equal(a.weights, a.hprofile**2)
    # per-site streams: the value at a site does not depend on how many sites are generated
    small = realize_disorder(build_lattice(1, 3), FieldProfile.constant(1.0), dist, 11)
    big = realize_disorder(build_lattice(1, 9), FieldProfile.constant(1.0), dist, 11)
    assert np.array_equal(small.zeta, big.zeta[:3])
    assert small.zeta[2] == sample_zeta(dist, site_stream(11, 2))


def test_json_roundtrip_and_tamper():
    real = realize_disorder(build_lattice(1, 5), FieldProfile.power_law(0.5, 1), ZetaDistribution("gaussian"), 3)
    back = type(real).from_json(real.to_json())
    assert np.array_equal(back.g, real.g)
    import json
    doc = json.loads(real.to_json())
    doc["g"][0] += 1e-9
    with pytest.raises(ValidationError):
        type(real).from_json(json.dumps(doc))


def test_seed_range():
    spec = build_lattice(1, 2)
    with pytest.raises(ValidationError):
        realize_disorder(spec, FieldProfile.constant(), ZetaDistribution("gaussian"), -1)
    with pytest.raises(ValidationError):
        realize_disorder(spec, FieldProfile.constant(), ZetaDistribution("gaussian"), 2**64)
    realize_disorder(spec, FieldProfile.constant(), ZetaDistribution("gaussian"), 2**64 - 1)


def test_profile_validation():
    with pytest.raises(ValidationError):
        FieldProfile.constant(1.5)
    with pytest.raises(ValidationError):
        FieldProfile.power_law(1.2, 1.0)
    with pytest.raises(ValidationError):
        FieldProfile.power_law(0.5, 0.0)
    with pytest.raises(ValidationError):
        FieldProfile.from_dict({"kind": "power-law", "beta": 1})
    p = FieldProfile.power_law(0.3, 2.0, origin=(2, 2))
    assert FieldProfile.from_dict(p.to_dict()) == p


def test_fixed_disorder():
    spec = build_lattice(1, 2)
    real = fixed_disorder(spec, [1.0, -0.5], [1.0, 0.5])
    assert list(real.zeta) == [1.0, -1.0]
    with pytest.raises(ValidationError):
        fixed_disorder(spec, [1.0])


def test_smallness_ratio_examples():
    assert smallness_ratio(FieldProfile.constant(1.0), build_lattice(1, 7)) == 1.0
    r = smallness_ratio(FieldProfile.power_law(1.0, 1.0), build_lattice(1, 4))
    assert r == pytest.approx((1 + 1 + 0.5 + 1 / 3) / 4)
    p2 = FieldProfile.power_law(1.0, 2.0)
    assert smallness_ratio(p2, build_lattice(1, 64)) < smallness_ratio(p2, build_lattice(1, 8))


@given(st.integers(1, 3), st.floats(0.05, 1.0), st.floats(0.2, 3.0))
def test_smallness_monotone(d, h_star, alpha):
    prof = FieldProfile.power_law(h_star, alpha)
    sizes = [2, 3, 4, 5] if d < 3 else [2, 3, 4]
    ratios = [smallness_ratio(prof, build_lattice(d, n)) for n in sizes]
    assert all(b <= a + 1e-15 for a, b in zip(ratios, ratios[1:]))
    assert all(np.max(prof.values(build_lattice(d, n))) <= 1 for n in sizes)
