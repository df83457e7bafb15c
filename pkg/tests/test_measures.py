import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from walkdiff import measures
from walkdiff.errors import DomainError, InvalidMeasure
from walkdiff.rng import RngStream


def test_validate_rademacher_is_valid(rad):
    report = measures.validate_measure(rad)
    assert report.passed


def test_validate_flags_noncentered():
    mu = measures.from_atoms([(-1.0, 0.5), (2.0, 0.5)])
    report = measures.validate_measure(mu)
    assert not report.passed
    assert any(name == "centered" for name, ok, _ in report.checks if not ok)


def test_validate_rejects_dirac_at_zero():
    mu = measures.from_atoms([(0.0, 1.0)])
    report = measures.validate_measure(mu)
    assert not report.passed
    assert any(name == "not_dirac_at_zero" for name, ok, _ in report.checks if not ok)


def test_quantile_rademacher_convention(rad):
    # right-continuous generalized inverse: the jump at 1/2 picks the upper atom
    assert measures.quantile(rad, 0.25) == -1.0
    assert measures.quantile(rad, 0.5) == 1.0
    assert measures.quantile(rad, 0.499999) == -1.0


def test_quantile_uniform_against_bisection_oracle(uniform_mu):
    # oracle: invert F(x) = (x+1)/2 by bisection on {x : F(x) > r}
    def oracle(r):
        lo, hi = -1.0, 1.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if (mid + 1.0) / 2.0 > r:
                hi = mid
            else:
                lo = mid
        return hi

    for r in (0.1, 0.5, 0.75, 0.9):
        assert measures.quantile(uniform_mu, r) == pytest.approx(oracle(r), abs=1e-10)
    assert measures.quantile(uniform_mu, 0.75) == pytest.approx(0.5, abs=1e-12)


def test_quantile_domain():
    mu = measures.rademacher()
    with pytest.raises(DomainError):
        measures.quantile(mu, 0.0)
    with pytest.raises(DomainError):
        measures.quantile(mu, 1.0)


@st.composite
def centered_atoms(draw):
    n = draw(st.integers(min_value=2, max_value=6))
    xs = draw(st.lists(st.floats(min_value=-10, max_value=10, allow_nan=False),
                       min_size=n, max_size=n, unique=True))
    ws = draw(st.lists(st.floats(min_value=0.05, max_value=1.0), min_size=n, max_size=n))
    total = sum(ws)
    ws = [w / total for w in ws]
    mean = sum(x * w for x, w in zip(xs, ws))
    pairs = [(x - mean, w) for x, w in zip(xs, ws)]
    assume(len({x for x, _ in pairs}) == n)
    assume(any(abs(x) > 1e-6 for x, _ in pairs))
    return measures.from_atoms(pairs)


@settings(max_examples=50, deadline=None)
@given(centered_atoms(), st.lists(st.floats(min_value=1e-6, max_value=1 - 1e-6),
                                  min_size=2, max_size=8))
def test_quantile_monotone_and_in_atom_set(mu, rs):
    rs = sorted(rs)
    vals = [measures.quantile(mu, r) for r in rs]
    assert all(vals[i] <= vals[i + 1] for i in range(len(vals) - 1))
    atom_xs = {x for x, _ in mu.atoms}
    assert all(v in atom_xs for v in vals)


def test_sampling_clt_bound(rad):
    rng = RngStream(101, 0)
    draws = measures.sample_increments(rad, rng, 1_000_000)
    assert abs(draws.mean()) <= 3.0 / math.sqrt(1_000_000)


def test_sampling_binomial_ci_for_asymmetric_pair():
    mu = measures.from_atoms([(-2.0, 1.0 / 3.0), (1.0, 2.0 / 3.0)])
    rng = RngStream(202, 0)
    draws = measures.sample_increments(mu, rng, 1_000_000)
    mass = np.mean(draws == -2.0)
    assert abs(mass - 1.0 / 3.0) <= 3.0 * math.sqrt(2.0 / 9.0 / 1_000_000)


def test_single_draw_matches_quantile_composition(rad):
    rng_a = RngStream(7, 3)
    rng_b = RngStream(7, 3)
    u = rng_b.uniform()
    assert measures.sample_increment(rad, rng_a) == measures.quantile(rad, u)


def test_second_moment_exact_and_monte_carlo():
    mu = measures.from_atoms([(-2.0, 1.0 / 3.0), (1.0, 2.0 / 3.0)])
    xs, ws = mu.atom_arrays()
    assert mu.second_moment == pytest.approx(float(np.dot(xs ** 2, ws)), abs=1e-12)
    rng = RngStream(11, 0)
    draws = measures.sample_increments(mu, rng, 200_000)
    sq = draws ** 2
    se = sq.std() / math.sqrt(len(sq))
    assert abs(sq.mean() - mu.second_moment) <= 4.0 * se


def test_samples_respect_support_bounds(uniform_mu):
    rng = RngStream(5, 0)
    draws = measures.sample_increments(uniform_mu, rng, 50_000)
    assert draws.min() >= uniform_mu.inf_supp
    assert draws.max() <= uniform_mu.sup_supp


def test_density_fixture_is_centered_and_finite_variance():
    mu = measures.exp_abs_cauchy()
    report = measures.validate_measure(mu)
    assert report.passed
    assert 0.0 < mu.second_moment < math.inf
    assert mu.inf_supp == -math.inf and mu.sup_supp == math.inf


def test_reflection_swaps_endpoint_masses():
    mu = measures.from_atoms([(-2.0, 1.0 / 3.0), (1.0, 2.0 / 3.0)])
    refl = mu.reflected()
    assert refl.inf_supp == -1.0 and refl.sup_supp == 2.0
    assert refl.atom_mass_at_inf_supp == pytest.approx(2.0 / 3.0)
    assert refl.atom_mass_at_sup_supp == pytest.approx(1.0 / 3.0)
    assert measures.validate_measure(refl).passed


def test_construction_rejects_bad_atoms():
    with pytest.raises(InvalidMeasure):
        measures.from_atoms([])
    with pytest.raises(InvalidMeasure):
        measures.from_atoms([(0.0, 0.5), (0.0, 0.5)])
    with pytest.raises(InvalidMeasure):
        measures.from_atoms([(1.0, 1.5)])
