import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from walkdiff import models
from walkdiff.errors import (
    DomainError,
    InconclusiveBoundary,
    InvalidModel,
    NonFiniteInput,
)


def test_eta_examples(two_media_qf, gbm_qf, bm_qf):
    assert models.eta_eval(two_media_qf.spec, -1.0) == 2.0
    assert models.eta_eval(gbm_qf.spec, -0.5) == 0.0
    assert models.eta_eval(bm_qf.spec, 3.7) == 1.0


def test_eta_rejects_nan(bm_qf):
    with pytest.raises(NonFiniteInput):
        models.eta_eval(bm_qf.spec, float("nan"))


def test_q_bm(bm_qf):
    assert bm_qf.q(0.0, 2.0) == pytest.approx(4.0, abs=1e-12)
    assert bm_qf.q(1.0, 1.0) == 0.0


def test_q_gbm_closed_form_and_brute_force_oracle():
    spec = models.gbm()
    closed = models.QFunction(spec)
    quad = models.QFunction(spec, use_closed_form=False)
    # oracle: nested quadrature of 2/z^2 straight from the definition
    oracle, err = integrate.dblquad(lambda z, u: 2.0 / z ** 2, 1.0, math.e,
                                    lambda u: 1.0, lambda u: u, epsabs=1e-12)
    assert oracle == pytest.approx(2.0 * math.e - 4.0, abs=1e-9)
    assert closed.q(1.0, math.e) == pytest.approx(oracle, rel=1e-9)
    assert quad.q(1.0, math.e) == pytest.approx(oracle, rel=1e-9)


def test_q_outside_interval_is_infinite(gbm_qf, bm_qf):
    assert gbm_qf.q(1.0, -1.0) == math.inf
    assert gbm_qf.q(1.0, 0.0) == math.inf  # inaccessible boundary limit
    assert bm_qf.q(0.0, math.inf) == math.inf


def test_q_domain_and_nan(gbm_qf):
    with pytest.raises(DomainError):
        gbm_qf.q(-1.0, 1.0)
    with pytest.raises(NonFiniteInput):
        gbm_qf.q(1.0, float("nan"))


def test_q_x_bm_matches_derivative_and_finite_differences(bm_qf):
    qf = models.QFunction(models.bm(), use_closed_form=False)
    assert qf.q_x(0.0, 2.0) == pytest.approx(4.0, rel=1e-9)
    h = 1e-5
    fd = (bm_qf.q(0.0, 2.0 + h) - bm_qf.q(0.0, 2.0 - h)) / (2.0 * h)
    assert qf.q_x(0.0, 2.0) == pytest.approx(fd, rel=1e-6)
    assert qf.q_x(0.5, 0.5) == 0.0


def test_q_x_two_media(two_media_qf):
    qf = models.QFunction(two_media_qf.spec, use_closed_form=False)
    # int_0^{-1} 2/A^2 dz with A=2
    assert qf.q_x(0.0, -1.0) == pytest.approx(-0.5, rel=1e-9)
    h = 1e-5
    fd = (two_media_qf.q(0.0, -1.0 + h) - two_media_qf.q(0.0, -1.0 - h)) / (2.0 * h)
    assert qf.q_x(0.0, -1.0) == pytest.approx(fd, rel=1e-5)


@pytest.mark.parametrize("spec,lo,hi", [
    (models.bm(), -2.0, 2.0),
    (models.two_media(A=2.0), -2.0, 2.0),
    (models.gbm(), 0.4, 3.0),
    (models.cev(alpha=2.0), 0.6, 2.2),
])
def test_quadrature_matches_closed_form_on_grid(spec, lo, hi):
    closed = models.QFunction(spec)
    quad = models.QFunction(spec, use_closed_form=False)
    ys = np.linspace(lo, hi, 7)
    xs = np.linspace(lo, hi, 9)
    qc = closed.q_grid(ys, xs)
    qq = quad.q_grid(ys, xs)
    np.testing.assert_array_less(np.abs(qq - qc) / (1.0 + np.abs(qc)), 1e-7)


_CATALOG = {
    "bm": (models.bm, (-2.0, 2.0)),
    "two_media": (lambda: models.two_media(A=2.0), (-2.0, 2.0)),
    "gbm": (models.gbm, (0.4, 3.0)),
    "cev_half": (lambda: models.cev(alpha=0.5), (0.4, 3.0)),
    "exp_half": (models.exp_half, (-1.5, 1.5)),
}


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(sorted(_CATALOG)),
       st.floats(min_value=0.0, max_value=1.0),
       st.floats(min_value=0.0, max_value=1.0),
       st.floats(min_value=0.0, max_value=1.0))
def test_translation_identity(name, uy, uyb, ux):
    builder, (lo, hi) = _CATALOG[name]
    qf = models.QFunction(builder())
    y = lo + (hi - lo) * uy
    ybar = lo + (hi - lo) * uyb
    x = lo + (hi - lo) * ux
    lhs = qf.q(y, x)
    rhs = qf.q(ybar, x) - qf.q(ybar, y) - qf.q_x(ybar, y) * (x - y)
    assert abs(lhs - rhs) <= 10.0 * qf.tol * (1.0 + abs(lhs)) + 1e-12


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(sorted(_CATALOG)),
       st.floats(min_value=0.05, max_value=0.95),
       st.floats(min_value=0.0, max_value=1.0),
       st.floats(min_value=0.0, max_value=1.0))
def test_convexity_of_q(name, uy, ux1, ux2):
    builder, (lo, hi) = _CATALOG[name]
    qf = models.QFunction(builder())
    y = lo + (hi - lo) * uy
    x1 = lo + (hi - lo) * ux1
    x2 = lo + (hi - lo) * ux2
    mid = 0.5 * (x1 + x2)
    assert qf.q(y, mid) <= 0.5 * (qf.q(y, x1) + qf.q(y, x2)) + 1e-10


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(min_value=0.3, max_value=3.0), min_size=3, max_size=3,
                unique=True),
       st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=3, max_size=3))
def test_convexity_random_piecewise_constant(cs, us):
    spec = models.piecewise(
        breaks=[-0.5, 0.5],
        pieces=[{"type": "const", "c": cs[0]}, {"type": "const", "c": cs[1]},
                {"type": "const", "c": cs[2]}],
        interval=(-2.0, 2.0), m=0.0)
    qf = models.QFunction(spec)
    y = -1.5 + 3.0 * us[0]
    x1 = -1.9 + 3.8 * us[1]
    x2 = -1.9 + 3.8 * us[2]
    mid = 0.5 * (x1 + x2)
    assert qf.q(y, mid) <= 0.5 * (qf.q(y, x1) + qf.q(y, x2)) + 1e-9


def test_boundary_cev_alpha2_inaccessible():
    qf = models.QFunction(models.cev(alpha=2.0))
    report = models.classify_boundary(qf, "left")
    assert not report.accessible
    assert report.limit_value == math.inf
    assert len(report.probe_trace) > 0


def test_boundary_cev_half_accessible():
    qf = models.QFunction(models.cev(alpha=0.5))
    report = models.classify_boundary(qf, "left")
    assert report.accessible
    # q(y, 0+) = 2y for the square-root coefficient
    assert report.limit_value == pytest.approx(2.0 * qf.spec.start_point, rel=1e-6)
    quad = models.QFunction(models.cev(alpha=0.5), use_closed_form=False)
    probe = models.classify_boundary(quad, "left")
    assert probe.accessible and probe.method == "probe"
    assert probe.limit_value == pytest.approx(report.limit_value, rel=1e-6)


def test_boundary_cev_alpha_minus_one_accessible():
    qf = models.QFunction(models.cev(alpha=-1.0))
    report = models.classify_boundary(qf, "left")
    assert report.accessible
    assert math.isfinite(report.limit_value)


def test_boundary_bm_infinite_endpoint(bm_qf):
    report = models.classify_boundary(bm_qf, "left")
    assert not report.accessible
    assert report.limit_value == math.inf
    assert report.method == "rule_infinite_endpoint"


def test_boundary_absorbed_bm(absorbed_bm_qf):
    report = models.classify_boundary(absorbed_bm_qf, "left")
    assert report.accessible
    m = absorbed_bm_qf.spec.start_point
    assert report.limit_value == pytest.approx(m * m, rel=1e-9)


def test_boundary_probe_inconclusive_for_log_divergence():
    # eta ~ x near 0 gives a logarithmic divergence no probe can certify
    spec = models.piecewise(breaks=[1.0],
                            pieces=[{"type": "power", "c": 1.0, "p": 1.0, "x0": 0.0},
                                    {"type": "const", "c": 1.0}],
                            interval=(0.0, math.inf), m=2.0)
    qf = models.QFunction(spec)
    with pytest.raises(InconclusiveBoundary):
        models.classify_boundary(qf, "left")


def test_boundary_value_translates_between_base_points(absorbed_bm_qf):
    # q(y, l+) = (l-y)^2 for absorbed BM at any base point
    assert absorbed_bm_qf.boundary_value(0.3, "left") == pytest.approx(0.09, rel=1e-9)


def test_construction_rejects_vanishing_eta():
    with pytest.raises(InvalidModel):
        models.piecewise(breaks=[0.0],
                         pieces=[{"type": "const", "c": 1.0},
                                 {"type": "power", "c": 1.0, "p": 1.0, "x0": 1.0}],
                         interval=(-1.0, 3.0), m=-0.5)


def test_construction_rejects_bad_interval_and_start():
    with pytest.raises(InvalidModel):
        models.bm(interval=(1.0, 1.0))
    with pytest.raises(InvalidModel):
        models.bm(interval=(0.0, 1.0), m=2.0)


def test_log_example_matches_paper_scaling_form():
    qf = models.QFunction(models.log_example())
    # for y <= 1/4 and x in (-1, 1]:
    # q(y, y+xy) = sqrt(-log(y(1+x))) - sqrt(-log y) + x / (2 sqrt(-log y))
    for y in (0.05, 0.2):
        for x in (-0.5, 0.3, 1.0):
            expected = (math.sqrt(-math.log(y * (1 + x))) - math.sqrt(-math.log(y))
                        + x / (2.0 * math.sqrt(-math.log(y))))
            assert qf.q(y, y * (1 + x)) == pytest.approx(expected, rel=1e-10)
