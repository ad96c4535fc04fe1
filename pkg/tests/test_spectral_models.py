import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special

from spectral_lan.errors import DomainError, SingularityError
from spectral_lan.spectral_models import (ARFIMA, FractionalGaussianNoise, WhiteNoise, alpha_of,
                                          c2_constant, eval_density, eval_theta_partial,
                                          fgn_lattice_sum, fgn_lattice_sum_derivatives,
                                          make_grid, make_model, verify_assumption_bounds)

X = np.array([1e-3, 0.05, 0.4, 1.0, 2.0, 3.1])


def hurwitz_lattice(x, H):
    a = 2 * H + 1
    return (2 * np.pi) ** (-a) * (special.zeta(a, x / (2 * np.pi))
                                  + special.zeta(a, 1 - x / (2 * np.pi)))


@pytest.mark.parametrize("H", [0.05, 0.3, 0.5, 0.8, 0.95])
def test_lattice_sum_matches_hurwitz_zeta(H):
    np.testing.assert_allclose(fgn_lattice_sum(X, H), hurwitz_lattice(X, H), rtol=1e-12)


@pytest.mark.parametrize("H", [0.2, 0.7])
def test_lattice_sum_h_derivatives_match_fd(H):
    # fourth-order stencils on the zeta oracle
    h = 1e-3
    s = {j: hurwitz_lattice(X, H + j * h) for j in (-2, -1, 0, 1, 2)}
    fd1 = (-s[2] + 8 * s[1] - 8 * s[-1] + s[-2]) / (12 * h)
    fd2 = (-s[2] + 16 * s[1] - 30 * s[0] + 16 * s[-1] - s[-2]) / (12 * h ** 2)
    d = fgn_lattice_sum_derivatives(X, H, order=2)
    np.testing.assert_allclose(d[1], fd1, rtol=1e-8)
    np.testing.assert_allclose(d[2], fd2, rtol=1e-6)


def test_c2_constant_at_half():
    # C2(H)^2 = pi / (H Gamma(2H) sin(pi H)) equals 2 pi at H = 1/2
    assert c2_constant(0.5) == pytest.approx(2 * np.pi, rel=1e-14)


class TestWhiteNoise:
    def test_constant(self):
        np.testing.assert_allclose(eval_density(WhiteNoise(), (2.5,), X), 2.5)

    def test_partials(self):
        m = WhiteNoise()
        np.testing.assert_allclose(m.partial((2.5,), X, (0,)), 1.0)
        np.testing.assert_allclose(m.partial((2.5,), X, (0, 0)), 0.0)

    def test_domain(self):
        with pytest.raises(DomainError):
            WhiteNoise().check((0.0,))
        with pytest.raises(DomainError):
            WhiteNoise().check((1.0, 2.0))


class TestFractionalGaussianNoise:
    def test_half_is_white(self):
        np.testing.assert_allclose(eval_density(FractionalGaussianNoise(), (1.7, 0.5), X), 1.7,
                                   rtol=1e-12)

    def test_alpha(self):
        assert alpha_of(FractionalGaussianNoise(), (1.0, 0.7)) == pytest.approx(0.4)

    def test_singular_at_zero_for_long_memory(self):
        with pytest.raises(SingularityError):
            eval_density(FractionalGaussianNoise(), (1.0, 0.7), 0.0)

    def test_zero_at_origin_when_antipersistent(self):
        assert eval_density(FractionalGaussianNoise(), (1.0, 0.3), 0.0) == 0.0

    @pytest.mark.parametrize("theta", [(0.0, 0.5), (1.0, 0.0), (1.0, 1.0), (1.0, -0.1)])
    def test_domain(self, theta):
        with pytest.raises(DomainError):
            FractionalGaussianNoise().check(theta)

    def test_power_law_near_zero(self):
        m = FractionalGaussianNoise()
        x = np.array([1e-6, 1e-5])
        f = m.density((1.0, 0.8), x)
        assert np.log(f[0] / f[1]) / np.log(10) == pytest.approx(0.6, abs=1e-3)


class TestArfima:
    def test_d_zero_is_white(self):
        np.testing.assert_allclose(eval_density(ARFIMA(), (1.3, 0.0), X), 1.3, rtol=0,
                                   atol=1e-12)

    def test_ar1_closed_form(self):
        m = ARFIMA(p=1)
        phi = 0.5
        expect = 1.0 / np.abs(1 + phi * np.exp(1j * X)) ** 2
        np.testing.assert_allclose(m.density((1.0, 0.0, phi), X), expect, rtol=1e-13)

    def test_root_condition(self):
        with pytest.raises(DomainError):
            ARFIMA(p=1).check((1.0, 0.2, 1.0))
        with pytest.raises(DomainError):
            ARFIMA(p=1, q=1).check((1.0, 0.2, 0.5, 0.5))

    def test_d_bound(self):
        with pytest.raises(DomainError):
            ARFIMA().check((1.0, 0.5))

    def test_noninvertible_d_allowed(self):
        assert ARFIMA().in_domain((1.0, -1.3))
        assert alpha_of(ARFIMA(), (1.0, -1.3)) == pytest.approx(-2.6)


MODELS = [
    (FractionalGaussianNoise(), (1.3, 0.7)),
    (FractionalGaussianNoise(), (0.8, 0.25)),
    (ARFIMA(), (1.1, 0.3)),
    (ARFIMA(p=1, q=1), (1.1, 0.3, 0.4, -0.2)),
    (ARFIMA(p=2), (0.9, -0.4, 0.3, 0.1)),
]


@pytest.mark.parametrize("model,theta", MODELS)
def test_partials_match_finite_differences(model, theta):
    fd = make_model(model.layout, p=getattr(model, "p", 0), q=getattr(model, "q", 0),
                    derivative_scheme="fd")
    x = np.array([0.01, 0.3, 1.5, 3.0])
    for order in (1, 2, 3):
        for ix in itertools.combinations_with_replacement(range(model.dim), order):
            a = eval_theta_partial(model, theta, x, ix)
            b = eval_theta_partial(fd, theta, x, ix)
            scale = np.max(np.abs(eval_density(model, theta, x)))
            np.testing.assert_allclose(a, b, rtol=2e-4, atol=2e-5 * scale, err_msg=str(ix))


@pytest.mark.parametrize("model,theta", MODELS)
def test_schwarz_symmetry(model, theta):
    x = np.array([0.2, 1.1])
    for ix in itertools.combinations_with_replacement(range(model.dim), 3):
        ref = model.partial(theta, x, ix)
        for perm in set(itertools.permutations(ix)):
            np.testing.assert_allclose(model.partial(theta, x, perm), ref, rtol=1e-10)


@pytest.mark.parametrize("model,theta", MODELS)
def test_x_partial_matches_fd(model, theta):
    x = np.array([0.05, 0.9, 2.5])
    h = 1e-6
    fd = (model.density(theta, x + h) - model.density(theta, x - h)) / (2 * h)
    np.testing.assert_allclose(model.x_partial(theta, x), fd, rtol=1e-6)


@pytest.mark.parametrize("model,theta", MODELS)
def test_log_gradient_consistent_with_partials(model, theta):
    x = np.array([0.05, 0.9, 2.5])
    f = model.density(theta, x)
    lg = model.log_gradient(theta, x)
    for k in range(model.dim):
        np.testing.assert_allclose(lg[k], model.partial(theta, x, (k,)) / f, rtol=1e-12)


@given(H=st.floats(0.02, 0.98), s2=st.floats(0.1, 10.0), x=st.floats(1e-4, np.pi))
def test_fgn_even_and_positive(H, s2, x):
    m = FractionalGaussianNoise()
    f = m.density((s2, H), np.array([x, -x]))
    assert f[0] > 0
    assert abs(f[0] - f[1]) <= 1e-12 * f[0]


@given(d=st.floats(-1.9, 0.45), phi=st.floats(-0.9, 0.9), x=st.floats(1e-4, np.pi))
def test_arfima_even_and_positive(d, phi, x):
    m = ARFIMA(p=1)
    f = m.density((1.0, d, phi), np.array([x, -x]))
    assert f[0] > 0
    assert abs(f[0] - f[1]) <= 1e-12 * f[0]


class TestBounds:
    def test_white_noise(self):
        rep = verify_assumption_bounds(WhiteNoise(), [(2.0,)], 0.1)
        assert rep.passed
        assert rep.c1_density == pytest.approx(2.0 * np.pi ** -0.1)

    def test_fgn(self):
        grid = make_grid(1e-4, np.pi, 60)
        rep = verify_assumption_bounds(FractionalGaussianNoise(), [(1.0, 0.7)], 0.05, grid)
        assert rep.passed
        assert np.isfinite(rep.c2_theta_partials)

    def test_arfima_ar1(self):
        rep = verify_assumption_bounds(ARFIMA(p=1), [(1.0, 0.3, 0.5)], 0.05,
                                       make_grid(1e-4, np.pi, 60))
        assert rep.passed
        assert rep.to_dict()["points_checked"] == 120
