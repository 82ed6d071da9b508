import json
import warnings

import numpy as np
import pytest
from scipy import special, stats

from rvcopula import BoundaryWarning, DataError
from rvcopula.copulae import (
    ClaytonCopula,
    GumbelCopula,
    StudentTCopula,
    copula_from_dict,
    fit_copula,
    invert_increasing,
    kendall_tau_matrix,
    make_copula,
    nearest_correlation,
    tau_from_param,
)


def t2(rho, nu):
    return StudentTCopula(corr=np.array([[1.0, rho], [rho, 1.0]]), df=nu)


def gl_integral(cop, n=160, zmax=8.0):
    """Integral of the density over (0,1)^2 with Gauss-Legendre nodes in normal scores."""
    x, w = np.polynomial.legendre.leggauss(n)
    z, wz = zmax * x, zmax * w
    u = special.ndtr(z)
    jac = wz * stats.norm.pdf(z)
    U1, U2 = np.meshgrid(u, u, indexing="ij")
    dens = cop.pdf(np.column_stack([U1.ravel(), U2.ravel()])).reshape(n, n)
    return float(jac @ dens @ jac)


# ---------------------------------------------------------------- fitting

def test_t_fit_recovers_parameters():
    U = t2(0.5, 5.0).sample(100_000, random_state=1)
    # the O(N^2) tau matrix is replaced by scipy's O(N log N) pairwise tau
    tau = stats.kendalltau(U[:, 0], U[:, 1])[0]
    cop = StudentTCopula().fit(U, tau=np.array([[1.0, tau], [tau, 1.0]]))
    assert abs(cop.corr[0, 1] - 0.5) < 0.02
    assert abs(cop.df - 5.0) < 1.5


def test_t_fit_uses_tau_inversion(rng):
    U = t2(0.3, 8.0).sample(400, random_state=rng)
    cop = StudentTCopula().fit(U)
    tau = stats.kendalltau(U[:, 0], U[:, 1])[0]
    assert cop.corr[0, 1] == pytest.approx(np.sin(np.pi * tau / 2), abs=1e-12)
    assert 2.1 <= cop.df <= 200


def test_kendall_tau_matrix_matches_scipy(rng):
    U = rng.uniform(size=(300, 4))
    U[:, 1] = 0.6 * U[:, 0] + 0.4 * U[:, 1]
    K = kendall_tau_matrix(U)
    for i in range(4):
        for j in range(4):
            expect = 1.0 if i == j else stats.kendalltau(U[:, i], U[:, j])[0]
            assert K[i, j] == pytest.approx(expect, abs=1e-12)


def test_kendall_tau_matrix_with_ties():
    U = np.array([[0.1, 0.2], [0.1, 0.3], [0.5, 0.3], [0.7, 0.9], [0.9, 0.1]])
    assert kendall_tau_matrix(U)[0, 1] == pytest.approx(
        stats.kendalltau(U[:, 0], U[:, 1])[0], abs=1e-12)


def test_clayton_independence_near_lower_bound():
    thetas = []
    for seed in range(10):
        U = np.random.default_rng(seed).uniform(size=(2000, 2))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", BoundaryWarning)
            thetas.append(ClaytonCopula().fit(U).theta)
    assert max(thetas) < 0.1
    assert min(thetas) < 1e-3


def test_negative_dependence_pins_clayton(rng):
    x = rng.uniform(0.01, 0.99, size=500)
    with pytest.warns(BoundaryWarning):
        cop = ClaytonCopula().fit(np.column_stack([x, 1 - x]))
    assert cop.theta == pytest.approx(1e-4, rel=1e-2)


def test_negative_dependence_pins_gumbel(rng):
    x = rng.uniform(size=500)
    U = np.column_stack([x, 1 - x + 1e-3 * rng.uniform(size=500)])
    U = np.clip(U, 1e-4, 1 - 1e-4)
    with pytest.warns(BoundaryWarning):
        cop = GumbelCopula().fit(U)
    assert cop.theta == pytest.approx(1.0, abs=1e-2)


def test_comonotone_projected_with_warning():
    u = (np.arange(1, 201) / 201.0)
    with pytest.warns(BoundaryWarning):
        cop = StudentTCopula().fit(np.column_stack([u, u]))
    r = cop.corr[0, 1]
    assert r < 1.0 and r > 0.999
    assert np.linalg.eigvalsh(cop.corr)[0] > 0


def test_constant_column_rejected(rng):
    U = np.column_stack([rng.uniform(size=50), np.full(50, 0.5)])
    for fam in ("t", "clayton", "gumbel"):
        with pytest.raises(DataError):
            fit_copula(fam, U)


def test_pseudo_obs_must_be_interior():
    with pytest.raises(DataError):
        fit_copula("clayton", np.array([[0.0, 0.5], [0.3, 0.2]] * 20))


@pytest.mark.parametrize("family,true,other", [("clayton", 2.0, 0.5), ("gumbel", 2.0, 1.5)])
def test_archimedean_fit_maximizes_likelihood(family, true, other):
    cop = make_copula(family)
    cop.theta = true
    U = cop.sample(5000, random_state=3)
    fitted = fit_copula(family, U)
    assert abs(fitted.theta - true) < 0.15
    worse = make_copula(family)
    worse.theta = other
    assert fitted.loglik(U) >= worse.loglik(U)


# ---------------------------------------------------------------- density

def test_t_identity_density_at_median():
    # R = I is uncorrelated but not independent: the shared chi-square mixing
    # leaves c(1/2, ..., 1/2) = G((nu+d)/2) G(nu/2)^(d-1) / G((nu+1)/2)^d
    for nu in (3.0, 10.0, 150.0):
        for d in (2, 3):
            cop = StudentTCopula(corr=np.eye(d), df=nu)
            g = special.gammaln
            expect = np.exp(g((nu + d) / 2) + (d - 1) * g(nu / 2) - d * g((nu + 1) / 2))
            assert cop.pdf(np.full(d, 0.5)) == pytest.approx(expect, rel=1e-12)
    assert StudentTCopula(corr=np.eye(3), df=3.0).pdf([0.5] * 3) == pytest.approx(np.pi / 2)
    # the product structure appears in the Gaussian limit
    assert StudentTCopula(corr=np.eye(3), df=1e6).pdf([0.5] * 3) == pytest.approx(1.0, abs=1e-5)


def test_clayton_near_independence_density(rng):
    cop = ClaytonCopula(theta=1e-4)
    u = rng.uniform(0.05, 0.95, size=(50, 2))
    np.testing.assert_allclose(cop.pdf(u), 1.0, atol=1e-2)


def test_t_density_matches_scipy(rng):
    R = np.array([[1.0, 0.4, -0.2], [0.4, 1.0, 0.3], [-0.2, 0.3, 1.0]])
    cop = StudentTCopula(corr=R, df=6.0)
    u = rng.uniform(0.01, 0.99, size=(20, 3))
    x = stats.t.ppf(u, 6.0)
    expect = stats.multivariate_t(shape=R, df=6.0).pdf(x) / np.prod(stats.t.pdf(x, 6.0), axis=1)
    np.testing.assert_allclose(cop.pdf(u), expect, rtol=1e-9)


@pytest.mark.parametrize("cop", [
    t2(0.5, 5.0), t2(-0.7, 12.0),
    ClaytonCopula(theta=0.5), ClaytonCopula(theta=3.0),
    GumbelCopula(theta=1.5), GumbelCopula(theta=3.0),
], ids=["t-0.5-5", "t-m0.7-12", "clayton-0.5", "clayton-3", "gumbel-1.5", "gumbel-3"])
def test_density_integrates_to_one(cop):
    assert abs(gl_integral(cop) - 1.0) < 1e-3


@pytest.mark.parametrize("cop", [
    ClaytonCopula(theta=2.0, dim=3), GumbelCopula(theta=2.0),
    StudentTCopula(corr=np.full((3, 3), 0.3) + 0.7 * np.eye(3), df=4.0),
])
def test_exchangeable_density_symmetric(cop, rng):
    u = rng.uniform(0.02, 0.98, size=(30, cop.dim))
    base = cop.pdf(u)
    np.testing.assert_allclose(cop.pdf(u[:, ::-1]), base, rtol=1e-10)


def test_density_rejects_boundary():
    for cop in (t2(0.2, 5.0), ClaytonCopula(theta=1.0), GumbelCopula(theta=2.0)):
        with pytest.raises(DataError):
            cop.pdf([0.0, 0.5])
        with pytest.raises(DataError):
            cop.pdf([0.5, 1.0])


def test_clayton_density_matches_cdf_derivative():
    cop = ClaytonCopula(theta=1.7)
    u, v, h = 0.3, 0.6, 1e-4
    C = lambda a, b: cop.cdf([a, b])
    fd = (C(u + h, v + h) - C(u + h, v - h) - C(u - h, v + h) + C(u - h, v - h)) / (4 * h * h)
    assert cop.pdf([u, v]) == pytest.approx(fd, rel=1e-5)


def test_gumbel_density_matches_cdf_derivative():
    cop = GumbelCopula(theta=2.5)
    u, v, h = 0.4, 0.7, 1e-4
    C = lambda a, b: cop.cdf([a, b])
    fd = (C(u + h, v + h) - C(u + h, v - h) - C(u - h, v + h) + C(u - h, v - h)) / (4 * h * h)
    assert cop.pdf([u, v]) == pytest.approx(fd, rel=1e-5)


# ---------------------------------------------------------------- sampling

def _tau(U):
    return stats.kendalltau(U[:, 0], U[:, 1])[0]


@pytest.mark.parametrize("family,param", [
    ("t", 0.2), ("t", 0.5), ("t", 0.8),
    ("clayton", 0.5), ("clayton", 2.0), ("clayton", 5.0),
    ("gumbel", 1.5), ("gumbel", 2.0), ("gumbel", 4.0),
])
def test_sample_tau_matches_closed_form(family, param):
    cop = t2(param, 5.0) if family == "t" else make_copula(family)
    if family != "t":
        cop.theta = param
    U = cop.sample(100_000, random_state=7)
    assert U.min() > 0 and U.max() < 1
    assert abs(_tau(U) - tau_from_param(family, param)) < 0.02
    # two-stage draw: uniform first coordinate, conditional second
    u1 = np.random.default_rng(8).uniform(size=100_000)
    u2 = cop.conditional_draw(u1[:, None], random_state=9)[:, 0]
    assert abs(_tau(np.column_stack([u1, u2])) - tau_from_param(family, param)) < 0.02


def test_samplers_reproducible():
    for cop in (t2(0.3, 4.0), ClaytonCopula(theta=2.0, dim=4), GumbelCopula(theta=2.0)):
        np.testing.assert_array_equal(cop.sample(100, random_state=5),
                                      cop.sample(100, random_state=5))
        u = np.full(cop.dim - 1, 0.3)
        np.testing.assert_array_equal(cop.conditional_sample(u, 50, 5),
                                      cop.conditional_sample(u, 50, 5))


def test_independence_conditional_is_uniform():
    cop = StudentTCopula(corr=np.eye(2), df=7.0)
    for u in (0.05, 0.5, 0.97):
        draws = cop.conditional_sample([u], 100_000, random_state=1)[:, 0]
        assert abs(draws.mean() - 0.5) < 0.005


def test_strong_t_conditional_mean():
    cop = t2(0.99, 50.0)
    draws = cop.conditional_sample([0.9], 100_000, random_state=2)[:, 0]
    m = draws.mean()
    assert 0.8 < m < 0.95
    # oracle: rejection from joint draws with first coordinate near 0.9
    joint = cop.sample(2_000_000, random_state=3)
    near = joint[np.abs(joint[:, 0] - 0.9) < 0.002, 1]
    assert near.size > 2000
    assert abs(m - near.mean()) < 0.005


def test_clayton_near_independence_conditional_ks():
    cop = ClaytonCopula(theta=1e-4)
    draws = cop.conditional_sample([0.2], 10_000, random_state=4)[:, 0]
    assert stats.kstest(draws, "uniform").statistic < 0.02


@pytest.mark.parametrize("dim,d1", [(2, 1), (4, 1), (4, 3), (5, 2)])
def test_clayton_closed_form_matches_root_finding(dim, d1):
    cop = ClaytonCopula(theta=1.3, dim=dim)
    rng = np.random.default_rng(dim * 10 + d1)
    u_cond = rng.uniform(0.05, 0.95, size=(200, d1))
    draws = cop.conditional_draw(u_cond, random_state=11)
    w = np.random.default_rng(11).uniform(size=(200, dim - d1))
    prev = u_cond
    for i in range(dim - d1):
        root = invert_increasing(lambda v: cop.conditional_cdf(v, prev), w[:, i])
        np.testing.assert_allclose(draws[:, i], root, atol=1e-8)
        prev = np.column_stack([prev, draws[:, i]])


def test_t_conditional_parameters():
    R = np.array([[1.0, 0.5, 0.2], [0.5, 1.0, 0.4], [0.2, 0.4, 1.0]])
    cop = StudentTCopula(corr=R, df=5.0)
    u = np.array([0.3, 0.8])
    loc, scale, df = cop.conditional_params(u)
    x1 = stats.t.ppf(u, 5.0)
    R11, R21 = R[:2, :2], R[2:, :2]
    a = np.linalg.solve(R11, x1)
    assert df == 7.0
    np.testing.assert_allclose(loc, R21 @ a, rtol=1e-12)
    schur = R[2:, 2:] - R21 @ np.linalg.solve(R11, R21.T)
    np.testing.assert_allclose(scale, (5.0 + x1 @ a) / 7.0 * schur, rtol=1e-12)


def test_conditional_block_validation():
    cop = t2(0.3, 5.0)
    with pytest.raises(DataError):
        cop.conditional_sample([0.3, 0.4], 10)
    with pytest.raises(DataError):
        cop.conditional_sample([1.0], 10)


def test_invert_increasing_failure_is_loud():
    from rvcopula import NumericalError

    # a step function has no root at 0.5 and bisection cannot close the bracket fast
    with pytest.raises(NumericalError):
        invert_increasing(lambda x: np.where(x < 0.3, 0.0, 1.0), np.array([0.5]), max_iter=5)


def test_nearest_correlation():
    R = np.array([[1.0, 0.99, -0.99], [0.99, 1.0, 0.99], [-0.99, 0.99, 1.0]])
    P, clipped = nearest_correlation(R)
    assert clipped
    np.testing.assert_allclose(np.diag(P), 1.0)
    assert np.linalg.eigvalsh(P)[0] > 0
    Q, clipped = nearest_correlation(np.eye(3))
    assert not clipped and np.array_equal(Q, np.eye(3))


def test_json_roundtrip():
    R = np.array([[1.0, 0.5, 0.2], [0.5, 1.0, 0.4], [0.2, 0.4, 1.0]])
    for cop in (StudentTCopula(corr=R, df=6.5), ClaytonCopula(theta=2.0, dim=3),
                GumbelCopula(theta=1.7)):
        data = json.loads(json.dumps(cop.to_dict()))
        assert set(data) >= {"family", "dim"}
        back = copula_from_dict(data)
        u = np.full(cop.dim, 0.37)
        assert back.pdf(u) == pytest.approx(cop.pdf(u), rel=1e-14)


def test_gumbel_is_bivariate_only():
    with pytest.raises(DataError):
        GumbelCopula(theta=2.0, dim=3)
    with pytest.raises(ValueError):
        make_copula("frank")
