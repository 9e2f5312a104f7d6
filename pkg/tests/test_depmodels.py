import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcoe.depmodels import (
    Autoregressive,
    Block,
    Explicit,
    Factor,
    Identity,
    InvalidSpec,
    RandomBlock,
    build_covariance,
    covariance_from_dict,
    covariance_to_dict,
    dependence_summary,
    phase_boundary,
    random_block_sizes,
    theory_boundaries,
)
from dcoe.numcore import RngStream, cholesky


def test_identity_and_ar_and_block_examples():
    np.testing.assert_array_equal(build_covariance(Identity(), 4), np.eye(4))
    np.testing.assert_allclose(
        build_covariance(Autoregressive(0.2), 3), [[1, 0.2, 0.04], [0.2, 1, 0.2], [0.04, 0.2, 1]], atol=1e-15
    )
    b = np.array([[1, 0.5], [0.5, 1]])
    expected = np.block([[b, np.zeros((2, 2))], [np.zeros((2, 2)), b]])
    np.testing.assert_array_equal(build_covariance(Block(2, 0.5), 4), expected)


def test_block_truncates_last_block():
    sigma = build_covariance(Block(3, 0.5), 7)
    assert sigma[6, 5] == 0.0 and sigma[6, 6] == 1.0
    assert sigma[3, 5] == 0.5


def test_random_block_sizes_fill_p():
    spec = RandomBlock(10, 100, 0.5)
    sizes = random_block_sizes(spec, 2000, RngStream(3))
    assert sum(sizes) == 2000
    assert all(10 <= k <= 100 for k in sizes[:-1]) and 1 <= sizes[-1] <= 100


def test_factor_model_structure():
    sigma = build_covariance(Factor(0.5, h_seed=4), 50)
    assert np.allclose(np.diag(sigma), 1.0)
    assert np.allclose(sigma, sigma.T)
    np.testing.assert_array_equal(sigma, build_covariance(Factor(0.5, h_seed=4), 50))


def test_explicit_requires_correlation_matrix():
    with pytest.raises(InvalidSpec):
        Explicit(np.array([[2.0, 0.0], [0.0, 1.0]]))
    m = np.array([[1.0, 0.3], [0.3, 1.0]])
    np.testing.assert_array_equal(build_covariance(Explicit(m), 2), m)


@pytest.mark.parametrize("bad", [lambda: Autoregressive(1.0), lambda: Block(0, 0.5), lambda: RandomBlock(5, 2, 0.5)])
def test_invalid_specs(bad):
    with pytest.raises(InvalidSpec):
        bad()


def ar_l1_closed_form(lam: float, p: int) -> float:
    # p + 2 * sum_{d=1}^{p-1} (p - d) lam^d, summed exactly in closed form.
    s1 = lam * (1 - lam ** (p - 1)) / (1 - lam)
    s2 = lam * (1 - p * lam ** (p - 1) + (p - 1) * lam**p) / (1 - lam) ** 2
    return p + 2 * (p * s1 - s2)


def test_dependence_summary_examples():
    d = dependence_summary(np.eye(50))
    assert d.sigma_l1 == 50 and d.rho_bar == pytest.approx(1 / 50) and d.eta == pytest.approx(1.0)

    d = dependence_summary(build_covariance(Autoregressive(0.2), 2000))
    assert d.sigma_l1 == pytest.approx(ar_l1_closed_form(0.2, 2000), abs=1e-9)
    assert d.sigma_l1 == pytest.approx(2999.375, abs=0.01)
    assert d.rho_bar == pytest.approx(7.4984e-4, rel=1e-4)
    assert d.eta == pytest.approx(0.9467, abs=5e-5)

    d = dependence_summary(build_covariance(Block(40, 0.5), 2000))
    assert d.sigma_l1 == pytest.approx(50 * (40 + 780 * 0.5 * 2))
    assert d.rho_bar == pytest.approx(0.01025)
    assert d.eta == pytest.approx(0.6026, abs=5e-5)


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=3, max_value=5000), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_eta_monotone_in_rho_bar(p, a, b):
    # eta = -ln(rho_bar)/ln(p): larger average correlation, smaller eta.
    lo, hi = sorted((a, b))
    r_lo, r_hi = 1 / p + lo * (1 - 1 / p), 1 / p + hi * (1 - 1 / p)
    eta = lambda r: -math.log(r) / math.log(p)
    assert eta(r_hi) <= eta(r_lo) + 1e-12


def test_eta_clamped_and_raw_kept():
    sigma = np.full((4, 4), 1.0)
    d = dependence_summary(sigma)
    assert d.eta == 0.0 and d.eta_raw == pytest.approx(0.0, abs=1e-12)


def test_theory_examples():
    b = theory_boundaries(0.3, 0.95, 2000)
    assert b.mu1 == pytest.approx(2.1356, abs=1e-4)
    assert b.mu1 == pytest.approx(math.sqrt(0.6 * math.log(2000)))
    # 1.687 in the worked example corresponds to the unrounded AR(0.2) eta.
    assert theory_boundaries(0.3, 0.9466830741, 2000).mu2 == pytest.approx(1.687, abs=1e-3)
    assert b.mu2 == pytest.approx(1.69, abs=0.02)
    assert theory_boundaries(0.3, 0.57, 2000).mu2 == pytest.approx(2.927, abs=1e-3)
    assert theory_boundaries(0.3, 0.23, 2000).mu2 == pytest.approx(3.69, abs=0.03)
    assert b.mu_min == min(b.mu1, b.mu2)


def test_inner_clamp_variant():
    b = theory_boundaries(0.3, 0.95, 2000, clamp="inner")
    assert b.mu2 == pytest.approx(math.sqrt(4 * math.log(math.log(2000))))
    with pytest.raises(ValueError):
        theory_boundaries(0.3, 0.95, 2000, clamp="middle")


@pytest.mark.parametrize("args", [(0.0, 0.5, 100), (1.1, 0.5, 100), (0.3, -0.1, 100), (0.3, 0.5, 2)])
def test_theory_domain_errors(args):
    with pytest.raises(ValueError):
        theory_boundaries(*args)


@pytest.mark.parametrize("g, e, expected", [(0.75, 1.0, 0.5), (0.3, 0.95, -0.35), (0.5, 1.0, 0.0)])
def test_phase_boundary(g, e, expected):
    assert phase_boundary(g, e) == pytest.approx(expected, abs=1e-15)


def test_mu_min_equals_mu2_on_grid():
    for p in (100, 1000, 2000, 10_000, 10**6):
        lp, llp = math.log(p), math.log(math.log(p))
        for g in np.linspace(0.05, 1.0, 40):
            b = theory_boundaries(float(g), 1.0, p)
            if (4 * g - 2) * lp + 4 * llp < 2 * g * lp:
                assert b.mu_min == b.mu2


@pytest.mark.parametrize(
    "spec",
    [Identity(), Autoregressive(0.2), Block(40, 0.5), RandomBlock(10, 100, 0.5, seed=1), Factor(0.5, h_seed=2024)],
)
@pytest.mark.parametrize("p", [50, 500, 4000])
def test_shipped_variants_factorize(spec, p):
    cholesky(build_covariance(spec, p, RngStream(1)))


@pytest.mark.parametrize(
    "spec", [Identity(), Autoregressive(0.2), Block(40, 0.5), RandomBlock(10, 100, 0.5, seed=3), Factor(0.5, h_seed=9)]
)
def test_covariance_dict_round_trip(spec):
    assert covariance_from_dict(covariance_to_dict(spec)) == spec


def test_covariance_from_dict_rejects_unknown():
    with pytest.raises(ValueError):
        covariance_from_dict({"type": "toeplitz"})
