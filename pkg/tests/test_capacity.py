import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group

from flowcap.capacity import (
    LhatEstimate,
    capacity_report,
    depth_lower_bound,
    householder_lhat_bound,
    householder_perturbation,
    lhat_monte_carlo,
    local_planar_lhat_bound,
    local_planar_smoothness_term,
    local_planar_terms,
    loglog_slope,
    scaling_study,
)
from flowcap.densities import GaussianD, RadialDensity, standard_gaussian
from flowcap.errors import ContractViolation, ProposalCoverageError, UnboundedDepthError
from flowcap.flows import FlowStack, Planar

from support import grid_l1_2d, random_householder, random_mog, random_spd

mpmath.mp.dps = 40


def term1_oracle(d, tau):
    return mpmath.gammainc(mpmath.mpf(d) / tau, 0, mpmath.mpf(d) ** tau, regularized=True)


def term2_oracle(d, tau):
    d = mpmath.mpf(d)
    slice_factor = mpmath.gamma(d / 2) / (mpmath.sqrt(mpmath.pi) * mpmath.gamma((d - 1) / 2))
    num = mpmath.quad(lambda r: mpmath.exp(-(r**tau)) * r ** (d - 2) * mpmath.log(1 + r), [d, 4 * d**2, mpmath.inf])
    den = mpmath.gamma(d / tau) / tau
    return 2 * slice_factor * num / den


@pytest.mark.parametrize("d,tau", [(3, 0.5), (8, 0.5), (16, 0.5), (6, 0.3), (10, 0.8)])
def test_local_planar_terms_against_mpmath(d, tau):
    t1, t2 = local_planar_terms(d, tau)
    ref1 = term1_oracle(d, tau)
    if ref1 > 1e-300:
        assert t1 == pytest.approx(float(ref1), rel=1e-8)
    assert t2 == pytest.approx(float(term2_oracle(d, tau)), rel=1e-6)


def test_term1_series_survives_underflow():
    # log-space evaluation keeps the tiny mass finite and matching the oracle
    from flowcap.capacity import _log_lower_gamma_regularized

    ref = float(mpmath.log(term1_oracle(128, 0.5)))
    assert _log_lower_gamma_regularized(256.0, 128**0.5) == pytest.approx(ref, rel=1e-10)


def test_local_planar_bound_components():
    d, tau, c_h = 16, 0.5, 2.0
    t1, t2 = local_planar_terms(d, tau)
    smooth = local_planar_smoothness_term(d, tau, c_h)
    assert smooth == pytest.approx((1 + c_h) * c_h * tau / d)
    assert local_planar_lhat_bound(d, tau, c_h) == pytest.approx(c_h * (t1 + t2) + smooth)
    assert local_planar_lhat_bound(d, tau, 0.0) == 0.0


def test_local_planar_terms_reject_bad_input():
    with pytest.raises(ContractViolation):
        local_planar_terms(2, 0.5)
    with pytest.raises(ContractViolation):
        local_planar_terms(8, 1.5)


def test_term2_decays_like_d_to_the_minus_three_halves_up_to_log():
    dims = np.array([16, 32, 64, 128, 256])
    table = scaling_study("local_planar", dims, tau=0.5)
    slope = loglog_slope(dims, table.column("term2") / np.log1p(dims))
    assert slope == pytest.approx(-1.5, abs=0.2)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), d=st.integers(2, 8))
def test_householder_bound_invariant_under_rotation(seed, d):
    rng = np.random.default_rng(seed)
    S = random_spd(d, rng, 3.0)
    Q = ortho_group.rvs(d, random_state=rng) if d > 1 else np.eye(1)
    a, b = householder_lhat_bound(S), householder_lhat_bound(Q @ S @ Q.T)
    assert b.bound == pytest.approx(a.bound, rel=1e-12 * d * 10)
    assert b.tight == pytest.approx(a.tight, rel=1e-12 * d * 10)
    assert a.tight <= a.bound


def test_householder_bound_zero_for_identity():
    b = householder_lhat_bound(np.eye(5))
    assert b.bound == 0.0 and b.tight == 0.0


def test_householder_perturbation_entries():
    S = householder_perturbation(8, 1.0) - np.eye(8)
    assert np.allclose(np.abs(S), 8.0**-3)


def test_householder_mc_below_bound():
    rng = np.random.default_rng(0)
    d = 3
    cov = random_spd(d, rng, 2.0)
    p = GaussianD(np.zeros(d), cov)
    bound = householder_lhat_bound(cov)
    for _ in range(5):
        est = lhat_monte_carlo(p, random_householder(d, rng), n=60_000, seed=int(rng.integers(1 << 30)))
        assert est.value <= bound.tight + 3 * est.stderr


def test_lhat_mc_matches_grid_quadrature_2d():
    rng = np.random.default_rng(1)
    p = random_mog(2, 2, rng)
    layer = Planar([0.8, -0.5], [0.6, 0.9], 0.3, "tanh")
    est = lhat_monte_carlo(p, layer, n=200_000, seed=3)

    def pulled(Z):
        Y, ld = layer.forward(Z)
        return p._log_density(Y) + ld

    grid = grid_l1_2d(pulled, p._log_density, np.array([-14.0, -14.0]), np.array([14.0, 14.0]), 1201)
    assert abs(est.value - grid) <= 3 * est.stderr + 1e-4


def test_lhat_mc_reproducible_and_chunked():
    p = standard_gaussian(2)
    layer = Planar([0.5, 0.5], [1.0, 0.0], 0.0, "tanh")
    a = lhat_monte_carlo(p, layer, n=70_001, seed=9)
    b = lhat_monte_carlo(p, layer, n=70_001, seed=9)
    assert a == b and a.n == 70_001
    assert lhat_monte_carlo(p, layer, n=70_001, seed=10).value != a.value


def test_lhat_identity_is_zero():
    assert lhat_monte_carlo(standard_gaussian(3), FlowStack((), 3)).value == 0.0


class HalfLineProposal(GaussianD):
    """Samples the whole line but claims zero density on the negative half."""

    def _log_density(self, Z):
        return np.where(Z[:, 0] < 0, -np.inf, super()._log_density(Z))


def test_lhat_proposal_coverage_error():
    p = standard_gaussian(1)
    layer = Planar([0.5], [1.0], 0.0, "tanh")
    with pytest.raises(ProposalCoverageError):
        lhat_monte_carlo(p, layer, proposal=HalfLineProposal([0.0], [[1.0]]), n=1000)


def test_depth_bound_and_report():
    assert depth_lower_bound(1.0, 0.2, 0.1) == pytest.approx(8.0)
    assert depth_lower_bound(0.1, 0.2, 0.1) == 0.0
    with pytest.raises(UnboundedDepthError):
        depth_lower_bound(1.0, 0.2, 0.0)
    rep = capacity_report(1.2, lhat_estimate=LhatEstimate(0.2, 0.01, 100), lhat_bound=0.3)
    assert rep.epsilon == pytest.approx(0.6)
    assert rep.depth_lower_bound == pytest.approx(0.6 / 0.2)
    with pytest.raises(ContractViolation):
        capacity_report(1.0)


def test_scaling_study_slopes():
    h = scaling_study("householder", [64, 128, 256, 512], kappa=1.0)
    assert h.slope == pytest.approx(1.0, abs=0.05)
    c = scaling_study("constant", [2, 4, 8])
    assert c.slope == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ContractViolation):
        scaling_study("householder", [8, 4, 16])
    with pytest.raises(ContractViolation):
        scaling_study("mystery", [2, 4, 8])


def test_flat_core_density_normalized_for_capacity_target():
    # the target of the local planar study integrates to one
    dens = RadialDensity(3, 0.5, "flat_core")
    assert dens.radial_cdf(np.array([1e6]))[0] == pytest.approx(1.0, abs=1e-12)
