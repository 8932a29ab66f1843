import numpy as np
import pytest
from scipy.stats import norm

from collapsebounds.core import Csl, Dcsl, DomainError, GasMoments, Protocol, QmOnly
from collapsebounds.exclusion import (InconsistentProtocolError, MeasurementBand,
                                      analytic_csl_bound, boost_exclusion, cl_interval,
                                      csl_excess_x2, default_axes, log_axis, scan_exclusion)
from collapsebounds.pipeline import final_moments

P = Protocol()
# CSL excess of x2 at lambda = 1e-8, r_C = 1e-7 from the mpmath reference
EXCESS_REF = 1.8855505521459679374e-8
QM_X2_REF = 5.523507901541029509e-8
AXES = default_axes()


def test_interval_reference():
    lo, hi = cl_interval(120e-6, 40e-6, 0.95)
    z = norm.ppf(0.975)
    assert (lo, hi) == pytest.approx((120e-6 - z * 40e-6, 120e-6 + z * 40e-6), rel=1e-14)
    assert (lo, hi) == pytest.approx((41.6e-6, 198.4e-6), abs=0.01e-6)


def test_interval_edges():
    assert cl_interval(5.0, 1.0, 0.0) == (5.0, 5.0)
    lo, hi = cl_interval(0.0, 1.0, 0.6827)
    assert hi == pytest.approx(1.0, rel=1e-4) and lo == -hi
    for bad in ((0.0, 1.0, 1.0), (0.0, 1.0, -0.1), (0.0, 0.0, 0.5)):
        with pytest.raises(DomainError):
            cl_interval(*bad)
    with pytest.raises(DomainError):
        MeasurementBand(level=1.2)


def test_excess_reference():
    assert csl_excess_x2(P, 1e-8, 1e-7) == pytest.approx(EXCESS_REF, rel=1e-12)


def test_analytic_bound():
    K, limit = analytic_csl_bound(P)
    assert K == pytest.approx(EXCESS_REF / (1e-8 / 1e-14), rel=1e-12)
    hi = 120e-6 + norm.ppf(0.975) * 40e-6
    assert limit == pytest.approx((hi**2 - QM_X2_REF / 3) * 3 / K, rel=1e-12)
    K2, _ = analytic_csl_bound(P, reference=(3e-5, 2e-6))
    assert K2 == pytest.approx(K, rel=1e-10)


def test_analytic_bound_independent_of_initial_state():
    other = Protocol(initial=GasMoments(x2=2e-9, p2=3e-57, xp_sym=1e-33))
    assert csl_excess_x2(other, 1e-8, 1e-7) == pytest.approx(EXCESS_REF, rel=1e-12)


def test_inconsistent_protocol():
    with pytest.raises(InconsistentProtocolError):
        analytic_csl_bound(P, MeasurementBand(mean=1e-3, sigma=1e-5))


def test_csl_scan_matches_analytic_line():
    grid = scan_exclusion(P, Csl(1.0, 1.0), *AXES)
    _, limit = analytic_csl_bound(P)
    step = np.log10(AXES[0][1] / AXES[0][0])
    for rc, lam in grid.boundary():
        if lam is None:
            continue
        assert abs(np.log10(lam / (limit * rc**2))) <= step + 1e-9


def test_csl_excluded_set_upward_closed():
    grid = scan_exclusion(P, Csl(1.0, 1.0), *AXES)
    for row in grid.excluded:
        hits = np.flatnonzero(row)
        if hits.size:
            assert row[hits[0]:].all()
    assert not grid.failed.any()


def test_tiny_lambda_excludes_nothing():
    grid = scan_exclusion(P, Csl(1.0, 1.0), [1e-20], AXES[1])
    assert grid.excluded_count == 0
    assert all(lam is None for _, lam in grid.boundary())
    assert grid.boundary_at(1e-7) is None


def test_scan_independent_of_workers():
    lam, rc = log_axis(1e-12, 1e-2, 7), log_axis(1e-8, 1e-4, 5)
    a = scan_exclusion(P, Dcsl(1.0, 1.0, 1e-6), lam, rc, workers=1)
    b = scan_exclusion(P, Dcsl(1.0, 1.0, 1e-6), lam, rc, workers=3)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.excluded, b.excluded)
    assert a.model_tag == {"family": "dcsl", "t_csl": 1e-6}


def test_hot_dcsl_matches_csl():
    csl = scan_exclusion(P, Csl(1.0, 1.0), *AXES)
    hot = scan_exclusion(P, Dcsl(1.0, 1.0, 1e9), *AXES)
    assert (csl.excluded != hot.excluded).sum() == 0


def test_refined_lambda_axis_moves_boundary_by_one_cell():
    coarse = scan_exclusion(P, Csl(1.0, 1.0), log_axis(1e-20, 1e-2, 23), AXES[1][::6])
    fine = scan_exclusion(P, Csl(1.0, 1.0), log_axis(1e-20, 1e-2, 45), AXES[1][::6])
    for (_, a), (_, b) in zip(coarse.boundary(), fine.boundary()):
        if a is None or b is None:
            assert a is None and b is None
        else:
            assert abs(np.log10(a / b)) <= 1.0 + 1e-9


def test_scan_validation():
    with pytest.raises(DomainError):
        scan_exclusion(P, QmOnly(), [1e-8], [1e-7])
    with pytest.raises(DomainError):
        scan_exclusion(P, Csl(1.0, 1.0), [], [1e-7])
    with pytest.raises(DomainError):
        scan_exclusion(P, Csl(1.0, 1.0), [-1.0], [1e-7])


def test_failed_cells_are_marked(monkeypatch):
    from collapsebounds import exclusion

    def flaky(protocol, noise, kick_mode):
        if noise.lam > 1e-4:
            raise ArithmeticError("boom")
        return final_moments(protocol, noise, kick_mode)

    monkeypatch.setattr(exclusion, "final_moments", flaky)
    grid = scan_exclusion(P, Csl(1.0, 1.0), [1e-10, 1e-3], [1e-7])
    assert grid.failed.tolist() == [[False, True]]
    assert not grid.excluded[0, 1]
    assert "boom" in grid.errors[(0, 1)]


@pytest.mark.xfail(strict=True, reason="low-temperature dCSL also excludes cells where "
                   "dissipation weakens the kick; see the decisions ledger")
def test_cold_dcsl_region_inside_warm_region():
    cold = scan_exclusion(P, Dcsl(1.0, 1.0, 1e-12), *AXES)
    warm = scan_exclusion(P, Dcsl(1.0, 1.0, 1.0), *AXES)
    assert cold.excluded_count < warm.excluded_count
    assert not (cold.excluded & ~warm.excluded).any()


def test_cold_dcsl_region_smaller():
    cold = scan_exclusion(P, Dcsl(1.0, 1.0, 1e-12), *AXES)
    warm = scan_exclusion(P, Dcsl(1.0, 1.0, 1.0), *AXES)
    assert cold.excluded_count < warm.excluded_count


def test_boost_exclusion():
    lam, rc = log_axis(1e-20, 1e-2, 30), log_axis(1e-9, 1e-3, 20)
    none = boost_exclusion(P, [1.0], 0.0, lam, rc)[1.0]
    assert none.excluded_count == 0
    g1 = boost_exclusion(P, [1.0], 1e7, lam, rc)[1.0]
    g10 = boost_exclusion(P, [1.0], 1e8, lam, rc)[1.0]
    assert np.allclose(g10.values, 10 * g1.values, rtol=1e-14)
    assert g10.excluded_count >= g1.excluded_count
    grids = boost_exclusion(P, [1e-12, 1.0, 1e6], 1e7, lam, rc)
    counts = [grids[T].excluded_count for T in (1e-12, 1.0, 1e6)]
    assert len(set(counts)) > 1
    with pytest.raises(DomainError):
        boost_exclusion(P, [1.0], -1.0, lam, rc)
