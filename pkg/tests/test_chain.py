import math

import numpy as np
import pytest

from mlgrf.chain import (
    ChainError,
    ChainState,
    DiagnosticsError,
    accept_reject,
    autocorrelation,
    iact,
    init_state,
    mh_step_single,
    mh_step_twolevel,
    ml_estimate,
    pcn_propose,
    plan_allocation,
    run_single_level,
    run_two_level,
    subsample_rate,
    subsampled_mean,
)
from mlgrf.noise import RngStreams
from mlgrf.sampler import sample_prior


def flat_forward(u):
    return 0.0, float(np.sum(u))


class TestProposal:
    def test_combination_coefficients(self, small_2d, spde_cfg, streams):
        _, ops, _ = small_2d
        cur = sample_prior(ops[0], spde_cfg, streams)
        psi = sample_prior(ops[0], spde_cfg, streams)
        beta = math.sqrt(0.3)
        prop = pcn_propose(cur, psi, beta)
        a = 0.8366600265340756  # sqrt(0.7)
        assert np.allclose(prop.u, a * cur.u + beta * psi.u)
        assert np.allclose(prop.rho, a * cur.rho + beta * psi.rho)
        assert np.allclose(prop.b.b, a * cur.b.b + beta * psi.b.b)
        assert prop.b.provenance == "combined"

    def test_beta_validation(self, small_2d, spde_cfg, streams):
        _, ops, _ = small_2d
        cur = sample_prior(ops[0], spde_cfg, streams)
        psi = sample_prior(ops[0], spde_cfg, streams)
        for bad in (0.0, -0.5, 1.5):
            with pytest.raises(ChainError):
                pcn_propose(cur, psi, bad)

    def test_level_mismatch(self, small_2d, spde_cfg, streams):
        _, ops, _ = small_2d
        cur = sample_prior(ops[0], spde_cfg, streams)
        psi = sample_prior(ops[1], spde_cfg, streams)
        with pytest.raises(ChainError):
            pcn_propose(cur, psi, 0.5)


class TestAcceptReject:
    def test_edge_cases(self, streams):
        assert accept_reject(0.0, streams, 0)
        assert accept_reject(5.0, streams, 0)
        assert not accept_reject(-math.inf, streams, 0)

    def test_bernoulli_rate(self):
        s = RngStreams(555)
        n = 4000
        hits = sum(accept_reject(math.log(0.5), s, 0) for _ in range(n))
        se = math.sqrt(0.25 / n)
        assert abs(hits / n - 0.5) < 5 * se


class TestKernels:
    def test_single_level_flat_likelihood_always_accepts(
        self, small_2d, spde_cfg, streams
    ):
        _, ops, _ = small_2d
        state = init_state(ops[1], spde_cfg, flat_forward, streams)
        rec, state = run_single_level(
            ops[1], spde_cfg, flat_forward, 0.5, 50, streams, state=state
        )
        assert rec.acceptance_rate == 1.0
        assert rec.steps == 50

    def test_two_level_bookkeeping_forced_accept(self, small_2d, spde_cfg, streams):
        _, ops, transfers = small_2d
        coarse = init_state(ops[1], spde_cfg, flat_forward, streams)
        fine = init_state(ops[0], spde_cfg, flat_forward, streams)
        new_fine, new_coarse, paired, y, accepted = mh_step_twolevel(
            ops[0], transfers[0], spde_cfg, fine, flat_forward,
            ops[1], coarse, flat_forward, 0.5, 3, streams, force_accept=True,
        )
        assert accepted
        assert paired is new_coarse
        assert y == pytest.approx(new_fine.qoi - new_coarse.qoi)
        assert new_fine is not fine
        # the accepted proposal's coarse restriction is exactly the
        # advanced coarse state's noise vector
        restricted = transfers[0].P.T @ new_fine.real.b.b
        assert np.abs(restricted - new_coarse.real.b.b).max() < 1e-12

    def test_two_level_rejection_keeps_coupled_pair(
        self, small_2d, spde_cfg, streams
    ):
        _, ops, transfers = small_2d
        calls = iter(range(10**6))
        # each successive likelihood call is vastly worse, so every
        # proposal after the initial state is rejected
        reject_forward = lambda u: (-1e6 * next(calls), float(np.sum(u)))
        coarse = init_state(ops[1], spde_cfg, flat_forward, streams)
        fine = init_state(ops[0], spde_cfg, reject_forward, streams)
        new_fine, new_coarse, paired, y, accepted = mh_step_twolevel(
            ops[0], transfers[0], spde_cfg, fine, reject_forward,
            ops[1], coarse, flat_forward, 0.5, 2, streams, paired_coarse=coarse,
        )
        assert not accepted
        assert new_fine is fine
        assert paired is coarse
        assert new_coarse is not coarse
        assert y == pytest.approx(fine.qoi - coarse.qoi)

    def test_two_level_requires_positive_t(self, small_2d, spde_cfg, streams):
        _, ops, transfers = small_2d
        coarse = init_state(ops[1], spde_cfg, flat_forward, streams)
        fine = init_state(ops[0], spde_cfg, flat_forward, streams)
        with pytest.raises(ChainError):
            mh_step_twolevel(
                ops[0], transfers[0], spde_cfg, fine, flat_forward,
                ops[1], coarse, flat_forward, 0.5, 0, streams,
            )

    def test_run_two_level_lengths(self, small_2d, spde_cfg, streams):
        _, ops, transfers = small_2d
        rec, ys, fs, cs = run_two_level(
            ops[0], transfers[0], spde_cfg, flat_forward,
            ops[1], flat_forward, 0.5, 2, 20, streams,
        )
        assert rec.steps == len(ys) == 20
        assert fs.real.level == 0 and cs.real.level == 1


class TestAutocorrelation:
    def test_lag_zero_is_one(self):
        x = np.random.default_rng(0).normal(size=500)
        assert autocorrelation(x, 0) == pytest.approx(1.0)

    def test_ar1_decay(self):
        rng = np.random.default_rng(1)
        n = 100_000
        phi = 0.5
        x = np.empty(n)
        x[0] = rng.normal()
        eps = rng.normal(size=n)
        for i in range(1, n):
            x[i] = phi * x[i - 1] + eps[i]
        for lag in (1, 2, 3):
            assert abs(autocorrelation(x, lag) - phi**lag) < 0.02

    def test_validation(self):
        with pytest.raises(DiagnosticsError):
            autocorrelation([1.0, 2.0, 3.0], 5)
        with pytest.raises(DiagnosticsError):
            autocorrelation(np.ones(10), 1)


def ar1_series(rho, n, seed):
    rng = np.random.default_rng(seed)
    x = np.empty(n)
    x[0] = rng.normal()
    eps = rng.normal(size=n) * math.sqrt(1 - rho**2)
    for i in range(1, n):
        x[i] = rho * x[i - 1] + eps[i]
    return x


class TestIact:
    def test_iid(self):
        x = np.random.default_rng(2).normal(size=10_000)
        tau, window = iact(x)
        assert 0.8 <= tau <= 1.2
        assert window >= 1

    def test_ar1_rho_09(self):
        # analytic IACT of AR(1): (1+rho)/(1-rho) = 19
        tau, _ = iact(ar1_series(0.9, 100_000, 3))
        assert abs(tau - 19.0) / 19.0 < 0.2

    def test_ar1_rho_05(self):
        tau, _ = iact(ar1_series(0.5, 100_000, 4))
        assert abs(tau - 3.0) / 3.0 < 0.15

    def test_subsample_rate(self):
        assert subsample_rate(ar1_series(0.5, 50_000, 5)) in (3, 4)

    def test_short_or_constant_series(self):
        with pytest.raises(DiagnosticsError):
            iact([1.0, 2.0])
        with pytest.raises(DiagnosticsError):
            iact(np.ones(100))


class TestEstimates:
    def test_subsampled_mean_indices(self):
        x = np.arange(20, dtype=float)
        # burn_in=4, t=3 -> indices 6, 9, 12, 15, 18
        assert subsampled_mean(x, 4, 3) == pytest.approx(12.0)
        assert subsampled_mean(x, 4, 3, n_samples=2) == pytest.approx(7.5)
        with pytest.raises(DiagnosticsError):
            subsampled_mean(x, 4, 3, n_samples=10)
        with pytest.raises(DiagnosticsError):
            subsampled_mean(x, 25, 3)

    def test_ml_estimate_arithmetic(self):
        coarse = np.full(10, 2.0)
        y0 = np.full(10, 0.25)
        y1 = np.full(10, -0.5)
        est = ml_estimate(coarse, [y0, y1], t=[1, 2, 1], burn_in=[0, 0, 0])
        assert est == pytest.approx(2.0 + 0.25 - 0.5)
        with pytest.raises(ChainError):
            ml_estimate(coarse, [y0], t=[1], burn_in=[0])


class TestAllocation:
    def test_two_level_hand_computed(self):
        plan = plan_allocation(
            variance=[15.0, 5.0], cost=[10.0, 1.0], t_iact=[4.0, 5.0], eps=1.0
        )
        assert np.allclose(plan.cost_eff, [60.0, 5.0])
        assert np.allclose(plan.n_eff, [35.0, 70.0])
        assert np.allclose(plan.n_total, [140.0, 350.0])
        assert np.allclose(plan.burn_in, [8.0, 10.0])
        assert plan.total_cost == pytest.approx(35 * 60 + 70 * 5)

    def test_single_level_hand_computed(self):
        plan = plan_allocation(variance=[6.0], cost=[2.0], t_iact=[3.0], eps=1.0)
        assert np.allclose(plan.cost_eff, [6.0])
        assert np.allclose(plan.n_eff, [12.0])
        assert np.allclose(plan.n_total, [36.0])

    def test_three_level_hand_computed(self):
        plan = plan_allocation(
            variance=[2.0, 3.0, 8.0],
            cost=[2.0, 2.0, 2.0],
            t_iact=[1.0, 3.0, 1.0],
            eps=0.5,
        )
        assert np.allclose(plan.cost_eff, [8.0, 12.0, 2.0])
        assert np.allclose(plan.n_eff, [56.0, 56.0, 224.0])

    def test_validation(self):
        with pytest.raises(ChainError):
            plan_allocation([1.0], [1.0], [1.0], eps=0.0)
        with pytest.raises(ChainError):
            plan_allocation([1.0, -1.0], [1.0, 1.0], [1.0, 1.0], eps=1.0)
        with pytest.raises(ChainError):
            plan_allocation([1.0], [1.0, 2.0], [1.0], eps=1.0)
