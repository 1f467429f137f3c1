"""MCMC kernels, diagnostics, and the multilevel estimator.

Single-level steps use the preconditioned Crank-Nicolson proposal
sqrt(1-beta^2) u + beta psi with a prior draw psi, so acceptance depends
only on the likelihood ratio.  The two-level kernel advances a private
coarse chain, proposes by swapping the coarse noise modes to the advanced
coarse state (complement Crank-Nicolson-mixed), and emits the coupled
correction sample Y = Q_fine - Q_coarse.

pCN combinations are applied to (u, rho, b) jointly: by linearity of the
saddle system the combined b is exactly the noise vector of the combined
field, so prior densities stay evaluable along the chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .noise import NoiseVector, RngStreams, conditional_noise
from .sampler import (
    FieldRealization,
    SpdeConfig,
    sample_conditional,
    sample_prior,
    solve_spde,
)
from .spaces import LevelOperators, TransferPair


class ChainError(ValueError):
    pass


class DiagnosticsError(ValueError):
    pass


@dataclass
class ChainState:
    """Current state of one chain: field sample plus cached forward data."""

    real: FieldRealization
    log_like: float
    qoi: float


@dataclass
class ChainRecord:
    """Trajectory bookkeeping for one chain."""

    level: int
    beta: float
    qoi: list[float] = field(default_factory=list)
    log_like: list[float] = field(default_factory=list)
    accepted: list[bool] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.accepted)

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted)) if self.accepted else math.nan

    def record(self, state: ChainState, accepted: bool) -> None:
        self.qoi.append(state.qoi)
        self.log_like.append(state.log_like)
        self.accepted.append(accepted)


@dataclass
class MlmcmcPlan:
    """Per-level sample allocation for a target accuracy eps."""

    eps: float
    variance: np.ndarray
    cost: np.ndarray
    iact: np.ndarray
    cost_eff: np.ndarray
    n_eff: np.ndarray
    n_total: np.ndarray
    burn_in: np.ndarray

    @property
    def total_cost(self) -> float:
        return float(np.sum(self.n_eff * self.cost_eff))


# -- proposal and kernels -------------------------------------------------


def pcn_propose(current: FieldRealization, psi: FieldRealization, beta: float) -> FieldRealization:
    """sqrt(1-beta^2) * current + beta * psi, applied to u, rho and b."""
    if not 0.0 < beta <= 1.0:
        raise ChainError(f"beta must be in (0, 1], got {beta}")
    if current.level != psi.level:
        raise ChainError("proposal level mismatch")
    a = math.sqrt(1.0 - beta * beta)
    b_vec = a * current.b.b + beta * psi.b.b
    return FieldRealization(
        level=current.level,
        u=a * current.u + beta * psi.u,
        rho=a * current.rho + beta * psi.rho,
        b=NoiseVector(current.level, b_vec, "combined"),
        report=psi.report,
    )


def accept_reject(
    log_alpha: float, streams: RngStreams, level: int
) -> bool:
    if log_alpha >= 0.0:
        return True
    if log_alpha == -math.inf:
        return False
    return math.log(streams.uniform(level)) < log_alpha


def mh_step_single(
    ops: LevelOperators,
    cfg: SpdeConfig,
    state: ChainState,
    forward,
    beta: float,
    streams: RngStreams,
) -> tuple[ChainState, bool]:
    """One single-level pCN Metropolis-Hastings step.

    ``forward`` maps a field u to (log likelihood, QoI).
    """
    psi = sample_prior(ops, cfg, streams)
    prop = pcn_propose(state.real, psi, beta)
    log_like, qoi = forward(prop.u)
    if accept_reject(log_like - state.log_like, streams, ops.level):
        return ChainState(prop, log_like, qoi), True
    return state, False


def twolevel_propose(
    fine_ops: LevelOperators,
    transfer: TransferPair,
    cfg: SpdeConfig,
    current: FieldRealization,
    coarse_new: FieldRealization,
    beta: float,
    streams: RngStreams,
) -> FieldRealization:
    """Two-level pCN proposal.

    The coarse modes of the noise vector are *replaced* by the advanced
    coarse state's noise (so the restriction of the proposal is exactly the
    coarse sample and the pair stays coupled), while the hierarchical
    complement is Crank-Nicolson-mixed with fresh complement noise.  Mixing
    the coarse modes as well would cap the fine-coarse correlation at
    roughly sqrt(1-beta^2) and destroy the variance decay of Y.
    """
    if not 0.0 < beta <= 1.0:
        raise ChainError(f"beta must be in (0, 1], got {beta}")
    if current.level != fine_ops.level or coarse_new.level != fine_ops.level + 1:
        raise ChainError("proposal level mismatch")
    a = math.sqrt(1.0 - beta * beta)
    lift = transfer.Pi.T @ coarse_new.b.b
    comp_old = current.b.b - transfer.Pi.T @ (transfer.P.T @ current.b.b)
    fresh = conditional_noise(fine_ops, transfer, coarse_new.b, streams)
    comp_fresh = fresh.b - lift
    b_prop = lift + a * comp_old + beta * comp_fresh
    return solve_spde(fine_ops, cfg, NoiseVector(fine_ops.level, b_prop, "combined"))


def mh_step_twolevel(
    fine_ops: LevelOperators,
    transfer: TransferPair,
    cfg: SpdeConfig,
    fine_state: ChainState,
    fine_forward,
    coarse_ops: LevelOperators,
    coarse_state: ChainState,
    coarse_forward,
    beta: float,
    t_coarse: int,
    streams: RngStreams,
    paired_coarse: ChainState | None = None,
    force_accept: bool = False,
) -> tuple[ChainState, ChainState, ChainState, float, bool]:
    """One two-level step.

    Advances the auxiliary coarse chain by ``t_coarse`` single-level steps,
    proposes by swapping the coarse noise modes to the advanced coarse state
    (complement Crank-Nicolson-mixed), and accepts with the two-level ratio

        alpha = min{1, [L_f(prop) L_c(paired)] / [L_f(cur) L_c(advanced)]},

    where ``paired_coarse`` is the coarse state whose noise equals the
    coarse restriction of the current fine state (maintained across steps:
    it is updated to the advanced state on acceptance and kept on
    rejection, so the ratio is the exact Metropolis-Hastings correction for
    the independence-type move on the coarse modes).  The correction sample
    pairs the fine state with its coupled coarse state:
    Y = Q_fine - Q_paired.

    Returns (fine state, coarse state, paired coarse state, Y, accepted).
    """
    if t_coarse < 1:
        raise ChainError("t_coarse must be >= 1")
    if paired_coarse is None:
        paired_coarse = coarse_state
    for _ in range(t_coarse):
        coarse_state, _ = mh_step_single(
            coarse_ops, cfg, coarse_state, coarse_forward, beta, streams
        )
    prop = twolevel_propose(
        fine_ops, transfer, cfg, fine_state.real, coarse_state.real, beta, streams
    )
    log_like, qoi = fine_forward(prop.u)
    log_alpha = (log_like + paired_coarse.log_like) - (
        fine_state.log_like + coarse_state.log_like
    )
    accepted = force_accept or accept_reject(log_alpha, streams, fine_ops.level)
    if accepted:
        fine_state = ChainState(prop, log_like, qoi)
        paired_coarse = coarse_state
    y = fine_state.qoi - paired_coarse.qoi
    return fine_state, coarse_state, paired_coarse, y, accepted


def init_state(ops: LevelOperators, cfg: SpdeConfig, forward, streams: RngStreams) -> ChainState:
    """Fresh chain state from a prior draw."""
    real = sample_prior(ops, cfg, streams)
    log_like, qoi = forward(real.u)
    return ChainState(real, log_like, qoi)


def run_single_level(
    ops: LevelOperators,
    cfg: SpdeConfig,
    forward,
    beta: float,
    n_steps: int,
    streams: RngStreams,
    state: ChainState | None = None,
) -> tuple[ChainRecord, ChainState]:
    """Run a single-level pCN chain for ``n_steps`` steps."""
    if state is None:
        state = init_state(ops, cfg, forward, streams)
    rec = ChainRecord(level=ops.level, beta=beta)
    for _ in range(n_steps):
        state, acc = mh_step_single(ops, cfg, state, forward, beta, streams)
        rec.record(state, acc)
    return rec, state


def run_two_level(
    fine_ops: LevelOperators,
    transfer: TransferPair,
    cfg: SpdeConfig,
    fine_forward,
    coarse_ops: LevelOperators,
    coarse_forward,
    beta: float,
    t_coarse: int,
    n_steps: int,
    streams: RngStreams,
    fine_state: ChainState | None = None,
    coarse_state: ChainState | None = None,
) -> tuple[ChainRecord, list[float], ChainState, ChainState]:
    """Run the two-level kernel; returns the fine-chain record and the Y
    series alongside the final states."""
    if coarse_state is None:
        coarse_state = init_state(coarse_ops, cfg, coarse_forward, streams)
    if fine_state is None:
        psi = sample_conditional(fine_ops, transfer, coarse_state.real, cfg, streams)
        ll, qoi = fine_forward(psi.u)
        fine_state = ChainState(psi, ll, qoi)
    rec = ChainRecord(level=fine_ops.level, beta=beta)
    ys: list[float] = []
    # the conditional initialization makes the coarse state the exact
    # restriction of the fine state, so it seeds the coupled pair
    paired = coarse_state
    for _ in range(n_steps):
        fine_state, coarse_state, paired, y, acc = mh_step_twolevel(
            fine_ops, transfer, cfg, fine_state, fine_forward,
            coarse_ops, coarse_state, coarse_forward, beta, t_coarse, streams,
            paired_coarse=paired,
        )
        rec.record(fine_state, acc)
        ys.append(y)
    return rec, ys, fine_state, coarse_state


# -- diagnostics ----------------------------------------------------------


def autocorrelation(series, lag: int) -> float:
    """Normalized autocorrelation estimate at one lag.

    Uses the 1/N (population) variance normalization, so the lag-0 value
    is exactly 1.
    """
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    if not 0 <= lag < n:
        raise DiagnosticsError(f"lag {lag} out of range for series of length {n}")
    mu = x.mean()
    var = np.mean((x - mu) ** 2)
    if var == 0.0:
        raise DiagnosticsError("series has zero variance")
    d = x - mu
    return float(np.dot(d[: n - lag], d[lag:]) / ((n - lag) * var))


def _acf_fft(x: np.ndarray) -> np.ndarray:
    """All-lag autocorrelations with the same normalization as
    ``autocorrelation``; FFT-based."""
    n = x.shape[0]
    d = x - x.mean()
    var = np.mean(d**2)
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(d, m)
    acov = np.fft.irfft(f * np.conjugate(f), m)[:n]
    return acov / (var * (n - np.arange(n)))


def iact(series, c: float = 5.0) -> tuple[float, int]:
    """Integrated autocorrelation time with an adaptive window.

    tau_hat(M) = 1 + 2 sum_{lag<=M} rho(lag); the window is the smallest M
    with M >= c * tau_hat(M) (c = 5 by default), keeping M << N.  Returns
    (tau_hat, M).
    """
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    if n < 4:
        raise DiagnosticsError("series too short for an IACT estimate")
    if np.all(x == x[0]):
        raise DiagnosticsError("series has zero variance")
    rho = _acf_fft(x)
    taus = 1.0 + 2.0 * np.cumsum(rho[1:])
    for m in range(1, n - 1):
        if m >= c * taus[m - 1]:
            return float(taus[m - 1]), m
    raise DiagnosticsError("no valid IACT window found; series too short")


def subsample_rate(series, c: float = 5.0) -> int:
    """t = ceil(tau_hat), floored at 1."""
    tau, _ = iact(series, c=c)
    return max(1, math.ceil(tau))


def subsampled_mean(series, burn_in: int, t: int, n_samples: int | None = None) -> float:
    """Mean over samples at indices (burn_in + i*t), i = 1..n_samples."""
    x = np.asarray(series, dtype=float)
    idx = np.arange(burn_in + t - 1, x.shape[0], t)
    if n_samples is not None:
        if idx.shape[0] < n_samples:
            raise DiagnosticsError(
                f"need {n_samples} subsamples but only {idx.shape[0]} available"
            )
        idx = idx[:n_samples]
    if idx.size == 0:
        raise DiagnosticsError("series too short for the requested subsampling")
    return float(x[idx].mean())


def ml_estimate(
    coarse_q: np.ndarray,
    y_series: list[np.ndarray],
    t: list[int],
    burn_in: list[int],
    n_samples: list[int | None] | None = None,
) -> float:
    """Multilevel posterior estimate: subsampled coarse mean plus the sum
    of subsampled correction means.

    ``y_series[l]`` is the Y series for level l (l = 0..L-1); ``t`` and
    ``burn_in`` are ordered fine (index 0) to coarse (index L).
    """
    L = len(y_series)
    if len(t) != L + 1 or len(burn_in) != L + 1:
        raise ChainError("t and burn_in must have one entry per level")
    if n_samples is None:
        n_samples = [None] * (L + 1)
    est = subsampled_mean(coarse_q, burn_in[L], t[L], n_samples[L])
    for l in range(L):
        est += subsampled_mean(y_series[l], burn_in[l], t[l], n_samples[l])
    return est


def plan_allocation(variance, cost, t_iact, eps: float) -> MlmcmcPlan:
    """Sample allocation from per-level variance, cost and IACT.

    Inputs ordered fine (index 0) to coarse (index L); index L refers to
    the coarsest Q chain, indices l < L to the Y_l correction chains.
    The coarsest effective cost is t_L * C_L (no coarser auxiliary chain).
    """
    if eps <= 0:
        raise ChainError("eps must be positive")
    V = np.asarray(variance, dtype=float)
    C = np.asarray(cost, dtype=float)
    t = np.asarray(t_iact, dtype=float)
    if not (V.shape == C.shape == t.shape):
        raise ChainError("variance, cost and IACT arrays must have equal length")
    if np.any(V <= 0) or np.any(C <= 0) or np.any(t <= 0):
        raise ChainError("variance, cost and IACT must all be positive")
    L = V.shape[0] - 1
    c_eff = np.empty_like(C)
    c_eff[L] = t[L] * C[L]
    for l in range(L):
        c_eff[l] = t[l] * (C[l] + t[l + 1] * C[l + 1])
    total = np.sum(np.sqrt(V * c_eff))
    n_eff = (2.0 / eps**2) * total * np.sqrt(V / c_eff)
    return MlmcmcPlan(
        eps=eps,
        variance=V,
        cost=C,
        iact=t,
        cost_eff=c_eff,
        n_eff=n_eff,
        n_total=t * n_eff,
        burn_in=2.0 * t,
    )
