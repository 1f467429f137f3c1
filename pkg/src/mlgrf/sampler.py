"""Mixed SPDE solves turning white noise into Gaussian random fields.

The saddle-point system

    [ M   B^T ] [rho]   [   0  ]
    [ B  -k2 W] [ u ] = [ -g b ]

is equivalent (eliminating rho) to A u = b with the scaled Schur
complement A = (kappa^2/g) W + (1/g) B M^{-1} B^T, so prior samples are
u ~ N(0, A^{-1} W A^{-1}).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .noise import NoiseVector, RngStreams, conditional_noise, decompose_noise, single_level_noise
from .spaces import LevelOperators, TransferPair


class SolverError(RuntimeError):
    pass


def matern_nu(dim: int) -> float:
    return 2.0 - dim / 2.0


def marginal_variance(kappa: float, g: float, dim: int) -> float:
    """Matern marginal variance implied by (kappa, g) on R^d."""
    nu = matern_nu(dim)
    return g**2 * math.gamma(nu) / (math.gamma(nu + dim / 2) * (4 * math.pi) ** (dim / 2) * kappa ** (2 * nu))


def derive_g(sigma2: float, lam: float, dim: int) -> tuple[float, float]:
    """Invert the marginal-variance formula: kappa = 1/lambda and the g
    giving marginal variance sigma2."""
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    if sigma2 <= 0 or lam <= 0:
        raise ValueError("sigma2 and lambda must be positive")
    kappa = 1.0 / lam
    nu = matern_nu(dim)
    g = math.sqrt(
        sigma2 * math.gamma(nu + dim / 2) * (4 * math.pi) ** (dim / 2) * kappa ** (2 * nu) / math.gamma(nu)
    )
    return kappa, g


@dataclass(frozen=True)
class SpdeConfig:
    """Whittle-Matern SPDE parameters and solver settings."""

    kappa: float
    g: float
    tol: float = 1e-10
    maxiter: int = 10000
    method: str = "lu"  # lu | schur_cg | minres
    inner_tol_factor: float = 0.01

    def __post_init__(self):
        if self.kappa <= 0 or self.g <= 0:
            raise ValueError("kappa and g must be positive")
        if self.method not in ("lu", "schur_cg", "minres"):
            raise ValueError(f"unknown solver method {self.method!r}")

    @classmethod
    def from_matern(cls, sigma2: float, lam: float, dim: int, **kw) -> "SpdeConfig":
        kappa, g = derive_g(sigma2, lam, dim)
        return cls(kappa=kappa, g=g, **kw)


@dataclass
class SolverReport:
    method: str
    iterations: int
    residual: float


@dataclass
class FieldRealization:
    """A Gaussian random field sample u with its flux variable and the
    noise vector that produced it."""

    level: int
    u: np.ndarray
    rho: np.ndarray
    b: NoiseVector
    report: SolverReport


# -- solver machinery ---------------------------------------------------


class _SpdeSolver:
    """Per-(ops, config) solver with cached factorizations."""

    def __init__(self, ops: LevelOperators, cfg: SpdeConfig):
        if ops.M is None:
            raise SolverError("SPDE solves require assembled RT operators (dim >= 2)")
        self.ops = ops
        self.cfg = cfg
        self.k2 = cfg.kappa**2
        self.g = cfg.g
        self._lu_saddle = None
        self._lu_mass = None

    # factorizations are built lazily; they depend only on (M, B, W, kappa)

    def _saddle_lu(self):
        if self._lu_saddle is None:
            ops = self.ops
            K = sp.bmat(
                [[ops.M, ops.B.T], [ops.B, -self.k2 * sp.diags(ops.W)]], format="csc"
            )
            self._lu_saddle = spla.splu(K)
        return self._lu_saddle

    def _mass_lu(self):
        if self._lu_mass is None:
            self._lu_mass = spla.splu(self.ops.M.tocsc())
        return self._lu_mass

    def mass_solve(self, rhs: np.ndarray, tol: float | None = None) -> np.ndarray:
        if self.cfg.method == "schur_cg":
            x, info = spla.cg(self.ops.M, rhs, rtol=tol or self.cfg.tol * self.cfg.inner_tol_factor,
                              atol=0.0, maxiter=self.cfg.maxiter)
            if info != 0:
                raise SolverError(f"inner mass CG failed to converge (info={info})")
            return x
        return self._mass_lu().solve(rhs)

    def apply_schur(self, u: np.ndarray) -> np.ndarray:
        """A u with A = (kappa^2 W + B M^{-1} B^T)/g."""
        ops = self.ops
        return (self.k2 * ops.W * u + ops.B @ self.mass_solve(ops.B.T @ u)) / self.g

    def residual(self, rho: np.ndarray, u: np.ndarray, b: np.ndarray) -> float:
        ops = self.ops
        r1 = ops.M @ rho + ops.B.T @ u
        r2 = ops.B @ rho - self.k2 * ops.W * u + self.g * b
        return math.sqrt(np.dot(r1, r1) + np.dot(r2, r2))

    def solve(self, b: np.ndarray) -> tuple[np.ndarray, np.ndarray, SolverReport]:
        ops, cfg = self.ops, self.cfg
        rhs_norm = self.g * np.linalg.norm(b)
        if rhs_norm == 0.0:
            rep = SolverReport(cfg.method, 0, 0.0)
            return np.zeros(ops.num_elements), np.zeros(ops.num_flux_dofs), rep

        if cfg.method == "lu":
            sol = self._saddle_lu().solve(
                np.concatenate([np.zeros(ops.num_flux_dofs), -self.g * b])
            )
            rho, u = sol[: ops.num_flux_dofs], sol[ops.num_flux_dofs:]
            iters = 1
        elif cfg.method == "schur_cg":
            iters = 0

            def count(_):
                nonlocal iters
                iters += 1

            A = spla.LinearOperator(
                (ops.num_elements, ops.num_elements), matvec=self.apply_schur
            )
            u, info = spla.cg(A, b, rtol=cfg.tol * 0.1, atol=0.0, maxiter=cfg.maxiter, callback=count)
            if info != 0:
                raise SolverError(f"Schur CG failed to converge (info={info})")
            rho = -self.mass_solve(ops.B.T @ u, tol=cfg.tol * cfg.inner_tol_factor)
        else:  # minres on the full saddle system
            K = sp.bmat([[ops.M, ops.B.T], [ops.B, -self.k2 * sp.diags(ops.W)]], format="csr")
            pre = sp.diags(
                np.concatenate([1.0 / ops.M.diagonal(), 1.0 / (self.k2 * ops.W)])
            )
            rhs = np.concatenate([np.zeros(ops.num_flux_dofs), -self.g * b])
            iters = 0

            def count(_):
                nonlocal iters
                iters += 1

            sol, info = spla.minres(K, rhs, M=pre, rtol=cfg.tol * 1e-3, maxiter=cfg.maxiter, callback=count)
            if info != 0:
                raise SolverError(f"MINRES failed to converge (info={info})")
            rho, u = sol[: ops.num_flux_dofs], sol[ops.num_flux_dofs:]

        res = self.residual(rho, u, b)
        if res > cfg.tol * rhs_norm:
            raise SolverError(
                f"saddle residual {res:.3e} exceeds tolerance {cfg.tol * rhs_norm:.3e}"
            )
        return u, rho, SolverReport(cfg.method, iters, res)


def get_solver(ops: LevelOperators, cfg: SpdeConfig) -> _SpdeSolver:
    key = ("spde", cfg.kappa, cfg.g, cfg.method, cfg.tol)
    if key not in ops._cache:
        ops._cache[key] = _SpdeSolver(ops, cfg)
    return ops._cache[key]


# -- public operations ---------------------------------------------------


def solve_spde(ops: LevelOperators, cfg: SpdeConfig, b: NoiseVector | np.ndarray) -> FieldRealization:
    """Solve the mixed system with RHS (0, -g b)."""
    if isinstance(b, np.ndarray):
        b = NoiseVector(ops.level, b, "combined")
    if b.level != ops.level:
        raise SolverError(f"noise level {b.level} does not match operator level {ops.level}")
    u, rho, rep = get_solver(ops, cfg).solve(b.b)
    return FieldRealization(ops.level, u, rho, b, rep)


def sample_prior(ops: LevelOperators, cfg: SpdeConfig, streams: RngStreams) -> FieldRealization:
    """Draw u ~ N(0, A^{-1} W A^{-1})."""
    return solve_spde(ops, cfg, single_level_noise(ops, streams))


def sample_conditional(
    ops_fine: LevelOperators,
    transfer: TransferPair,
    coarse: FieldRealization,
    cfg: SpdeConfig,
    streams: RngStreams,
    xi: np.ndarray | None = None,
) -> FieldRealization:
    """Draw u_k | u_{k+1} by embedding the coarse noise vector."""
    b = conditional_noise(ops_fine, transfer, coarse.b, streams, xi=xi)
    return solve_spde(ops_fine, cfg, b)


def log_prior_density(ops: LevelOperators, real: FieldRealization | NoiseVector) -> float:
    """Unnormalized log prior: -b^T W^{-1} b."""
    b = real.b.b if isinstance(real, FieldRealization) else real.b
    return float(-np.dot(b, b / ops.W))


def log_prior_density_from_u(ops: LevelOperators, cfg: SpdeConfig, u: np.ndarray) -> float:
    """Same density through the field: -u^T A W^{-1} A u (consistency check)."""
    w = get_solver(ops, cfg).apply_schur(np.asarray(u, dtype=float))
    return float(-np.dot(w, w / ops.W))


def decompose_realization(
    fine: FieldRealization,
    transfers: list[TransferPair],
    all_ops: list[LevelOperators],
    cfg: SpdeConfig,
    streams: RngStreams,
) -> list[tuple[int, np.ndarray]]:
    """Per-level field components u^{Cl} = A^{-1} (component of b); they
    sum to the fine realization."""
    comps = decompose_noise(fine.b, transfers, all_ops, streams)
    ops = all_ops[fine.level]
    solver = get_solver(ops, cfg)
    out = []
    for level, b_comp in comps:
        u, _, _ = solver.solve(b_comp)
        out.append((level, u))
    return out


# -- dense oracles (test utilities) --------------------------------------

_DENSE_LIMIT = 5000


def dense_schur(ops: LevelOperators, cfg: SpdeConfig) -> np.ndarray:
    """Explicit A = (kappa^2 W + B M^{-1} B^T)/g via dense algebra."""
    total = ops.num_elements + ops.num_flux_dofs
    if total > _DENSE_LIMIT:
        raise SolverError(f"dense oracle limited to {_DENSE_LIMIT} dofs, got {total}")
    Minv = np.linalg.inv(ops.M.toarray())
    Bd = ops.B.toarray()
    return (cfg.kappa**2 * np.diag(ops.W) + Bd @ Minv @ Bd.T) / cfg.g


def dense_covariance(ops: LevelOperators, cfg: SpdeConfig) -> np.ndarray:
    """Prior covariance C = A^{-1} W A^{-1}."""
    Ainv = np.linalg.inv(dense_schur(ops, cfg))
    return Ainv @ np.diag(ops.W) @ Ainv
