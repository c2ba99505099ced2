"""Pressure-correction time stepping for the DG Navier-Stokes discretization.

Each step solves, in order,

1. the momentum equation for the intermediate velocity ``v`` with the
   advecting field frozen at the previous end-of-step velocity,
2. a Poisson problem for the pressure increment ``phi`` on the zero-mean
   pressure space,
3. the pressure update ``p = p_prev + phi - delta * mu * div_h(v)``,
4. the velocity update ``u = v + tau * B^T phi``.

The basis is orthonormal, so both updates act directly on coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dgcore import AnalyticFn, DiscreteField, FunctionSpace, l2_project
from .forms import DGOperators, PenaltyConfig, convection_scalar
from .io import atomic_write_text, csv_text

# forcing(x, y, t) -> (2,) + x.shape
Forcing = Callable[[np.ndarray, np.ndarray, float], np.ndarray]

MONITOR_HEADER = ("step", "t", "l2_u", "dg_v", "dg_phi", "mean_phi")
_RESIDUAL_TOL = 1e-8


class SolverFailure(RuntimeError):
    def __init__(self, message: str, step: int | None = None, **diagnostics):
        self.step = step
        self.diagnostics = diagnostics
        where = f" at step {step}" if step is not None else ""
        extra = ", ".join(f"{k}={v:.3e}" if isinstance(v, float) else f"{k}={v}"
                          for k, v in diagnostics.items())
        super().__init__(f"{message}{where}" + (f" ({extra})" if extra else ""))


@dataclass
class SchemeParams:
    mu: float
    tau: float
    T: float
    k: int
    penalties: PenaltyConfig

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("velocity degree k must be >= 1")
        for name in ("mu", "tau", "T"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        n = round(self.T / self.tau)
        if n < 1 or abs(n * self.tau - self.T) > 1e-12 * self.T:
            raise ValueError(f"tau={self.tau} does not divide T={self.T}")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.tau))

    @classmethod
    def default(cls, k: int, tau: float, T: float = 0.5, mu: float = 1.0,
                **penalty_overrides) -> "SchemeParams":
        return cls(mu, tau, T, k, PenaltyConfig.default(k, **penalty_overrides))


@dataclass
class State:
    n: int
    t: float
    u: DiscreteField
    p: DiscreteField
    phi: DiscreteField
    v: Optional[DiscreteField] = None


@dataclass
class MonitorLog:
    rows: list[tuple] = field(default_factory=list)

    def append(self, *row) -> None:
        self.rows.append(tuple(row))

    def column(self, name: str) -> np.ndarray:
        i = MONITOR_HEADER.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        return csv_text(MONITOR_HEADER, self.rows)

    def write(self, path: str | Path) -> None:
        atomic_write_text(path, self.to_csv())


class PressureCorrectionScheme:
    """Holds the time-independent operators and factorizations of one run."""

    def __init__(self, ops: DGOperators, params: SchemeParams,
                 forcing: Forcing | None = None):
        if ops.X.degree != params.k:
            raise ValueError("velocity space degree does not match params.k")
        self.ops = ops
        self.params = params
        self.forcing = forcing
        self.X, self.M = ops.X, ops.M
        self._ns = self.X.block_size
        self._B = ops.b.matrix
        self._BT = self._B.T.tocsr()
        self._aD = ops.aD_scalar
        self._eye = sp.identity(self._ns, format="csr")
        self.energy_X = ops.energy_X.matrix
        self.energy_M = ops.energy_M.matrix
        self._mean = ops.mean_functional
        self._setup_poisson()
        self.last_multiplier = 0.0

    def _setup_poisson(self) -> None:
        A = self.ops.aellip.matrix
        m = sp.csr_matrix(self._mean[None, :])
        S = sp.bmat([[A, m.T], [m, None]], format="csc")
        self._saddle = S
        try:
            self._saddle_lu = spla.splu(S)
        except RuntimeError as exc:
            raise SolverFailure(f"pressure saddle factorization failed: {exc}") from exc

    # -- state ----------------------------------------------------------------

    def initialize(self, u0: AnalyticFn | None) -> State:
        u = DiscreteField(self.X) if u0 is None else l2_project(self.X, u0)
        return State(0, 0.0, u, DiscreteField(self.M), DiscreteField(self.M))

    # -- sub-steps -------------------------------------------------------------

    def forcing_functional(self, t: float) -> np.ndarray:
        """Coefficients of (f(t), theta_j); with the orthonormal basis these
        are the projection coefficients of f(t)."""
        if self.forcing is None:
            return np.zeros(self.X.n_dofs)
        return l2_project(self.X, lambda x, y: self.forcing(x, y, t)).coefficients

    def momentum_matrix(self, u_prev: DiscreteField) -> sp.csr_matrix:
        """Scalar block of I + tau C(u_prev) + tau mu A_D."""
        tau, mu = self.params.tau, self.params.mu
        return (self._eye + tau * convection_scalar(u_prev) + (tau * mu) * self._aD).tocsr()

    def momentum_rhs(self, state: State, t: float) -> np.ndarray:
        tau = self.params.tau
        return (state.u.coefficients + tau * (self._BT @ state.p.coefficients)
                + tau * self.forcing_functional(t))

    def solve_momentum(self, K: sp.spmatrix, rhs: np.ndarray, step: int | None = None) -> np.ndarray:
        """Solve the block-diagonal momentum system, one scalar block per component."""
        R = rhs.reshape(2, self._ns).T
        try:
            lu = spla.splu(K.tocsc())
        except RuntimeError as exc:
            raise SolverFailure(f"momentum factorization failed: {exc}", step,
                                norm1=float(spla.norm(K, 1))) from exc
        X = lu.solve(R)
        _check_residual("momentum", K @ X - R, R, step, norm1=float(spla.norm(K, 1)))
        return X.T.reshape(-1)

    def momentum_step(self, state: State, t: float | None = None) -> DiscreteField:
        t = state.t + self.params.tau if t is None else t
        K = self.momentum_matrix(state.u)
        coeffs = self.solve_momentum(K, self.momentum_rhs(state, t), state.n + 1)
        return DiscreteField(self.X, coeffs)

    def pressure_poisson(self, v: DiscreteField, step: int | None = None) -> DiscreteField:
        rhs = np.zeros(self.M.n_dofs + 1)
        rhs[:-1] = -(self._B @ v.coefficients) / self.params.tau
        sol = self._saddle_lu.solve(rhs)
        _check_residual("pressure Poisson", self._saddle @ sol - rhs, rhs, step)
        self.last_multiplier = float(sol[-1])
        return DiscreteField(self.M, sol[:-1])

    def pressure_update(self, state: State, v: DiscreteField, phi: DiscreteField) -> DiscreteField:
        dm = self.params.penalties.delta * self.params.mu
        return DiscreteField(self.M, state.p.coefficients + phi.coefficients
                             - dm * (self._B @ v.coefficients))

    def velocity_update(self, v: DiscreteField, phi: DiscreteField) -> DiscreteField:
        return DiscreteField(self.X, v.coefficients + self.params.tau * (self._BT @ phi.coefficients))

    def step(self, state: State) -> State:
        n = state.n + 1
        t = n * self.params.tau
        v = self.momentum_step(state, t)
        phi = self.pressure_poisson(v, n)
        p = self.pressure_update(state, v, phi)
        u = self.velocity_update(v, phi)
        return State(n, t, u, p, phi, v)

    # -- diagnostics -------------------------------------------------------------

    def monitor_row(self, state: State) -> tuple:
        v = state.v.coefficients if state.v is not None else np.zeros(self.X.n_dofs)
        phi = state.phi.coefficients
        return (state.n, state.t,
                float(np.sqrt(state.u.coefficients @ state.u.coefficients)),
                float(np.sqrt(max(v @ (self.energy_X @ v), 0.0))),
                float(np.sqrt(max(phi @ (self.energy_M @ phi), 0.0))),
                float(self._mean @ phi))

    def run(self, u0: AnalyticFn | None,
            observers: Iterable[Callable[[State], None]] = ()) -> tuple[State, MonitorLog]:
        observers = list(observers)
        state = self.initialize(u0)
        for obs in observers:
            obs(state)
        log = MonitorLog()
        for _ in range(self.params.n_steps):
            try:
                state = self.step(state)
            except SolverFailure as exc:
                if exc.step is None:
                    exc.step = state.n + 1
                raise
            except Exception as exc:
                raise SolverFailure(f"{type(exc).__name__}: {exc}", state.n + 1) from exc
            log.append(*self.monitor_row(state))
            for obs in observers:
                obs(state)
        return state, log


def _check_residual(what: str, res, rhs, step, **diag) -> None:
    scale = float(np.linalg.norm(rhs))
    r = float(np.linalg.norm(res))
    if not np.isfinite(r) or r > _RESIDUAL_TOL * max(scale, 1e-300):
        if scale == 0.0 and r == 0.0:
            return
        raise SolverFailure(f"{what} solve inaccurate", step,
                            residual=r, rhs_norm=scale, **diag)


def run(params: SchemeParams, spaces: tuple[FunctionSpace, FunctionSpace],
        forcing: Forcing | None, u0: AnalyticFn | None,
        observers: Iterable[Callable[[State], None]] = ()) -> tuple[State, MonitorLog]:
    """Run ``params.n_steps`` steps from ``u0`` and return the final state
    and the per-step monitor log."""
    X, M = spaces
    scheme = PressureCorrectionScheme(DGOperators(X, M, params.penalties), params, forcing)
    return scheme.run(u0, observers)


class TimeDerivativeObserver:
    """Records the discrete time derivative (u^{n+1} - u^n) / tau."""

    def __init__(self, tau: float):
        self.tau = tau
        self._prev: DiscreteField | None = None
        self.derivatives: list[DiscreteField] = []

    def __call__(self, state: State) -> None:
        if self._prev is not None:
            self.derivatives.append((state.u - self._prev) * (1.0 / self.tau))
        self._prev = state.u

    @property
    def norms(self) -> np.ndarray:
        return np.array([math.sqrt(d.coefficients @ d.coefficients) for d in self.derivatives])


class EnergyObserver:
    """Tracks ||u^m||^2 + (mu/4) tau sum_{n<=m} ||v^n||_DG^2."""

    def __init__(self, scheme: PressureCorrectionScheme):
        self.scheme = scheme
        self.initial = None
        self._acc = 0.0
        self.values: list[float] = []

    def __call__(self, state: State) -> None:
        u = state.u.coefficients
        if state.n == 0:
            self.initial = float(u @ u)
            return
        v = state.v.coefficients
        p = self.scheme.params
        self._acc += 0.25 * p.mu * p.tau * float(v @ (self.scheme.energy_X @ v))
        self.values.append(float(u @ u) + self._acc)
