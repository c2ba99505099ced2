"""Manufactured solutions and refinement studies."""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dgcore import FunctionSpace, Samples, analytic_samples, dg_norm_vector, make_spaces
from .forms import DGOperators, PenaltyConfig
from .io import atomic_write_text, csv_text
from .mesh import build_uniform_mesh
from .splitting import PressureCorrectionScheme, SchemeParams, SolverFailure, State

PI = math.pi
DIM = 2


@dataclass(frozen=True)
class ManufacturedCase:
    """Exact velocity/pressure with the forcing that makes them solve the
    Navier-Stokes system. All callables take ``(x, y, t)``.

    ``u`` returns ``(2,) + x.shape``, ``grad_u`` returns ``(2, 2) + x.shape``
    indexed ``[component, derivative]``, ``p`` returns ``x.shape``.
    """

    name: str
    mu: float
    u: Callable
    grad_u: Callable
    p: Callable
    f: Callable | None

    def u_at(self, t: float):
        return lambda x, y: self.u(x, y, t)

    def grad_u_at(self, t: float):
        return lambda x, y: self.grad_u(x, y, t)

    def p_at(self, t: float):
        return lambda x, y: self.p(x, y, t)


def builtin_vortex_case(mu: float = 1.0, forced: bool = True) -> ManufacturedCase:
    """u = cos(t) (sin^2(pi x) sin(2 pi y), -sin(2 pi x) sin^2(pi y)),
    p = cos(t) sin(2 pi x) cos(2 pi y).

    With ``forced=False`` the forcing is dropped, which leaves a decaying
    flow started from the same initial velocity.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")

    def spatial(x, y):
        sx, sy = np.sin(PI * x), np.sin(PI * y)
        s2x, s2y = np.sin(2 * PI * x), np.sin(2 * PI * y)
        return np.array([sx ** 2 * s2y, -s2x * sy ** 2])

    def spatial_grad(x, y):
        sx, sy = np.sin(PI * x), np.sin(PI * y)
        s2x, s2y = np.sin(2 * PI * x), np.sin(2 * PI * y)
        c2x, c2y = np.cos(2 * PI * x), np.cos(2 * PI * y)
        return np.array([[PI * s2x * s2y, 2 * PI * sx ** 2 * c2y],
                         [-2 * PI * c2x * sy ** 2, -PI * s2x * s2y]])

    def spatial_lap(x, y):
        sx, sy = np.sin(PI * x), np.sin(PI * y)
        s2x, s2y = np.sin(2 * PI * x), np.sin(2 * PI * y)
        c2x, c2y = np.cos(2 * PI * x), np.cos(2 * PI * y)
        p2 = PI ** 2
        return np.array([2 * p2 * c2x * s2y - 4 * p2 * sx ** 2 * s2y,
                         4 * p2 * s2x * sy ** 2 - 2 * p2 * s2x * c2y])

    def u(x, y, t):
        return math.cos(t) * spatial(x, y)

    def grad_u(x, y, t):
        return math.cos(t) * spatial_grad(x, y)

    def p(x, y, t):
        return math.cos(t) * np.sin(2 * PI * x) * np.cos(2 * PI * y)

    def f(x, y, t):
        g, dg = math.cos(t), -math.sin(t)
        U = spatial(x, y)
        G = spatial_grad(x, y)
        adv = np.einsum("d...,cd...->c...", U, G)
        grad_p = np.array([2 * PI * np.cos(2 * PI * x) * np.cos(2 * PI * y),
                           -2 * PI * np.sin(2 * PI * x) * np.sin(2 * PI * y)])
        return dg * U - mu * g * spatial_lap(x, y) + g * g * adv + g * grad_p

    return ManufacturedCase("vortex" if forced else "vortex_unforced", mu, u, grad_u, p,
                            f if forced else None)


def zero_case(mu: float = 1.0) -> ManufacturedCase:
    def zero_u(x, y, t):
        return np.zeros((2,) + np.shape(x))

    return ManufacturedCase("zero", mu, zero_u,
                            lambda x, y, t: np.zeros((2, 2) + np.shape(x)),
                            lambda x, y, t: np.zeros(np.shape(x)), None)


CASES = {"vortex": builtin_vortex_case,
         "vortex_unforced": lambda mu: builtin_vortex_case(mu, forced=False),
         "zero": zero_case}


def get_case(name: str, mu: float) -> ManufacturedCase:
    try:
        return CASES[name](mu)
    except KeyError:
        raise ValueError(f"unknown case {name!r}; choose from {sorted(CASES)}") from None


# --------------------------------------------------------------------------
# time step selection

TIMESTEP_MODES = ("tau_eq_c_h2", "tau_eq_c_h", "fixed")


@dataclass(frozen=True)
class TimestepRule:
    mode: str = "tau_eq_c_h2"
    c: float = 1.0
    # window c1 h^2 <= tau <= c2 h^((1 + gamma) d / 3)
    c1: float = 1.0
    c2: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.mode not in TIMESTEP_MODES:
            raise ValueError(f"unknown timestep mode {self.mode!r}")
        if not self.c > 0:
            raise ValueError("timestep constant c must be positive")


@dataclass(frozen=True)
class TimestepChoice:
    tau: float
    n_steps: int
    raw_tau: float
    in_window: bool
    warnings: tuple[str, ...] = ()


def in_cfl_window(h: float, tau: float, c1: float = 1.0, c2: float = 1.0,
                  gamma: float = 1.0, d: int = DIM) -> bool:
    return c1 * h ** 2 <= tau <= c2 * h ** ((1 + gamma) * d / 3)


def timestep_rule(h: float, mode: str = "tau_eq_c_h2", c: float = 1.0, T: float = 0.5,
                  c1: float = 1.0, c2: float = 1.0, gamma: float = 1.0) -> TimestepChoice:
    """Pick tau from the rule, then shrink it so T/tau is an integer."""
    TimestepRule(mode, c, c1, c2, gamma)
    if not h > 0:
        raise ValueError("h must be positive")
    raw = {"tau_eq_c_h2": c * h * h, "tau_eq_c_h": c * h, "fixed": c}[mode]
    n = max(1, math.ceil(T / raw - 1e-9))
    tau = T / n
    ok = in_cfl_window(h, tau, c1, c2, gamma)
    msgs = () if ok else (
        f"tau={tau:.4g} outside window [{c1 * h ** 2:.4g}, {c2 * h ** ((1 + gamma) * DIM / 3):.4g}]",)
    return TimestepChoice(tau, n, raw, ok, msgs)


# --------------------------------------------------------------------------
# error tracking

class ErrorTracker:
    """Accumulates the discrete-time error sums of one run.

    Fed with samples of the numerical velocity and pressure at t^n, n >= 1
    (``update_samples``) or directly as a scheme observer.
    """

    def __init__(self, case: ManufacturedCase, X: FunctionSpace, M: FunctionSpace,
                 tau: float, mu: float, sigma: float):
        self.case, self.X, self.M = case, X, M
        self.tau, self.mu, self.sigma = tau, mu, sigma
        self.sum_u = 0.0
        self.sum_p = 0.0
        self.sum_dt = 0.0
        self.max_dg = 0.0
        self._prev = None  # (numerical samples, exact samples) at t^{n-1}

    def exact_velocity(self, t: float) -> Samples:
        return analytic_samples(self.X, self.case.u_at(t), self.case.grad_u_at(t))

    def exact_pressure(self, t: float) -> Samples:
        return analytic_samples(self.M, self.case.p_at(t))

    def __call__(self, state: State) -> None:
        us = state.u.samples()
        if state.n == 0:
            self._prev = (us, self.exact_velocity(0.0))
            return
        self.update_samples(state.t, us, state.p.samples())

    def update_samples(self, t: float, u_h: Samples, p_h: Samples) -> None:
        w = self.X.vol_w
        ue = self.exact_velocity(t)
        d = u_h - ue
        self.sum_u += float(np.einsum("ceq,ceq,eq->", d.vol, d.vol, w))
        self.max_dg = max(self.max_dg, dg_norm_vector(d, self.sigma))
        dp = p_h.vol - self.exact_pressure(t).vol
        self.sum_p += float(np.einsum("ceq,ceq,eq->", dp, dp, w))
        if self._prev is not None and t > self.tau * 1.5:
            # delta_tau u^{n} for n >= 2, i.e. the derivative over (t^{n-1}, t^n]
            pu, pe = self._prev
            dd = ((u_h.vol - pu.vol) - (ue.vol - pe.vol)) / self.tau
            self.sum_dt += float(np.einsum("ceq,ceq,eq->", dd, dd, w))
        self._prev = (u_h, ue)

    @property
    def err_u_spacetime(self) -> float:
        return math.sqrt(self.mu * self.tau * self.sum_u)

    @property
    def err_p_spacetime(self) -> float:
        return math.sqrt(self.tau * self.sum_p)

    @property
    def err_dtu(self) -> float:
        return math.sqrt(self.mu * self.tau * self.sum_dt)


# --------------------------------------------------------------------------
# reports

def observed_rate(e_coarse: float, e_fine: float, h_coarse: float, h_fine: float) -> float:
    """log(e_c / e_f) / log(h_c / h_f); NaN when undefined."""
    vals = (e_coarse, e_fine, h_coarse, h_fine)
    if any(not np.isfinite(v) or v <= 0 for v in vals) or h_coarse == h_fine:
        return float("nan")
    return math.log(e_coarse / e_fine) / math.log(h_coarse / h_fine)


@dataclass
class LevelRecord:
    n: int
    h: float
    tau: float
    NT: int
    err_u_st: float
    err_u_dg: float
    err_p_st: float
    err_dtu: float
    seconds: float = 0.0


ERROR_KEYS = ("err_u_st", "err_u_dg", "err_p_st", "err_dtu")
REPORT_HEADER = ("n", "h", "tau", "NT", "err_u_st", "rate_u_st", "err_u_dg", "rate_u_dg",
                 "err_p_st", "rate_p_st", "err_dtu", "rate_dtu")


@dataclass
class ConvergenceReport:
    levels: list[LevelRecord] = field(default_factory=list)
    rate_variable: str = "h"  # or "tau" for temporal studies
    case: str = ""
    k: int = 1
    complete: bool = True

    def _var(self, rec: LevelRecord) -> float:
        return rec.h if self.rate_variable == "h" else rec.tau

    def rates(self, key: str) -> list[float]:
        """Observed rates between consecutive levels."""
        out = []
        for a, b in zip(self.levels, self.levels[1:]):
            out.append(observed_rate(getattr(a, key), getattr(b, key), self._var(a), self._var(b)))
        return out

    def final_rate(self, key: str) -> float:
        r = self.rates(key)
        return r[-1] if r else float("nan")

    def monotone(self, key: str) -> bool:
        """True when the error strictly decreases from level to level."""
        e = [getattr(rec, key) for rec in self.levels]
        return len(e) > 1 and all(b < a for a, b in zip(e, e[1:]))

    def rows(self) -> list[tuple]:
        rates = {k: [float("nan")] + self.rates(k) for k in ERROR_KEYS}
        out = []
        for i, rec in enumerate(self.levels):
            row = [rec.n, rec.h, rec.tau, rec.NT]
            for key in ERROR_KEYS:
                row += [getattr(rec, key), rates[key][i]]
            out.append(tuple(row))
        return out

    def to_csv(self) -> str:
        rows = [tuple("" if isinstance(v, float) and math.isnan(v) else v for v in r)
                for r in self.rows()]
        return csv_text(REPORT_HEADER, rows)

    def write_csv(self, path: str | Path) -> None:
        atomic_write_text(path, self.to_csv())

    def check(self, thresholds: dict[str, tuple[float, float]]) -> dict[str, bool]:
        """PASS/FAIL of the final observed rate of each key against a
        ``(low, high)`` window."""
        out = {}
        for key, (lo, hi) in thresholds.items():
            r = self.final_rate(key)
            out[key] = bool(np.isfinite(r) and lo <= r <= hi)
        return out

    def summary(self, thresholds: dict[str, tuple[float, float]] | None = None) -> str:
        lines = [f"case={self.case} k={self.k} rate variable={self.rate_variable}"
                 + ("" if self.complete else " (INCOMPLETE)")]
        lines.append(" ".join(f"{h:>10}" for h in REPORT_HEADER))
        for row in self.rows():
            lines.append(" ".join(f"{v:>10.4g}" if isinstance(v, float) else f"{v:>10}" for v in row))
        for key, ok in (self.check(thresholds) if thresholds else {}).items():
            lo, hi = thresholds[key]
            lines.append(f"{'PASS' if ok else 'FAIL'} {key}: rate {self.final_rate(key):.3f} "
                         f"in [{lo}, {hi}]")
        return "\n".join(lines)


class StudyAborted(RuntimeError):
    def __init__(self, message: str, report: ConvergenceReport):
        super().__init__(message)
        self.report = report


# --------------------------------------------------------------------------
# drivers

def mesh_parameter(n: int) -> float:
    """Mesh size h used by studies and the timestep rule: the cell leg 1/n
    (the longest edge, the diagonal, is sqrt(2)/n)."""
    return 1.0 / n


def run_level(case: ManufacturedCase, k: int, n: int, tau: float, T: float,
              penalties: PenaltyConfig | None = None) -> LevelRecord:
    """Run the scheme once on an ``n x n`` mesh and measure all errors."""
    start = time.perf_counter()
    mesh = build_uniform_mesh(n)
    X, M = make_spaces(mesh, k)
    penalties = penalties or PenaltyConfig.default(k)
    params = SchemeParams(case.mu, tau, T, k, penalties)
    scheme = PressureCorrectionScheme(DGOperators(X, M, penalties), params, case.f)
    tracker = ErrorTracker(case, X, M, tau, case.mu, penalties.sigma)
    scheme.run(case.u_at(0.0), [tracker])
    return LevelRecord(n, mesh_parameter(n), tau, params.n_steps, tracker.err_u_spacetime,
                       tracker.max_dg, tracker.err_p_spacetime, tracker.err_dtu,
                       time.perf_counter() - start)


def _level_job(args) -> LevelRecord:
    name, mu, k, n, tau, T, penalties = args
    return run_level(get_case(name, mu), k, n, tau, T, penalties)


def _run_levels(report: ConvergenceReport, jobs, case, k, T, penalties,
                workers: int = 1) -> ConvergenceReport:
    if workers > 1 and len(jobs) > 1 and CASES.get(case.name) is not None:
        return _run_levels_parallel(report, jobs, case, k, T, penalties, workers)
    for n, tau in jobs:
        try:
            report.levels.append(run_level(case, k, n, tau, T, penalties))
        except SolverFailure as exc:
            report.complete = False
            raise StudyAborted(f"level n={n}, tau={tau}: {exc}", report) from exc
    return report


def _run_levels_parallel(report, jobs, case, k, T, penalties, workers):
    # cases hold closures, so workers rebuild them from the registry by name
    args = [(case.name, case.mu, k, n, tau, T, penalties) for n, tau in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        futures = [pool.submit(_level_job, a) for a in args]
        for (n, tau), fut in zip(jobs, futures):
            try:
                report.levels.append(fut.result())
            except SolverFailure as exc:
                report.complete = False
                for other in futures:
                    other.cancel()
                raise StudyAborted(f"level n={n}, tau={tau}: {exc}", report) from exc
    return report


def convergence_study(case: ManufacturedCase, k: int, levels: Sequence[int],
                      rule: TimestepRule = TimestepRule(), T: float = 0.5,
                      penalties: PenaltyConfig | None = None,
                      workers: int = 1) -> ConvergenceReport:
    """Spatial (coupled) refinement: tau follows ``rule`` on each mesh."""
    levels = list(levels)
    if not levels:
        raise ValueError("levels must be non-empty")
    if any(b < a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be non-decreasing")
    jobs = []
    for n in levels:
        h = mesh_parameter(n)
        choice = timestep_rule(h, rule.mode, rule.c, T, rule.c1, rule.c2, rule.gamma)
        jobs.append((n, choice.tau))
    report = ConvergenceReport(rate_variable="h", case=case.name, k=k)
    return _run_levels(report, jobs, case, k, T, penalties, workers)


def temporal_study(case: ManufacturedCase, k: int, n: int, taus: Sequence[float],
                   T: float = 0.5, penalties: PenaltyConfig | None = None,
                   workers: int = 1) -> ConvergenceReport:
    """Fixed mesh, varying tau; rates are measured against tau."""
    taus = list(taus)
    if not taus:
        raise ValueError("taus must be non-empty")
    report = ConvergenceReport(rate_variable="tau", case=case.name, k=k)
    return _run_levels(report, [(n, tau) for tau in taus], case, k, T, penalties, workers)
