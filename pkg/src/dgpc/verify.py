"""Randomized checks of the exact algebraic identities between the DG forms.

Each check draws seeded random fields, evaluates both sides of an identity
with the matrix-free evaluators (and, where relevant, the assembled
matrices), and records the worst normalized residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dgcore import (DiscreteField, dg_norm_vector, dg_seminorm_scalar, l2_project,
                     make_spaces)
from .forms import (DGOperators, PenaltyConfig, assemble_convection, eval_abarC, eval_aC,
                    eval_aD, eval_aellip, eval_b_alt, eval_b_primal, eval_C, eval_div_inner,
                    eval_lift_G_rhs, eval_lift_R_rhs, eval_U, l2_inner)
from .io import csv_text
from .mesh import build_uniform_mesh

_TINY = 1e-300


@dataclass
class IdentityResult:
    name: str
    k: int
    trials: int
    max_residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_residual) and self.max_residual <= self.tolerance)


RESULT_HEADER = ("identity", "k", "trials", "max_residual", "tolerance", "status")


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), _TINY)


class _Worst:
    def __init__(self):
        self.values: dict[str, float] = {}

    def __call__(self, name: str, value: float) -> None:
        self.values[name] = max(self.values.get(name, 0.0), float(value))


TOLERANCES = {
    "ibp": 1e-11,
    "positivity": 1e-12,
    "splitting": 1e-12,
    "b_equivalence": 1e-12,
    "b_kills_constants": 1e-12,
    "lift_R": 1e-12,
    "lift_G": 1e-12,
    "b_lift_decomposition": 1e-12,
    "convection_matrix": 1e-12,
    "aD_symmetry": 1e-12,
    "aD_coercivity": 0.0,
    "aellip_coercivity": 0.0,
}


def check_identities(n: int = 4, k: int = 1, trials: int = 100, seed: int = 0,
                     penalties: PenaltyConfig | None = None) -> list[IdentityResult]:
    """Run every identity on an ``n x n`` mesh with degree ``k``.

    Coercivity results store ``max(0, 1/2 - ratio)`` so that zero means the
    bound held in every trial.
    """
    penalties = penalties or PenaltyConfig.default(k)
    sigma, sigma_t = penalties.sigma, penalties.sigma_tilde
    mesh = build_uniform_mesh(n)
    X, M = make_spaces(mesh, k)
    ops = DGOperators(X, M, penalties)
    B, R, G = ops.b.matrix, ops.lift_R.matrix, ops.lift_G.matrix
    A = ops.aD.matrix
    rng = np.random.default_rng(seed)
    worst = _Worst()
    one = _constant(M)

    for _ in range(trials):
        w, v, th = (DiscreteField.random(X, rng) for _ in range(3))
        q, r = DiscreteField.random(M, rng), DiscreteField.random(M, rng)

        a = eval_aC(w, w, v, th)
        abar = eval_abarC(w, w, th, v)
        worst("ibp", abs(a + abar) / max(abs(a), abs(abar), _TINY))

        c_vv = eval_C(w, v, v)
        u_vv = eval_U(w, w, v, v)
        a_vv = eval_aC(w, w, v, v)
        scale = abs(c_vv) + abs(u_vv)
        worst("positivity", max(0.0, -a_vv) / max(scale, _TINY))

        worst("splitting", _rel(a, eval_C(w, v, th) - eval_U(w, w, v, th)))
        Cw = assemble_convection(w)
        worst("convection_matrix", _rel(Cw.form(th, v), a))

        bp, ba = eval_b_primal(th, q), eval_b_alt(th, q)
        worst("b_equivalence", max(_rel(bp, ba), _rel(bp, float(q.coefficients @ (B @ th.coefficients)))))
        vol1, face1 = eval_div_inner(th, one), eval_lift_R_rhs(th, one)
        worst("b_kills_constants", abs(eval_b_primal(th, one)) / max(abs(vol1) + abs(face1), _TINY))

        Rth = DiscreteField(M, R @ th.coefficients)
        worst("lift_R", _rel(l2_inner(Rth, q), eval_lift_R_rhs(th, q)))
        Gq = DiscreteField(X, G @ q.coefficients)
        worst("lift_G", _rel(l2_inner(Gq, th), eval_lift_G_rhs(q, th)))
        worst("b_lift_decomposition", _rel(bp, eval_div_inner(th, q) - l2_inner(Rth, q)))

        worst("aD_symmetry", _rel(eval_aD(v, th, sigma), eval_aD(th, v, sigma)))
        ratio = eval_aD(th, th, sigma) / dg_norm_vector(th, sigma) ** 2
        worst("aD_coercivity", max(0.0, 0.5 - ratio))
        semi = dg_seminorm_scalar(r, sigma_t) ** 2
        if semi > 0:
            worst("aellip_coercivity", max(0.0, 0.5 - eval_aellip(r, r, sigma_t) / semi))

    asym = abs(A - A.T).max() / max(abs(A).max(), _TINY)
    worst("aD_symmetry", asym)
    return [IdentityResult(name, k, trials, worst.values.get(name, 0.0), tol)
            for name, tol in TOLERANCES.items()]


def _constant(space) -> DiscreteField:
    """The constant function 1 in a scalar space."""
    return l2_project(space, lambda x, y: np.ones_like(x))


def run_suite(n: int = 4, degrees=(1, 2), trials: int = 100, seed: int = 0,
              penalties_for=None) -> list[IdentityResult]:
    out = []
    for k in degrees:
        pen = penalties_for(k) if penalties_for else None
        out += check_identities(n, k, trials, seed, pen)
    return out


def results_table(results: list[IdentityResult]) -> str:
    rows = [(r.name, r.k, r.trials, r.max_residual, r.tolerance, "PASS" if r.passed else "FAIL")
            for r in results]
    return csv_text(RESULT_HEADER, rows)
