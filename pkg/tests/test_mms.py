import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import dgpc.mms as mms
from dgpc.dgcore import FunctionSpace, l2_project, make_spaces
from dgpc.mesh import build_uniform_mesh
from dgpc.mms import (ConvergenceReport, LevelRecord, ManufacturedCase, REPORT_HEADER, ErrorTracker,
                      StudyAborted, TimestepRule, builtin_vortex_case, convergence_study, get_case,
                      in_cfl_window, mesh_parameter, observed_rate, run_level, temporal_study,
                      timestep_rule, zero_case)
from dgpc.splitting import SolverFailure

# sixth-order central stencils
D1 = np.array([-1, 9, -45, 0, 45, -9, 1]) / 60.0
D2 = np.array([2, -27, 270, -490, 270, -27, 2]) / 180.0
OFFSETS = np.arange(-3, 4)


def fd(fn, x, y, t, axis, h, order):
    w = D1 if order == 1 else D2
    shifts = [(x + o * h, y, t) if axis == 0 else (x, y + o * h, t) if axis == 1
              else (x, y, t + o * h) for o in OFFSETS]
    return sum(c * fn(*s) for c, s in zip(w, shifts)) / h ** order


def residual_fd(case, x, y, t, h=1e-3):
    u = case.u(x, y, t)
    du = [fd(case.u, x, y, t, a, h, 1) for a in (0, 1)]
    lap = fd(case.u, x, y, t, 0, h, 2) + fd(case.u, x, y, t, 1, h, 2)
    dt = fd(case.u, x, y, t, 2, h, 1)
    grad_p = np.array([fd(case.p, x, y, t, a, h, 1) for a in (0, 1)])
    return dt - case.mu * lap + u[0] * du[0] + u[1] * du[1] + grad_p


@pytest.fixture(scope="module")
def points():
    rng = np.random.default_rng(0)
    return rng.uniform(0.01, 0.99, (3, 200))


class TestVortex:
    @pytest.mark.parametrize("mu", [1.0, 0.1])
    def test_forcing_matches_fd_residual(self, points, mu):
        case = builtin_vortex_case(mu)
        x, y, t = points
        t = t * 0.5
        # each sample at its own time
        err = max(np.abs(case.f(x[i], y[i], t[i]) - residual_fd(case, x[i], y[i], t[i])).max()
                  for i in range(len(x)))
        assert err <= 1e-6

    def test_divergence_free(self):
        case = builtin_vortex_case()
        rng = np.random.default_rng(1)
        x, y = rng.uniform(0, 1, (2, 1000))
        for t in (0.0, 0.3):
            g = case.grad_u(x, y, t)
            assert np.abs(g[0, 0] + g[1, 1]).max() <= 1e-10

    def test_gradient_matches_fd(self, points):
        case = builtin_vortex_case()
        x, y, _ = points
        g = case.grad_u(x, y, 0.2)
        for a in (0, 1):
            np.testing.assert_allclose(g[:, a], fd(case.u, x, y, 0.2, a, 1e-3, 1), atol=1e-8)

    def test_zero_on_boundary(self):
        case = builtin_vortex_case()
        s = np.linspace(0, 1, 101)
        for x, y in ((s, 0 * s), (s, 0 * s + 1), (0 * s, s), (0 * s + 1, s)):
            assert np.abs(case.u(x, y, 0.4)).max() <= 1e-12

    def test_pressure_zero_mean(self):
        case = builtin_vortex_case()
        S = FunctionSpace(build_uniform_mesh(8), 4, 1)
        assert abs(l2_project(S, case.p_at(0.1)).integral()[0]) <= 1e-10

    def test_unforced_and_registry(self):
        assert builtin_vortex_case(forced=False).f is None
        assert get_case("vortex_unforced", 1.0).name == "vortex_unforced"
        with pytest.raises(ValueError):
            get_case("cavity", 1.0)
        with pytest.raises(ValueError):
            builtin_vortex_case(0.0)


class TestTimestep:
    def test_h2_rule(self):
        ch = timestep_rule(1 / 8, "tau_eq_c_h2", 1.0, T=0.5)
        assert ch.tau == pytest.approx(1 / 64) and ch.n_steps == 32 and ch.in_window

    def test_rounding_makes_tau_divide_T(self):
        ch = timestep_rule(1 / 8, "tau_eq_c_h2", 1.0, T=0.3)
        assert ch.n_steps * ch.tau == pytest.approx(0.3, rel=1e-14)
        assert ch.tau <= ch.raw_tau and ch.n_steps == math.ceil(0.3 * 64 - 1e-9)

    def test_fixed(self):
        for h in (1 / 4, 1 / 64):
            assert timestep_rule(h, "fixed", 0.01).tau == pytest.approx(0.01)

    def test_h_rule(self):
        assert timestep_rule(0.1, "tau_eq_c_h", 0.5).tau == pytest.approx(0.05)

    def test_window(self):
        h = 1 / 16
        assert in_cfl_window(h, 1 / 256)
        assert not in_cfl_window(h, 0.05)
        assert (1 / 16) ** (4 / 3) == pytest.approx(0.0248, abs=1e-4)
        flagged = timestep_rule(h, "fixed", 0.05)
        assert not flagged.in_window and flagged.warnings

    def test_invalid(self):
        with pytest.raises(ValueError):
            TimestepRule("cfl")
        with pytest.raises(ValueError):
            timestep_rule(0.0)
        with pytest.raises(ValueError):
            TimestepRule(c=-1.0)


class TestRates:
    def test_examples(self):
        assert observed_rate(1.0, 0.5, 0.2, 0.1) == pytest.approx(1.0)
        assert observed_rate(1.0, 0.25, 0.2, 0.1) == pytest.approx(2.0)
        assert observed_rate(1e-2, 3.6e-3, 2.0, 1.0) == pytest.approx(1.474, abs=1e-3)

    @pytest.mark.parametrize("args", [(0.0, 1.0, 2, 1), (1.0, -1.0, 2, 1), (1.0, 0.5, 1, 1),
                                      (float("nan"), 1.0, 2, 1)])
    def test_sentinel(self, args):
        assert math.isnan(observed_rate(*args))

    @given(st.lists(st.floats(1e-8, 1.0), min_size=2, max_size=5), st.floats(1e-3, 1e3))
    @settings(max_examples=50, deadline=None)
    def test_scale_invariance(self, errs, scale):
        def report(c):
            return ConvergenceReport([LevelRecord(2 ** i, 2.0 ** -i, 0.1, 1, c * e, c * e, c * e, c * e)
                                      for i, e in enumerate(errs)])
        a, b = report(1.0).rates("err_u_st"), report(scale).rates("err_u_st")
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-9)


def _record(n, e):
    return LevelRecord(n, 1.0 / n, 1.0 / n ** 2, n * n, e, e, e, e)


class TestReport:
    def test_csv_and_checks(self):
        rep = ConvergenceReport([_record(4, 1.0), _record(8, 0.25)], case="x", k=1)
        lines = rep.to_csv().splitlines()
        assert lines[0] == ",".join(REPORT_HEADER)
        assert len(lines) == 3
        first = lines[1].split(",")
        assert first[5] == "" and float(lines[2].split(",")[5]) == pytest.approx(2.0)
        assert rep.check({"err_u_st": (1.8, math.inf)}) == {"err_u_st": True}
        assert rep.check({"err_u_st": (2.1, math.inf)}) == {"err_u_st": False}
        assert "PASS err_u_st" in rep.summary({"err_u_st": (1.8, math.inf)})
        assert rep.monotone("err_u_st")
        assert not ConvergenceReport([_record(4, 1.0), _record(8, 1.0)]).monotone("err_u_st")

    def test_empty_rates(self):
        assert math.isnan(ConvergenceReport([_record(4, 1.0)]).final_rate("err_u_st"))

    def test_temporal_rate_variable(self):
        a = LevelRecord(8, 0.125, 0.1, 5, 1.0, 1.0, 1.0, 1.0)
        b = LevelRecord(8, 0.125, 0.05, 10, 0.5, 0.5, 0.5, 0.5)
        assert ConvergenceReport([a, b], rate_variable="tau").final_rate("err_u_st") == pytest.approx(1.0)


def test_mesh_parameter():
    assert mesh_parameter(8) == 1 / 8


def test_exact_solution_injection_gives_zero_errors():
    case = builtin_vortex_case()
    X, M = make_spaces(build_uniform_mesh(4), 2)
    tau = 0.1
    tr = ErrorTracker(case, X, M, tau, 1.0, 90.0)
    tr._prev = (tr.exact_velocity(0.0), tr.exact_velocity(0.0))
    for n in range(1, 6):
        t = n * tau
        tr.update_samples(t, tr.exact_velocity(t), tr.exact_pressure(t))
    assert max(tr.err_u_spacetime, tr.err_p_spacetime, tr.err_dtu, tr.max_dg) <= 1e-10
    rep = ConvergenceReport([LevelRecord(4, 0.25, tau, 5, tr.err_u_spacetime, tr.max_dg,
                                         tr.err_p_spacetime, tr.err_dtu)] * 2)
    assert all(math.isnan(r) for r in rep.rates("err_u_st"))


def test_identical_levels_give_sentinel():
    rep = convergence_study(builtin_vortex_case(), 1, [2, 2], TimestepRule("fixed", 0.25), T=0.25)
    assert len(rep.levels) == 2
    assert all(math.isnan(rep.final_rate(k)) for k in ("err_u_st", "err_p_st"))


def test_study_validation():
    with pytest.raises(ValueError):
        convergence_study(builtin_vortex_case(), 1, [])
    with pytest.raises(ValueError):
        convergence_study(builtin_vortex_case(), 1, [8, 4])
    with pytest.raises(ValueError):
        temporal_study(builtin_vortex_case(), 1, 4, [])


def test_small_study_shape_and_parallel_agreement():
    args = (builtin_vortex_case(), 1, [4, 8], TimestepRule("tau_eq_c_h2", 1.0))
    serial = convergence_study(*args, T=0.125)
    parallel = convergence_study(*args, T=0.125, workers=2)
    assert len(serial.levels) == 2 and len(serial.rates("err_u_st")) == 1
    assert [r.tau for r in serial.levels] == [1 / 16, 1 / 64]
    for a, b in zip(serial.levels, parallel.levels):
        assert (a.err_u_st, a.err_p_st, a.err_dtu) == (b.err_u_st, b.err_p_st, b.err_dtu)
    assert serial.monotone("err_u_st")


def test_zero_case_has_zero_errors():
    rec = run_level(zero_case(), 1, 2, 0.1, 0.3)
    assert (rec.err_u_st, rec.err_u_dg, rec.err_p_st, rec.err_dtu) == (0.0, 0.0, 0.0, 0.0)


def test_abort_keeps_partial_results(monkeypatch):
    real = mms.run_level

    def flaky(case, k, n, tau, T, penalties=None):
        if n == 4:
            raise SolverFailure("boom", 3)
        return real(case, k, n, tau, T, penalties)

    monkeypatch.setattr(mms, "run_level", flaky)
    with pytest.raises(StudyAborted) as info:
        convergence_study(builtin_vortex_case(), 1, [2, 4, 8], TimestepRule("fixed", 0.25), T=0.25)
    rep = info.value.report
    assert not rep.complete and [r.n for r in rep.levels] == [2]
    assert "n=4" in str(info.value)


def _steady_case(mu=1.0):
    # the vortex frozen at t = 0; there d/dt cos(t) = 0, so the forcing at t = 0 is steady
    base = builtin_vortex_case(mu)
    return ManufacturedCase("steady", mu, lambda x, y, t: base.u(x, y, 0.0),
                            lambda x, y, t: base.grad_u(x, y, 0.0),
                            lambda x, y, t: base.p(x, y, 0.0),
                            lambda x, y, t: base.f(x, y, 0.0))


def test_steady_errors_settle_instead_of_accumulating():
    # from p^0 = 0 the run relaxes to the coupled steady discrete solution;
    # errors must level off rather than grow with the number of steps
    from dgpc.dgcore import l2_error
    from dgpc.forms import DGOperators, PenaltyConfig
    from dgpc.splitting import PressureCorrectionScheme, SchemeParams

    case = _steady_case()
    X, M = make_spaces(build_uniform_mesh(8), 1)
    pen = PenaltyConfig.default(1)
    tau = 1 / 64
    sch = PressureCorrectionScheme(DGOperators(X, M, pen), SchemeParams(1.0, tau, 10.0, 1, pen), case.f)
    hist = {}

    def obs(s):
        if s.n % 64 == 0:
            hist[s.n // 64] = (l2_error(s.u, case.u_at(0.0)), l2_error(s.p, case.p_at(0.0)))

    sch.run(case.u_at(0.0), [obs])
    u5, p5 = hist[5]
    u10, p10 = hist[10]
    assert all(np.isfinite(v) for pair in hist.values() for v in pair)
    assert abs(u10 - u5) <= 0.05 * u10 and abs(p10 - p5) <= 0.05 * p10
    assert max(h[0] for h in hist.values()) <= 1.05 * u10
