"""Command-line entry point: ``dgpc simulate | study | verify-forms``.

Configuration is a flat ``key = value`` text file (``#`` starts a comment),
optionally overridden by ``--key value`` flags. Lists are comma separated.
Rate checks for ``study`` are given as ``check_u_st = 1.8`` (lower bound) or
``check_p_st = 0.35:0.75`` (window); ``check_monotone`` lists error columns
that must strictly decrease across levels.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import warnings
from contextlib import nullcontext
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

from .dgcore import l2_error, make_spaces
from .forms import DGOperators, PenaltyConfig
from .io import atomic_write_text
from .mesh import build_uniform_mesh
from .mms import (CASES, ERROR_KEYS, TIMESTEP_MODES, ErrorTracker, StudyAborted, TimestepRule,
                  convergence_study, get_case, mesh_parameter, temporal_study, timestep_rule)
from .splitting import PressureCorrectionScheme, SchemeParams, SolverFailure
from .verify import results_table, run_suite

COMMANDS = ("simulate", "study", "verify-forms")
THREADS_ENV = "DGPC_NUM_THREADS"
DELTA_LIMIT = 1.0 / 8.0  # 1/(4d) with d = 2
CHECK_KEYS = {"check_u_st": "err_u_st", "check_u_dg": "err_u_dg",
              "check_p_st": "err_p_st", "check_dtu": "err_dtu"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    k: int = 1
    n: int | None = None
    levels: tuple[int, ...] = ()
    taus: tuple[float, ...] = ()
    mu: float = 1.0
    sigma: float | None = None
    sigma_tilde: float | None = None
    delta: float = 1.0 / 16.0
    T: float = 0.5
    rule: str = "tau_eq_c_h2"
    c: float = 1.0
    case: str = "vortex"
    output: str = "dgpc-out"
    seed: int = 0
    trials: int = 100
    degrees: tuple[int, ...] = (1, 2)
    workers: int = 1
    check_u_st: tuple[float, float] | None = None
    check_u_dg: tuple[float, float] | None = None
    check_p_st: tuple[float, float] | None = None
    check_dtu: tuple[float, float] | None = None
    check_monotone: tuple[str, ...] = ()
    warnings: list[str] = field(default_factory=list, repr=False)

    @property
    def penalties(self) -> PenaltyConfig:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return PenaltyConfig.default(self.k, sigma=self.sigma,
                                         sigma_tilde=self.sigma_tilde, delta=self.delta)

    @property
    def thresholds(self) -> dict[str, tuple[float, float]]:
        return {CHECK_KEYS[name]: getattr(self, name) for name in CHECK_KEYS
                if getattr(self, name) is not None}


def _int(key, text):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {text!r}") from None


def _float(key, text):
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {text!r}") from None


def _list(conv):
    def parse(key, text):
        items = [t.strip() for t in text.strip().strip("[]").split(",") if t.strip()]
        return tuple(conv(key, t) for t in items)
    return parse


def _window(key, text):
    lo, sep, hi = text.partition(":")
    return (_float(key, lo), _float(key, hi) if sep else math.inf)


def _str(key, text):
    return text.strip()


_PARSERS = {
    "command": _str, "k": _int, "n": _int, "levels": _list(_int), "taus": _list(_float),
    "mu": _float, "sigma": _float, "sigma_tilde": _float, "delta": _float, "T": _float,
    "rule": _str, "c": _float, "case": _str, "output": _str, "seed": _int,
    "trials": _int, "degrees": _list(_int), "workers": _int,
    "check_u_st": _window, "check_u_dg": _window, "check_p_st": _window,
    "check_dtu": _window, "check_monotone": _list(_str),
}


def read_config_file(path: str | Path) -> dict[str, str]:
    raw = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":" if ":" in line else None
        if sep is None:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split(sep, 1))
        raw[key] = value
    return raw


def parse_config(raw: dict[str, str]) -> RunConfig:
    """Validate raw string settings and fill defaults."""
    unknown = sorted(set(raw) - set(_PARSERS))
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}")
    if "command" not in raw:
        raise ConfigError("command: missing required key")
    values = {key: _PARSERS[key](key, text) for key, text in raw.items()}
    cfg = RunConfig(**values)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.command not in COMMANDS:
        raise ConfigError(f"command: must be one of {', '.join(COMMANDS)}, got {cfg.command!r}")
    if cfg.k < 1:
        raise ConfigError("k: must be >= 1")
    for key in ("mu", "sigma", "sigma_tilde", "delta", "T", "c"):
        val = getattr(cfg, key)
        if val is not None and not (math.isfinite(val) and val > 0):
            raise ConfigError(f"{key}: must be positive, got {val!r}")
    for key in ("trials", "workers"):
        if getattr(cfg, key) < 1:
            raise ConfigError(f"{key}: must be >= 1")
    if cfg.n is not None and cfg.n < 1:
        raise ConfigError("n: must be >= 1")
    if any(n < 1 for n in cfg.levels):
        raise ConfigError("levels: entries must be >= 1")
    if any(not t > 0 for t in cfg.taus):
        raise ConfigError("taus: entries must be positive")
    if any(d < 1 for d in cfg.degrees):
        raise ConfigError("degrees: entries must be >= 1")
    if cfg.rule not in TIMESTEP_MODES:
        raise ConfigError(f"rule: must be one of {', '.join(TIMESTEP_MODES)}")
    if cfg.case not in CASES:
        raise ConfigError(f"case: must be one of {', '.join(sorted(CASES))}")
    bad = [c for c in cfg.check_monotone if c not in ERROR_KEYS]
    if bad:
        raise ConfigError(f"check_monotone: unknown error column(s) {', '.join(bad)}")
    if cfg.command == "simulate" and cfg.n is None:
        raise ConfigError("n: required for simulate")
    if cfg.command == "study":
        if cfg.taus:
            if cfg.n is None:
                raise ConfigError("n: required for a temporal study (taus given)")
        elif not cfg.levels:
            raise ConfigError("levels: must be non-empty for study")
        if any(b <= a for a, b in zip(cfg.levels, cfg.levels[1:])):
            raise ConfigError("levels: must be strictly increasing")
    if cfg.delta > DELTA_LIMIT:
        cfg.warnings.append(f"delta={cfg.delta} exceeds 1/(4d)={DELTA_LIMIT}; the stability "
                            "condition delta <= 1/(4d) does not hold")


# --------------------------------------------------------------------------
# commands

def _simulate(cfg: RunConfig, out: Path) -> int:
    case = get_case(cfg.case, cfg.mu)
    mesh = build_uniform_mesh(cfg.n)
    X, M = make_spaces(mesh, cfg.k)
    choice = timestep_rule(mesh_parameter(cfg.n), cfg.rule, cfg.c, cfg.T)
    cfg.warnings.extend(choice.warnings)
    pen = cfg.penalties
    params = SchemeParams(cfg.mu, choice.tau, cfg.T, cfg.k, pen)
    scheme = PressureCorrectionScheme(DGOperators(X, M, pen), params, case.f)
    tracker = ErrorTracker(case, X, M, choice.tau, cfg.mu, pen.sigma)
    state, log = scheme.run(case.u_at(0.0), [tracker])
    log.write(out / "monitor.csv")
    lines = [f"command=simulate case={case.name} k={cfg.k} n={cfg.n} tau={float(choice.tau)!r} "
             f"steps={params.n_steps}",
             f"sigma={float(pen.sigma)!r} sigma_tilde={float(pen.sigma_tilde)!r} delta={float(pen.delta)!r}",
             f"final l2 velocity error {l2_error(state.u, case.u_at(state.t)):.6e}",
             f"final l2 pressure error {l2_error(state.p, case.p_at(state.t)):.6e}",
             f"space-time velocity error {tracker.err_u_spacetime:.6e}",
             f"space-time pressure error {tracker.err_p_spacetime:.6e}"]
    _finish(out, lines)
    return 0


def _study(cfg: RunConfig, out: Path) -> int:
    case = get_case(cfg.case, cfg.mu)
    pen = cfg.penalties
    try:
        if cfg.taus:
            report = temporal_study(case, cfg.k, cfg.n, cfg.taus, cfg.T, pen, cfg.workers)
        else:
            report = convergence_study(case, cfg.k, cfg.levels, TimestepRule(cfg.rule, cfg.c),
                                       cfg.T, pen, cfg.workers)
    except StudyAborted as exc:
        exc.report.write_csv(out / "report.csv")
        _finish(out, [exc.report.summary(), f"ABORTED: {exc}"])
        print(f"error: {exc}", file=sys.stderr)
        return 2
    report.write_csv(out / "report.csv")
    ok = all(report.check(cfg.thresholds).values())
    lines = [report.summary(cfg.thresholds)]
    for key in cfg.check_monotone:
        mono = report.monotone(key)
        ok &= mono
        lines.append(f"{'PASS' if mono else 'FAIL'} {key}: strictly decreasing across levels")
    _finish(out, lines)
    return 0 if ok else 1


def _verify(cfg: RunConfig, out: Path) -> int:
    n = cfg.n or 4
    overrides = dict(sigma=cfg.sigma, sigma_tilde=cfg.sigma_tilde, delta=cfg.delta)

    def penalties_for(k):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return PenaltyConfig.default(k, **overrides)

    results = run_suite(n, cfg.degrees, cfg.trials, cfg.seed, penalties_for)
    table = results_table(results)
    atomic_write_text(out / "identities.csv", table)
    ok = all(r.passed for r in results)
    _finish(out, [f"verify-forms n={n} degrees={list(cfg.degrees)} trials={cfg.trials} "
                  f"seed={cfg.seed}", table.rstrip(), "PASS" if ok else "FAIL"])
    return 0 if ok else 1


def _finish(out: Path, lines: Sequence[str]) -> None:
    text = "\n".join(lines) + "\n"
    atomic_write_text(out / "summary.txt", text)
    sys.stdout.write(text)


def _thread_limit():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(value))


def execute(cfg: RunConfig) -> int:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    for msg in cfg.warnings:
        print(f"warning: {msg}", file=sys.stderr)
    shown = len(cfg.warnings)
    runner = {"simulate": _simulate, "study": _study, "verify-forms": _verify}[cfg.command]
    try:
        with _thread_limit():
            status = runner(cfg, out)
    except SolverFailure as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return 2
    for msg in cfg.warnings[shown:]:
        print(f"warning: {msg}", file=sys.stderr)
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgpc", description=__doc__.splitlines()[0])
    parser.add_argument("command", nargs="?", choices=COMMANDS)
    parser.add_argument("--config", help="flat key = value configuration file")
    for f in fields(RunConfig):
        if f.name in ("command", "warnings"):
            continue
        parser.add_argument(f"--{f.name}", dest=f.name, default=None, metavar="VALUE")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = read_config_file(args.config) if args.config else {}
        opts = vars(args)
        for key, val in opts.items():
            if key in _PARSERS and val is not None:
                raw[key] = val
        cfg = parse_config(raw)
    except (ConfigError, OSError) as exc:
        print(f"dgpc: configuration error: {exc}", file=sys.stderr)
        return 2
    return execute(cfg)


if __name__ == "__main__":
    sys.exit(main())
