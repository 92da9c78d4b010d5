"""Command line front end.

    hyperdress run CONFIG [--out-dir DIR] [--levels N]
    hyperdress selftest [--seed N] [--force-fail] [--verbose]
    hyperdress table R

Exit codes: 0 success, 1 selftest failure, 2 constraint check failed on F,
3 singular operator, 4 configuration error.  Diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from .algebra import CDNumber, format_table
from .checks import alternativity_counterexample, run_all
from .diffops import SigmaSpec
from .dressing import (GridConfig, Mode, NoDispersionSolution, Scenario, ScenarioError, SingularOperator,
                       build_F, check_constraints, right_linearity_check, solve_dressing)
from .line_integral import TailNotDecayed
from .residuals import EXACT_TOL, ResidualReport, max_workers, refine_and_estimate, solution_rows

SCHEMA_VERSION = 1
CSV_COLUMNS = ("equation_id", "h", "res_Linf", "res_L2", "tail", "order_est")
EXIT_OK, EXIT_SELFTEST, EXIT_CONSTRAINT, EXIT_SINGULAR, EXIT_CONFIG = 0, 1, 2, 3, 4
CONSTRAINT_MIN_ORDER = 1.5
CONSTRAINT_EXACT = EXACT_TOL

log = logging.getLogger("hyperdress")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config


_SCENARIO_KEYS = {"kind", "r", "s", "p", "sigma_x", "sigma_y", "sigma_t", "ray_coord", "classical", "heat_u"}
_TOP_KEYS = {"schema_version", "scenario", "modes", "grid", "refinement", "solver", "output", "seed"}


def _sigma(node, level: int, name: str) -> SigmaSpec:
    if not isinstance(node, dict):
        raise ConfigError(f"{name}: expected a mapping")
    try:
        if "generator" in node:
            extra = set(node) - {"generator", "coord", "weight"}
            if extra:
                raise ConfigError(f"{name}: unknown keys {sorted(extra)}")
            return SigmaSpec.single(level, int(node["generator"]), node.get("coord"),
                                    weight=float(node.get("weight", 1.0)))
        extra = set(node) - {"psi", "xi"}
        if extra or "psi" not in node:
            raise ConfigError(f"{name}: give either psi (+ optional xi) or generator (+ coord, weight)")
        return SigmaSpec(level, tuple(node["psi"]), None if node.get("xi") is None else tuple(node["xi"]))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{name}: {exc}") from exc


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def parse_config(data: dict) -> tuple[Scenario, dict]:
    """YAML tree -> (Scenario, run options).  Scenario invariants are checked
    here, before anything is computed."""
    extra = set(data) - _TOP_KEYS
    if extra:
        raise ConfigError(f"unknown top-level keys {sorted(extra)}")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version {version} is not supported (expected {SCHEMA_VERSION})")
    sc = data.get("scenario")
    if not isinstance(sc, dict):
        raise ConfigError("missing 'scenario' mapping")
    extra = set(sc) - _SCENARIO_KEYS
    if extra:
        raise ConfigError(f"scenario: unknown keys {sorted(extra)}")
    for key in ("kind", "r", "sigma_x", "sigma_t"):
        if key not in sc:
            raise ConfigError(f"scenario.{key} is required")
    try:
        level = int(sc["r"])
        if level not in (2, 3):
            raise ConfigError("scenario.r must be 2 or 3")
        sigmas = {k: _sigma(sc[k], level, k) for k in ("sigma_x", "sigma_y", "sigma_t") if sc.get(k) is not None}
        modes_raw = data.get("modes")
        if not isinstance(modes_raw, list) or not modes_raw:
            raise ConfigError("'modes' must be a non-empty list")
        modes = []
        for k, m in enumerate(modes_raw):
            if not isinstance(m, dict):
                raise ConfigError(f"modes[{k}] must be a mapping")
            modes.append(Mode(**{key: (str(v) if key == "shape" else float(v)) for key, v in m.items()}))
        grid_raw = data.get("grid") or {}
        if not isinstance(grid_raw, dict):
            raise ConfigError("'grid' must be a mapping")
        grid = GridConfig(**{k: (v if k == "rule" or v is None else float(v)) for k, v in grid_raw.items()})
        p = float(sc.get("p", 1.0))
        if not math.isfinite(p):
            raise ConfigError("scenario.p must be finite")
        scenario = Scenario(kind=str(sc["kind"]), level=level, sigma_x=sigmas["sigma_x"], sigma_t=sigmas["sigma_t"],
                            modes=tuple(modes), sigma_y=sigmas.get("sigma_y"), s=int(sc.get("s", 1)), p=p,
                            grid=grid, ray_coord=sc.get("ray_coord"), classical=bool(sc.get("classical", False)),
                            heat_u=float(sc.get("heat_u", 2.0)))
    except ConfigError:
        raise
    except (ScenarioError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    ref = data.get("refinement") or {}
    solver = data.get("solver") or {}
    out = data.get("output") or {}
    opts = {
        "levels": int(ref.get("levels", 2)),
        "method": str(solver.get("method", "split")),
        "neumann": bool(solver.get("neumann", True)),
        "dir": out.get("dir"),
        "stem": out.get("stem"),
        "seed": int(data.get("seed", 0)),
    }
    if opts["levels"] not in (2, 3):
        raise ConfigError("refinement.levels must be 2 or 3")
    if opts["method"] not in ("split", "dense"):
        raise ConfigError("solver.method must be 'split' or 'dense'")
    return scenario, opts


# ---------------------------------------------------------------------------
# pipeline


def rounding_scale(F, h: float) -> float:
    """Rounding level of a third-order stencil applied to F."""
    return float(np.max(np.abs(F.values), initial=0.0)) / h ** 3


def constraint_gate(scenario: Scenario) -> dict:
    """Finite-difference constraint residuals of F at h and h/2.  A constraint
    passes when it is at rounding level or shrinks at order >= 1.5."""
    scenario = scenario.with_grid(scenario.grid.with_fixed_margin())
    F = build_F(scenario)
    coarse = check_constraints(F, scenario)
    fine_sc = scenario.with_grid(scenario.grid.refined(2))
    F_fine = build_F(fine_sc)
    fine = check_constraints(F_fine, fine_sc)
    floor = CONSTRAINT_EXACT * max(1.0, rounding_scale(F_fine, fine_sc.grid.h))
    out = {}
    for name in coarse:
        a, b = coarse[name], fine[name]
        if max(a, b) <= floor:
            order, ok = None, True
        else:
            order = math.log2(a / b) if a > 0 and b > 0 else None
            ok = order is not None and order >= CONSTRAINT_MIN_ORDER
        out[name] = {"coarse": a, "fine": b, "order": order, "passed": ok}
    return out


def random_unit(level: int, seed: int) -> CDNumber:
    v = np.random.default_rng(seed).standard_normal(1 << level)
    return CDNumber(v / np.linalg.norm(v))


def run_pipeline(scenario: Scenario, opts: dict) -> tuple[list, dict]:
    """Solve at every refinement level and collect residual rows plus
    per-level solver diagnostics."""
    b = random_unit(scenario.level, opts["seed"])
    diagnostics = {}

    def op(sc: Scenario) -> dict:
        sol = solve_dressing(sc, method=opts["method"], neumann=opts["neumann"])
        rows = solution_rows(sol)
        cons = check_constraints(sol.F, sc)
        h = float(sc.grid.h)
        for name, v in cons.items():
            rows[f"constraint_{name}"] = ResidualReport(f"constraint_{name}", h, v, v,
                                                        scale=rounding_scale(sol.F, h))
        lin = right_linearity_check(sol, b)
        rows["right_linearity"] = ResidualReport("right_linearity", h, lin["relative"], lin["relative"])
        diagnostics[_fmt(h)] = dict(sol.diagnostics, right_linearity_passed=bool(lin["passed"]))
        return rows

    reports = refine_and_estimate(op, scenario, levels=opts["levels"])
    return reports, {k: diagnostics[k] for k in sorted(diagnostics, key=float, reverse=True)}


# ---------------------------------------------------------------------------
# output


def _fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if not math.isfinite(x):
        return str(x)
    return f"{x:.12e}"


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, CDNumber):
        return [float(c) for c in x.coeffs]
    return x


def csv_text(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        w.writerow([r.equation_id, _fmt(r.h), _fmt(r.res_Linf), _fmt(r.res_L2), _fmt(r.tail), _fmt(r.order_est)])
    return buf.getvalue()


def json_text(config: dict, reports, constraints: dict, diagnostics: dict) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "config": config,
        "constraints": constraints,
        "diagnostics": diagnostics,
        "reports": [r.as_dict() for r in reports],
    }
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"


def _summary(reports) -> str:
    lines = [f"{'equation':<18}{'h':>10}{'res_Linf':>14}{'order':>8}  status"]
    for r in reports:
        order = "" if r.order_est is None else f"{r.order_est:.2f}"
        lines.append(f"{r.equation_id:<18}{r.h:>10.4g}{r.res_Linf:>14.4e}{order:>8}  {r.status}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# verbs


def cmd_run(args) -> int:
    try:
        data = load_config(args.config)
        scenario, opts = parse_config(data)
        if args.levels is not None:
            if args.levels not in (2, 3):
                raise ConfigError("--levels must be 2 or 3")
            opts["levels"] = args.levels
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    out_dir = Path(args.out_dir or opts["dir"] or ".")
    stem = opts["stem"] or Path(args.config).stem
    log.info("scenario %s r=%d s=%d p=%g h=%g levels=%d workers=%d", scenario.kind, scenario.level, scenario.s,
             scenario.p, scenario.grid.h, opts["levels"], max_workers())
    try:
        constraints = constraint_gate(scenario)
    except NoDispersionSolution as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    for name, c in constraints.items():
        log.info("constraint %s: %.3e -> %.3e (order %s)", name, c["coarse"], c["fine"],
                 "exact" if c["order"] is None and c["passed"] else c["order"])
    failed = [n for n, c in constraints.items() if not c["passed"]]
    if failed:
        log.error("F violates constraint(s) %s: residual does not shrink under refinement", ", ".join(failed))
        return EXIT_CONSTRAINT
    try:
        reports, diagnostics = run_pipeline(scenario, opts)
    except SingularOperator as exc:
        log.error("singular operator: %s", exc)
        return EXIT_SINGULAR
    except TailNotDecayed as exc:
        log.error("config error: the ray integrand does not decay (%s); widen eps_tail or set ray_length", exc)
        return EXIT_CONFIG
    except NoDispersionSolution as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.json"
    csv_path.write_text(csv_text(reports))
    json_path.write_text(json_text(data, reports, constraints, diagnostics))
    print(_summary(reports))
    log.info("wrote %s and %s", csv_path, json_path)
    return EXIT_OK


def cmd_selftest(args) -> int:
    suites = run_all(args.seed)
    failures = 0
    for name, checks in suites.items():
        ok = sum(c.passed for c in checks)
        failures += len(checks) - ok
        print(f"{name}: {ok}/{len(checks)} passed")
        for c in checks:
            if args.verbose or not c.passed:
                mark = "ok  " if c.passed else "FAIL"
                extra = f" ({c.detail})" if c.detail else ""
                print(f"  {mark} {c.name}: {c.value:.3e}{extra}")
    zd = next(c for c in suites["algebra"] if c.name.endswith("zero divisor"))
    print(f"sedenion zero divisor: {zd.detail}")
    alt = alternativity_counterexample(4)
    if alt is not None:
        print(f"sedenion alternativity counterexample: x = {alt[0]}, y = {alt[1]}, |(xy)y - x(yy)| = {alt[2]:g}")
    if args.force_fail:
        print("forced failure requested")
        return EXIT_SELFTEST
    return EXIT_OK if failures == 0 else EXIT_SELFTEST


def cmd_table(args) -> int:
    if not 0 <= args.r <= 6:
        log.error("r must be between 0 and 6")
        return EXIT_CONFIG
    print(format_table(args.r))
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="hyperdress", description="Cayley-Dickson dressing solver and residual checker")
    ap.add_argument("-q", "--quiet", action="store_true", help="only errors on stderr")
    sub = ap.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    r = sub.add_parser("run", help="solve a scenario config and write CSV/JSON reports")
    r.add_argument("config")
    r.add_argument("--out-dir", default=None)
    r.add_argument("--levels", type=int, default=None, help="refinement levels (2 or 3)")
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("selftest", help="algebra, operator and line-integral invariant suites")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--force-fail", action="store_true", help="exit 1 regardless (for CI plumbing tests)")
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_selftest)
    t = sub.add_parser("table", help="print the basis multiplication table of A_r")
    t.add_argument("r", type=int)
    t.set_defaults(func=cmd_table)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s: %(message)s", force=True)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
