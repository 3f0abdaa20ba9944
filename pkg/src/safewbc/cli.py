"""Command-line front end.

Three commands:

* ``run <scenario> [--set key=value]... [--out dir]`` loads a scenario file,
  applies dotted overrides, runs the closed loop, and writes the trajectory
  CSV plus a JSON metrics summary.  Exit code 0 means no fault and every
  declared check passed; 1 means a check failed; 2 a schema/config error;
  3 a runtime fault (artifacts are still written, truncated at the fault).
* ``verify [suite]`` runs the numeric verification suites (finite-difference
  Jacobians, passive energy conservation, QP active-set enumeration, and the
  torque-space/acceleration-space barrier equivalence) and prints a JSON
  report.  Nonzero exit on any failed check.
* ``list`` prints the built-in models and scenario files, plus any extra
  scenario directory.

The default output directory comes from ``SAFEWBC_OUT``; an extra scenario
search directory from ``SAFEWBC_SCENARIOS``.
"""

from __future__ import annotations

import argparse
import itertools
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from . import multibody as mb
from . import qp
from . import safety as sf
from . import scenario as sco
from . import sim as sm
from .errors import (ModelError, ScenarioError, SimFault, UnknownFrameError,
                     VanishingDecouplingError)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_SCHEMA = 2
EXIT_FAULT = 3

ENV_OUT = "SAFEWBC_OUT"
ENV_SCENARIOS = "SAFEWBC_SCENARIOS"


# ---------------------------------------------------------------------------
# run


def _metric_value(metrics: dict, dotted: str):
    node = metrics
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            raise KeyError(dotted)
        node = node[part]
    return node


def evaluate_checks(assertions, metrics) -> list:
    """Declared min/max checks against the run's summary metrics."""
    out = []
    for a in assertions:
        try:
            value = _metric_value(metrics, a["metric"])
        except KeyError:
            value = None
        ok = isinstance(value, (int, float)) and not (
            isinstance(value, float) and math.isnan(value))
        if ok and a["min"] is not None and value < a["min"]:
            ok = False
        if ok and a["max"] is not None and value > a["max"]:
            ok = False
        out.append({"metric": a["metric"], "min": a["min"], "max": a["max"],
                    "value": value, "passed": bool(ok)})
    return out


def _check_line(c: dict) -> str:
    window = []
    if c["min"] is not None:
        window.append(f">= {c['min']:g}")
    if c["max"] is not None:
        window.append(f"<= {c['max']:g}")
    shown = "missing" if c["value"] is None else f"{c['value']:.6g}"
    verdict = "pass" if c["passed"] else "FAIL"
    return f"check {c['metric']} {' and '.join(window)}: {shown} {verdict}"


def cmd_run(args) -> int:
    try:
        path = sco.resolve_scenario(args.scenario,
                                    extra_dir=os.environ.get(ENV_SCENARIOS))
        cfg = sco.load_scenario(path)
        if args.set:
            cfg = cfg.with_overrides(args.set)
        scenario = cfg.build()
    except (ScenarioError, ModelError, UnknownFrameError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA

    out_dir = Path(args.out or os.environ.get(ENV_OUT, "runs"))
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        log = sm.run_scenario(scenario)
    except SimFault as exc:
        print(f"fault: {exc}", file=sys.stderr)
        return EXIT_FAULT

    if cfg.overrides:
        log.metrics["overrides"] = dict(cfg.overrides)
    checks = evaluate_checks(scenario.assertions, log.metrics)
    log.metrics["checks"] = checks

    names = cfg.data["output"]
    csv_path = out_dir / (names["csv"] or f"{scenario.name}.csv")
    metrics_path = out_dir / (names["metrics"] or
                              f"{scenario.name}.metrics.json")
    log.to_csv(csv_path)
    log.write_metrics(metrics_path)

    fault = "none" if log.fault is None else (
        f"{log.fault['type']} at t={log.fault['t']:g}")
    print(f"ran {scenario.name}: {len(log)} ticks of "
          f"{scenario.duration:g} s, fault {fault}")
    for c in checks:
        print(_check_line(c))
    print(f"wrote {csv_path}")
    print(f"wrote {metrics_path}")

    if log.fault is not None:
        return EXIT_FAULT
    if any(not c["passed"] for c in checks):
        return EXIT_CHECK_FAILED
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify suites


def _entry(name: str, value: float, limit: float, passed=None) -> dict:
    ok = bool(value < limit) if passed is None else bool(passed)
    return {"name": name, "value": float(value), "limit": float(limit),
            "passed": ok}


def verify_jacobians() -> list:
    """Frame and loop Jacobians against central differences, all models."""
    rng = np.random.default_rng(11)
    eps = 1e-6
    checks = []
    for mname in mb.list_builtin_models():
        model = mb.load_builtin_model(mname)
        worst = 0.0
        for _ in range(4):
            q = np.asarray(model.q0) + 0.2 * rng.standard_normal(model.nq)
            qd = rng.standard_normal(model.nq)
            hi, lo = mb.KinCache(model, q + eps * qd), mb.KinCache(model,
                                                                   q - eps * qd)
            cache = mb.KinCache(model, q)
            for fname in model.frames:
                jac = cache.frame_jacobian(fname)
                p_hi, r_hi = hi.frame_pose(fname)
                p_lo, r_lo = lo.frame_pose(fname)
                v_fd = (p_hi - p_lo) / (2.0 * eps)
                w_fd = Rotation.from_matrix(r_hi @ r_lo.T).as_rotvec() / (2.0 * eps)
                err = max(float(np.abs(jac[:3] @ qd - v_fd).max()),
                          float(np.abs(jac[3:] @ qd - w_fd).max()))
                scale = max(1.0, float(np.abs(v_fd).max()),
                            float(np.abs(w_fd).max()))
                worst = max(worst, err / scale)
            if model.closures:
                j_fd = (hi.loop_residuals() - lo.loop_residuals()) / (2.0 * eps)
                err = float(np.abs(cache.loop_jacobian() @ qd - j_fd).max())
                worst = max(worst, err / max(1.0, float(np.abs(j_fd).max())))
        checks.append(_entry(f"jacobian-fd:{mname}", worst, 1e-5))
    return checks


def verify_energy() -> list:
    """Passive integration: energy conservation and loop drift."""
    checks = []
    dpend = mb.load_builtin_model("dpend")
    cfg = sm.SimConfig(dt=1e-4, integrator="rk4", substeps=1)
    st = mb.State(np.array([0.9, -0.4]), np.zeros(2))
    e0 = mb.total_energy(dpend, st.q, st.qd)
    drift = 0.0
    for k in range(50000):
        st = sm.step(dpend, st, np.zeros(dpend.nu), cfg)
        if k % 25 == 24:
            drift = max(drift, abs(mb.total_energy(dpend, st.q, st.qd) - e0))
    checks.append(_entry("dpend-rk4-energy-drift-5s", drift, 1e-4))

    fb = mb.load_builtin_model("fourbar-arm")
    cfg = sm.SimConfig(dt=1e-3, integrator="rk4", substeps=1)
    st = mb.State(np.array([0.5, 0.5, -0.4, -0.4]), np.zeros(4))
    worst = 0.0
    for _ in range(5000):
        st = sm.step(fb, st, np.zeros(fb.nu), cfg)
        worst = max(worst, float(np.abs(mb.loop_residual(fb, st.q)).max()))
    checks.append(_entry("fourbar-loop-residual-5s", worst, 1e-5))
    return checks


def _random_spd(rng, n: int) -> np.ndarray:
    a = rng.standard_normal((n, n))
    return a @ a.T + (0.3 + rng.random()) * np.eye(n)


def enumerate_qp(h, g, a_in, b_in):
    """Exhaustive active-set search; the optimum of a strictly convex QP
    satisfies the KKT system of some row subset of size <= n."""
    n = h.shape[0]
    m = a_in.shape[0]
    best = None
    for size in range(min(n, m) + 1):
        for rows in itertools.combinations(range(m), size):
            a_act = a_in[list(rows)]
            kkt = np.block([[h, a_act.T],
                            [a_act, np.zeros((size, size))]])
            rhs = np.concatenate([-g, b_in[list(rows)]])
            try:
                xl = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            x, mult = xl[:n], xl[n:]
            if np.any(mult < -1e-9):
                continue
            if np.any(a_in @ x - b_in > 1e-9):
                continue
            obj = 0.5 * x @ h @ x + g @ x
            if best is None or obj < best[1]:
                best = (x, obj)
    return best


def verify_qp_bruteforce() -> list:
    """Dense solver against a direct KKT solve and exhaustive enumeration."""
    rng = np.random.default_rng(5)
    checks = []

    worst_eq = 0.0
    for _ in range(120):
        n = int(rng.integers(2, 7))
        m = int(rng.integers(1, n))
        h = _random_spd(rng, n)
        g = rng.standard_normal(n)
        a_eq = rng.standard_normal((m, n))
        b_eq = rng.standard_normal(m)
        sol = qp.solve_qp(h, g, a_eq=a_eq, b_eq=b_eq)
        kkt = np.block([[h, a_eq.T], [a_eq, np.zeros((m, m))]])
        x_ref = np.linalg.solve(kkt, np.concatenate([-g, b_eq]))[:n]
        worst_eq = max(worst_eq, float(np.abs(sol.x - x_ref).max()))
    checks.append(_entry("equality-kkt", worst_eq, 1e-10))

    worst_in = 0.0
    disagreements = 0
    for _ in range(150):
        n = int(rng.integers(2, 6))
        mi = int(rng.integers(1, 9))
        h = _random_spd(rng, n)
        g = rng.standard_normal(n)
        a_in = rng.standard_normal((mi, n))
        b_in = rng.standard_normal(mi)
        sol = qp.solve_qp(h, g, a_in=a_in, b_in=b_in)
        ref = enumerate_qp(h, g, a_in, b_in)
        if (ref is None) != (not sol.ok):
            disagreements += 1
        elif ref is not None:
            worst_in = max(worst_in, float(np.abs(sol.x - ref[0]).max()))
    checks.append(_entry("active-set-enumeration", worst_in, 1e-8))
    checks.append(_entry("feasibility-agreement", float(disagreements), 0.5))
    return checks


def verify_ecbf_equivalence(trials: int = 250) -> list:
    """Same barrier enforced on acceleration vs on torque, torques compared.

    On a fixed-base fully actuated model, qdd = M^-1 (B u - bias), so the
    acceleration-space row (row . qdd >= rhs) and the torque-space row
    obtained by that substitution cut out the same feasible set; with the
    same objective both QPs must return the same torque.
    """
    model = mb.load_builtin_model("dpend")
    spec = sf.BarrierSpec(name="reach", kind="frame-coord", frame="tip",
                          coord=0, threshold=-0.9, sign=-1.0,
                          poles=(8.0, 12.0))
    rng = np.random.default_rng(23)
    gamma_u = 1e-3
    big = 200.0
    worst = 0.0
    used = 0
    for _ in range(trials):
        q = rng.uniform(-math.pi, math.pi, size=2)
        qd = 2.0 * rng.standard_normal(2)
        qdd_des = 5.0 * rng.standard_normal(2)
        cache = mb.KinCache(model, q, qd)
        try:
            state = sf.aecbf_row_cached(cache, spec)
        except VanishingDecouplingError:
            continue
        m_mat = cache.mass_matrix()
        bias = cache.bias_forces()
        b_mat = model.B

        # acceleration-space QP over [qdd; u]
        h4 = 2.0 * np.diag([1.0, 1.0, gamma_u, gamma_u])
        g4 = np.concatenate([-2.0 * qdd_des, np.zeros(2)])
        a_eq = np.hstack([m_mat, -b_mat])
        a_in = np.vstack([
            np.concatenate([-state.row, np.zeros(2)]),
            np.hstack([np.zeros((2, 2)), np.eye(2)]),
            np.hstack([np.zeros((2, 2)), -np.eye(2)]),
        ])
        b_in = np.concatenate([[-state.rhs], np.full(4, big)])
        sol_a = qp.solve_qp(h4, g4, a_eq=a_eq, b_eq=-bias, a_in=a_in,
                            b_in=b_in)

        # torque-space QP over u, dynamics substituted
        lin = np.linalg.solve(m_mat, b_mat)
        aff = np.linalg.solve(m_mat, -bias)
        h2 = 2.0 * (lin.T @ lin + gamma_u * np.eye(2))
        g2 = 2.0 * lin.T @ (aff - qdd_des)
        a_in2 = np.vstack([-state.row @ lin, np.eye(2), -np.eye(2)])
        b_in2 = np.concatenate([[-state.rhs + state.row @ aff],
                                np.full(4, big)])
        sol_u = qp.solve_qp(h2, g2, a_in=a_in2, b_in=b_in2)

        if not (sol_a.ok and sol_u.ok):
            continue
        used += 1
        worst = max(worst, float(np.abs(sol_a.x[2:] - sol_u.x).max()))
    checks = [_entry("torque-vs-acceleration-row", worst, 1e-8),
              _entry("states-compared", float(used), float(trials) + 0.5,
                     passed=used >= trials // 2)]
    return checks


SUITES = {
    "jacobians": verify_jacobians,
    "energy": verify_energy,
    "qp-bruteforce": verify_qp_bruteforce,
    "ecbf-equivalence": verify_ecbf_equivalence,
}


def cmd_verify(args) -> int:
    if args.suite is not None and args.suite not in SUITES:
        print(f"error: unknown suite {args.suite!r}; have "
              f"{', '.join(SUITES)}", file=sys.stderr)
        return EXIT_SCHEMA
    picked = [args.suite] if args.suite else list(SUITES)
    report = {"suites": [], "passed": True}
    for name in picked:
        checks = SUITES[name]()
        ok = all(c["passed"] for c in checks)
        report["suites"].append({"name": name, "passed": ok,
                                 "checks": checks})
        report["passed"] = report["passed"] and ok
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK if report["passed"] else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------
# list


def cmd_list(args) -> int:
    for name in mb.list_builtin_models():
        print(f"model {name}")
    builtin = sco.list_builtin_scenarios()
    for name in builtin:
        print(f"scenario {name}")
    extra = args.scenarios or os.environ.get(ENV_SCENARIOS)
    if extra and Path(extra).is_dir():
        for p in sorted(Path(extra).glob("*.yaml")):
            if p.stem not in builtin:
                print(f"scenario {p.stem} (extra)")
    return EXIT_OK


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="safewbc",
        description="Whole-body QP controller: run scenarios, verify "
                    "numerics, list assets.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario file")
    p_run.add_argument("scenario", help="scenario path or built-in name")
    p_run.add_argument("--set", action="append", default=[],
                       metavar="KEY=VALUE",
                       help="override a scenario field (dotted path)")
    p_run.add_argument("--out", default=None,
                       help=f"output directory (default ${ENV_OUT} or runs/)")

    p_ver = sub.add_parser("verify", help="run verification suites")
    p_ver.add_argument("suite", nargs="?", default=None,
                       help=f"one of {', '.join(SUITES)} (default: all)")

    p_list = sub.add_parser("list", help="list models and scenarios")
    p_list.add_argument("--scenarios", default=None,
                        help="extra scenario directory")

    args = parser.parse_args(argv)
    handler = {"run": cmd_run, "verify": cmd_verify, "list": cmd_list}
    return handler[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
