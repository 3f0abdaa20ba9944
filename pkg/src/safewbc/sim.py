"""Ground-truth constrained dynamics and closed-loop scenario execution.

The simulator advances q, qd by solving the index-1 KKT system

    [ M  -J^T ] [qdd]   [ B u - bias + f_ext                    ]
    [ J   0   ] [lam] = [ -jdot_qd - 2 a (J qd) - b^2 residual  ]

where J stacks loop-closure rows above active-contact rows and the a, b
terms are Baumgarte stabilization of the position-level drift.  This is the
one place in the package where the mass matrix gets factored.  Scenario runs
close the loop: one controller tick, zero-order-hold torque over a fixed
number of physics substeps, one log row per tick.  Runs are single threaded
and free of any random source, so identical scenarios produce byte-identical
logs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import contacts as ct
from . import gait as gt
from . import idqp
from . import multibody as mb
from . import safety as sf
from . import tasks as tk
from .errors import ScenarioError, SimFault
from .multibody import State

INTEGRATORS = ("semi-implicit-euler", "rk4")
DEFAULT_BAUMGARTE = 20.0
_ZERO_ROW_TOL = 1e-12
_KKT_RESIDUAL_TOL = 1e-6


@dataclass(frozen=True)
class ExternalForce:
    """A world-frame wrench applied at a model frame for a time window."""

    frame: str
    wrench: tuple
    start: float
    duration: float

    def __post_init__(self):
        w = tuple(float(v) for v in self.wrench)
        if len(w) != 6:
            raise ScenarioError("external wrench must have six components")
        object.__setattr__(self, "wrench", w)
        if self.duration < 0:
            raise ScenarioError("external force duration must be >= 0")

    def active(self, t: float) -> bool:
        return self.start <= t < self.start + self.duration


@dataclass(frozen=True)
class SimConfig:
    """Integrator settings shared by every physics substep."""

    dt: float = 1e-4
    integrator: str = "rk4"
    alpha: float = DEFAULT_BAUMGARTE
    beta: float = DEFAULT_BAUMGARTE
    substeps: int = 10
    external_forces: tuple = ()

    def __post_init__(self):
        if not self.dt > 0:
            raise ScenarioError("sim dt must be positive")
        if self.integrator not in INTEGRATORS:
            raise ScenarioError(f"unknown integrator {self.integrator!r}")
        if self.alpha < 0 or self.beta < 0:
            raise ScenarioError("stabilization gains must be nonnegative")
        if self.substeps < 1:
            raise ScenarioError("substeps must be >= 1")
        object.__setattr__(self, "external_forces", tuple(self.external_forces))


def external_generalized_force(cache: mb.KinCache, forces, t: float):
    """Map the active scheduled wrenches into generalized forces."""
    out = None
    for f in forces:
        if not f.active(t):
            continue
        if out is None:
            out = np.zeros(cache.model.nq)
        out += cache.frame_jacobian(f.frame).T @ np.asarray(f.wrench)
    return out


def _fault(msg: str, model, q, qd, t=None) -> SimFault:
    err = SimFault(f"{msg} [model={model.name} t={t} q={np.array2string(np.asarray(q), precision=6)} "
                   f"qd={np.array2string(np.asarray(qd), precision=6)}]")
    err.state = {"t": t, "q": np.array(q, dtype=float),
                 "qd": np.array(qd, dtype=float)}
    return err


def _constraint_rows(cache: mb.KinCache, contacts, anchors):
    """J, jdot_qd, and position residual rows: loops first, contacts after."""
    model = cache.model
    jac, drift, resid = [], [], []
    if model.closures:
        jac.append(cache.loop_jacobian())
        drift.append(cache.loop_drift())
        resid.append(cache.loop_residuals())
    for k, c in enumerate(contacts):
        jac.append(ct.contact_jacobian(cache, c))
        drift.append(ct.contact_drift(cache, c))
        p, _ = cache.frame_pose(c.frame)
        r = np.zeros(c.dim)
        if anchors is not None and anchors[k] is not None:
            r[:3] = p - np.asarray(anchors[k], dtype=float)
        resid.append(r)
    if not jac:
        n = model.nq
        return np.zeros((0, n)), np.zeros(0), np.zeros(0)
    return np.vstack(jac), np.concatenate(drift), np.concatenate(resid)


def constrained_forward_dynamics(model, q, qd, u, contacts=(), f_ext=None,
                                 alpha=0.0, beta=0.0, anchors=None, *,
                                 cache=None, t=None):
    """Solve the constrained equations of motion for (qdd, lam).

    ``f_ext`` is an already-generalized force vector.  ``anchors`` pins each
    contact's position residual to where the contact was established;
    without them only velocity-level stabilization applies to contacts.
    Identically zero constraint rows (a planar model's out-of-plane contact
    coordinate) are exactly vacuous and get a zero multiplier.
    """
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    if cache is None:
        cache = mb.KinCache(model, q, qd)
    mass = cache.mass_matrix()
    rhs_dyn = model.B @ np.asarray(u, dtype=float) - cache.bias_forces()
    if f_ext is not None:
        rhs_dyn = rhs_dyn + np.asarray(f_ext, dtype=float)
    jac, drift, resid = _constraint_rows(cache, contacts, anchors)
    rhs_c = -drift - 2.0 * alpha * (jac @ qd) - beta * beta * resid

    nq, nc = model.nq, jac.shape[0]
    live = np.abs(jac).max(axis=1) > _ZERO_ROW_TOL if nc else np.zeros(0, bool)
    dead_demand = np.abs(rhs_c[~live]) if nc else np.zeros(0)
    if dead_demand.size and dead_demand.max() > 1e-9:
        raise _fault("vacuous constraint row with nonzero demand", model, q, qd, t)
    j_live = jac[live]
    r_live = rhs_c[live]
    m = j_live.shape[0]

    kkt = np.zeros((nq + m, nq + m))
    kkt[:nq, :nq] = mass
    kkt[:nq, nq:] = -j_live.T
    kkt[nq:, :nq] = j_live
    rhs = np.concatenate([rhs_dyn, r_live])
    sol = _solve_kkt(kkt, rhs, model, q, qd, t)

    qdd = sol[:nq]
    lam = np.zeros(nc)
    lam[live] = sol[nq:]
    return qdd, lam


def _solve_kkt(kkt, rhs, model, q, qd, t):
    sol = None
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        pass
    scale = max(1.0, float(np.abs(rhs).max(initial=0.0)))
    if sol is None or not np.all(np.isfinite(sol)) \
            or np.abs(kkt @ sol - rhs).max(initial=0.0) > _KKT_RESIDUAL_TOL * scale:
        # redundant rows make the KKT matrix singular; fall back to the
        # least-squares multiplier resolution
        sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        if not np.all(np.isfinite(sol)) \
                or np.abs(kkt @ sol - rhs).max(initial=0.0) > _KKT_RESIDUAL_TOL * scale:
            raise _fault("singular constraint KKT system", model, q, qd, t)
    return sol


def step(model, state: State, u, config: SimConfig, contacts=(),
         anchors=None) -> State:
    """Advance one integrator step of config.dt under zero-order-hold u."""

    def accel(t, q, qd):
        cache = mb.KinCache(model, q, qd)
        f_ext = external_generalized_force(cache, config.external_forces, t)
        qdd, _ = constrained_forward_dynamics(
            model, q, qd, u, contacts, f_ext, config.alpha, config.beta,
            anchors, cache=cache, t=t)
        return qdd

    h = config.dt
    t, q, qd = state.t, state.q, state.qd
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
        raise _fault("non-finite state entering step", model, q, qd, t)
    if config.integrator == "semi-implicit-euler":
        qd1 = qd + h * accel(t, q, qd)
        q1 = q + h * qd1
    else:
        a1 = accel(t, q, qd)
        k1q, k1v = qd, a1
        a2 = accel(t + h / 2, q + h / 2 * k1q, qd + h / 2 * k1v)
        k2q, k2v = qd + h / 2 * k1v, a2
        a3 = accel(t + h / 2, q + h / 2 * k2q, qd + h / 2 * k2v)
        k3q, k3v = qd + h / 2 * k2v, a3
        a4 = accel(t + h, q + h * k3q, qd + h * k3v)
        k4q, k4v = qd + h * k3v, a4
        q1 = q + h / 6 * (k1q + 2 * k2q + 2 * k3q + k4q)
        qd1 = qd + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
    if not (np.all(np.isfinite(q1)) and np.all(np.isfinite(qd1))):
        raise _fault("non-finite state after step", model, q, qd, t)
    return State(q1, qd1, t + h)


def impact_projection(model, q, qd_minus, contacts):
    """Project velocities onto the constraint manifold of a new contact set.

    Rigid plastic impact: [M -J^T; J 0] [v+; imp] = [M v-; 0].  Loop-closure
    rows ride along so the mechanism stays consistent through the jump.
    """
    q = np.asarray(q, dtype=float)
    qd_minus = np.asarray(qd_minus, dtype=float)
    cache = mb.KinCache(model, q, np.zeros(model.nq))
    mass = cache.mass_matrix()
    jac, _, _ = _constraint_rows(cache, contacts, None)
    nc = jac.shape[0]
    live = np.abs(jac).max(axis=1) > _ZERO_ROW_TOL if nc else np.zeros(0, bool)
    j_live = jac[live]
    m = j_live.shape[0]
    nq = model.nq
    kkt = np.zeros((nq + m, nq + m))
    kkt[:nq, :nq] = mass
    kkt[:nq, nq:] = -j_live.T
    kkt[nq:, :nq] = j_live
    rhs = np.concatenate([mass @ qd_minus, np.zeros(m)])
    sol = _solve_kkt(kkt, rhs, model, q, qd_minus, None)
    impulse = np.zeros(nc)
    impulse[live] = sol[nq:]
    return sol[:nq], impulse


# -- closed-loop scenario runner ----------------------------------------------------


@dataclass
class Scenario:
    """A fully constructed closed-loop experiment, ready to run."""

    name: str
    model: mb.RobotModel
    duration: float
    control_rate: float = 1000.0
    tasks: tuple = ()
    contacts: tuple = ()
    barriers: tuple = ()
    monitors: tuple = ()
    options: idqp.ControllerOptions = field(default_factory=idqp.ControllerOptions)
    sim: SimConfig = field(default_factory=SimConfig)
    gait: gt.GaitScheduler | None = None
    q0: np.ndarray | None = None
    qd0: np.ndarray | None = None
    assertions: tuple = ()
    raw: dict | None = None

    def __post_init__(self):
        if not self.duration > 0:
            raise ScenarioError("scenario duration must be positive")
        if not self.control_rate > 0:
            raise ScenarioError("control rate must be positive")
        tick = 1.0 / self.control_rate
        span = self.sim.dt * self.sim.substeps
        if abs(span - tick) > 1e-12:
            raise ScenarioError(
                f"sim dt {self.sim.dt} x substeps {self.sim.substeps} does not "
                f"tile the control tick {tick}")
        if not self.tasks and self.gait is None:
            raise ScenarioError("scenario needs tasks or a gait")
        for attr in ("tasks", "contacts", "barriers", "monitors"):
            setattr(self, attr, tuple(getattr(self, attr)))
        names = [b.name for b in self.barriers + self.monitors]
        if len(set(names)) != len(names):
            raise ScenarioError("barrier and monitor names must be unique")
        if len({t.name for t in self.tasks}) != len(self.tasks):
            raise ScenarioError("task names must be unique")


class TrajectoryLog:
    """Fixed-schema per-tick records plus summary metrics.

    Every row holds exactly the declared columns; numeric cells print at 17
    significant digits so a re-run diffs clean against a stored log.
    """

    def __init__(self, columns):
        self.columns = tuple(columns)
        self._index = {c: i for i, c in enumerate(self.columns)}
        self.rows: list[tuple] = []
        self.metrics: dict = {}
        self.incidents: list = []
        self.fault: dict | None = None

    def __len__(self) -> int:
        return len(self.rows)

    def append(self, record: dict) -> None:
        missing = set(self.columns) - set(record)
        extra = set(record) - set(self.columns)
        if missing or extra:
            raise KeyError(f"log record mismatch: missing={sorted(missing)} "
                           f"extra={sorted(extra)}")
        self.rows.append(tuple(record[c] for c in self.columns))

    def column(self, name: str):
        k = self._index[name]
        vals = [r[k] for r in self.rows]
        if vals and isinstance(vals[0], str):
            return vals
        return np.asarray(vals, dtype=float)

    @staticmethod
    def _cell(v) -> str:
        if isinstance(v, str):
            return v
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        return format(float(v), ".17g")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.columns) + "\r\n")
            for row in self.rows:
                fh.write(",".join(self._cell(v) for v in row) + "\r\n")

    def write_metrics(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.metrics, fh, indent=2, sort_keys=True,
                      default=_jsonable)
            fh.write("\n")


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not serializable: {type(v)!r}")


def _log_columns(sc: Scenario, task_names, barrier_names, nlam):
    model = sc.model
    cols = ["t"]
    cols += [f"q{i}" for i in range(model.nq)]
    cols += [f"qd{i}" for i in range(model.nq)]
    cols += [f"qdd_cmd{i}" for i in range(model.nq)]
    cols += [f"qdd_sim{i}" for i in range(model.nq)]
    cols += [f"u{i}" for i in range(model.nu)]
    cols += [f"lam{i}" for i in range(nlam)]
    cols += [f"err_{n}" for n in task_names]
    for n in barrier_names:
        cols += [f"h_{n}", f"hbound_{n}"]
    cols += ["com_x", "com_y", "com_z", "zmp_x", "zmp_y", "zmp_margin",
             "friction_margin", "loop_residual", "dyn_residual",
             "cons_residual", "qdd_consistency", "status", "fallback",
             "iterations", "domain", "step_index"]
    return cols


def _contact_layout(declared):
    """Frame name -> slice into the declared contact wrench stack."""
    out = {}
    off = 0
    for c in declared:
        out[c.frame] = slice(off, off + c.dim)
        off += c.dim
    return out, off


def _anchor_positions(model, q, contacts):
    cache = mb.KinCache(model, np.asarray(q, dtype=float))
    return [cache.frame_pose(c.frame)[0].copy() for c in contacts]


def run_scenario(sc: Scenario) -> TrajectoryLog:
    """Close the loop: controller tick, held torque, physics substeps, log."""
    model = sc.model
    q = np.array(sc.q0 if sc.q0 is not None else model.q0, dtype=float)
    qd = (np.array(sc.qd0, dtype=float) if sc.qd0 is not None
          else np.zeros(model.nq))
    tick_dt = 1.0 / sc.control_rate
    n_ticks = int(round(sc.duration * sc.control_rate))
    nloop = len(model.closures)

    gait = sc.gait
    if gait is not None:
        gait.start(q, qd, 0.0)
        declared = tuple(ct.ContactSpec(frame=f, mu=gait.mu)
                         for f in (gait.left_frame, gait.right_frame))
        task_names = ("com-height", "torso", "swing")
    else:
        declared = tuple(sc.contacts)
        task_names = tuple(t.name for t in sc.tasks)
    lam_slices, ncontact = _contact_layout(declared)
    nlam = nloop + ncontact
    # monitors are logged alongside enforced barriers but never reach the QP
    barrier_names = tuple(b.name for b in sc.barriers + sc.monitors)

    # exponential decay floor per barrier, anchored at the initial state
    tick_times = np.arange(n_ticks) * tick_dt
    bounds = {}
    for b in sc.barriers:
        h0, hd0, _, _ = sf.barrier_eval(b, model, q, qd)
        eta0 = np.array([h0, hd0])[: b.relative_degree]
        bounds[b.name] = sf.exponential_bound(b.k_alpha, eta0, tick_times)

    active = gait.contacts() if gait is not None else tuple(sc.contacts)
    anchors = _anchor_positions(model, q, active)
    controller = idqp.Controller(model, list(sc.tasks), contacts=active,
                                 barriers=sc.barriers, options=sc.options)
    log = TrajectoryLog(_log_columns(sc, task_names, barrier_names, nlam))
    seen_events: dict = {}

    for k in range(n_ticks):
        t = k * tick_dt
        try:
            if gait is not None and gait.due(t):
                landing = (ct.ContactSpec(frame=gait.swing_frame, mu=gait.mu),)
                qd, _ = impact_projection(model, q, qd, landing)
                gait.advance(q, qd, t)
                active = gait.contacts()
                anchors = _anchor_positions(model, q, active)
                controller.incidents.append(
                    {"t": t, "kind": "touchdown", "step": gait.step_index,
                     "stance": gait.stance})
            tasks_k = gait.tasks(q, qd, t) if gait is not None else None
            dom = f"ss-{gait.stance}" if gait is not None else "fixed"
            act_b = [b for b in sc.barriers
                     if b.domain is None or b.domain == dom]
            res = controller.control_step(t, q, qd, tasks=tasks_k,
                                          contacts=active if gait else None,
                                          barriers=act_b)
            # consistency check against the raw constraint model: no
            # stabilization terms and no scheduled disturbance
            qdd_sim, _ = constrained_forward_dynamics(model, q, qd, res.u,
                                                      active, t=t)
            _log_tick(log, sc, model, t, q, qd, res, qdd_sim, gait,
                      lam_slices, nloop, nlam, task_names, bounds, k, active)
            st = State(q.copy(), qd.copy(), t)
            for _ in range(sc.sim.substeps):
                st = step(model, st, res.u, sc.sim, active, anchors)
            q, qd = st.q, st.qd
            _flag_contact_events(controller, gait, model, q, t, res,
                                 seen_events)
        except (ValueError, RuntimeError) as exc:
            log.fault = {"t": t, "tick": k, "type": type(exc).__name__,
                         "message": str(exc)}
            break

    log.incidents = list(controller.incidents)
    log.metrics = _summarize(sc, log, task_names, barrier_names, gait)
    return log


def _flag_contact_events(controller, gait, model, q, t, res, seen) -> None:
    if gait is None:
        return
    cache = mb.KinCache(model, q)
    swing_z = cache.frame_pose(gait.swing_frame)[0][2]
    # flag at most once per step: the swing profile's second half dips below
    # ground level by construction and the simulator has no ground plane
    if swing_z < -1e-6 and seen.get("early") != gait.step_index:
        seen["early"] = gait.step_index
        controller.incidents.append(
            {"t": t, "kind": "early-ground-contact", "frame": gait.swing_frame,
             "z": float(swing_z)})
    lam_c = res.diag.lam[len(model.closures):]
    if lam_c.size >= 3 and lam_c[2] < -1e-9 \
            and seen.get("breakaway") != gait.step_index:
        seen["breakaway"] = gait.step_index
        controller.incidents.append(
            {"t": t, "kind": "contact-breakaway", "fz": float(lam_c[2])})


def _log_tick(log, sc, model, t, q, qd, res, qdd_sim, gait, lam_slices,
              nloop, nlam, task_names, bounds, k, active):
    diag = res.diag
    cache = mb.KinCache(model, q, qd)
    rec = {"t": t}
    for i in range(model.nq):
        rec[f"q{i}"] = q[i]
        rec[f"qd{i}"] = qd[i]
        rec[f"qdd_cmd{i}"] = diag.qdd[i]
        rec[f"qdd_sim{i}"] = qdd_sim[i]
    for i in range(model.nu):
        rec[f"u{i}"] = res.u[i]
    # map active contact wrenches into the declared stack layout
    lam_full = np.zeros(nlam)
    lam_full[:nloop] = diag.lam[:nloop]
    pos = nloop
    for c in active:
        sl = lam_slices[c.frame]
        lam_full[nloop + sl.start: nloop + sl.stop] = diag.lam[pos: pos + c.dim]
        pos += c.dim
    for i in range(nlam):
        rec[f"lam{i}"] = lam_full[i]
    for name in task_names:
        err = diag.task_errors.get(name)
        rec[f"err_{name}"] = (np.abs(err[0]).max() if err is not None
                              else math.nan)
    for name, series in bounds.items():
        hv = diag.barrier_h.get(name)
        rec[f"h_{name}"] = hv[0] if hv is not None else math.nan
        rec[f"hbound_{name}"] = series[k]
    for b in sc.monitors:
        rec[f"h_{b.name}"] = sf.barrier_eval_cached(cache, b)[0]
        rec[f"hbound_{b.name}"] = math.nan
    com = cache.com()
    rec["com_x"], rec["com_y"], rec["com_z"] = com
    zmp = diag.zmp
    rec["zmp_x"] = zmp[0] if zmp is not None else math.nan
    rec["zmp_y"] = zmp[1] if zmp is not None else math.nan
    rec["zmp_margin"] = (diag.zmp_margin if diag.zmp_margin is not None
                         else math.nan)
    fm = diag.min_friction_margin
    rec["friction_margin"] = fm if fm is not None else math.nan
    rec["loop_residual"] = (np.abs(cache.loop_residuals()).max()
                            if model.closures else 0.0)
    rec["dyn_residual"] = diag.dyn_residual
    rec["cons_residual"] = diag.cons_residual
    rec["qdd_consistency"] = float(np.abs(qdd_sim - diag.qdd).max())
    rec["status"] = diag.status
    rec["fallback"] = diag.fallback
    rec["iterations"] = diag.iterations
    rec["domain"] = (f"ss-{gait.stance}" if gait is not None else "fixed")
    rec["step_index"] = gait.step_index if gait is not None else 0
    log.append(rec)


def _summarize(sc, log, task_names, barrier_names, gait):
    m: dict = {"scenario": sc.name, "model": sc.model.name,
               "ticks": len(log), "duration": sc.duration,
               "control_rate": sc.control_rate, "fault": log.fault}
    if len(log) == 0:
        return m
    m["min_h"] = {n: float(np.nanmin(log.column(f"h_{n}")))
                  for n in barrier_names}
    m["min_bound_gap"] = {
        n: float(np.nanmin(log.column(f"h_{n}") - log.column(f"hbound_{n}")))
        for n in (b.name for b in sc.barriers)}
    m["max_task_err"] = {n: float(np.nanmax(log.column(f"err_{n}")))
                         for n in task_names}
    m["max_qdd_consistency"] = float(np.max(log.column("qdd_consistency")))
    m["max_dyn_residual"] = float(np.max(log.column("dyn_residual")))
    m["max_cons_residual"] = float(np.max(log.column("cons_residual")))
    m["max_loop_residual"] = float(np.max(log.column("loop_residual")))
    zmp_m = log.column("zmp_margin")
    fr_m = log.column("friction_margin")
    m["min_zmp_margin"] = (float(np.nanmin(zmp_m))
                           if not np.all(np.isnan(zmp_m)) else None)
    m["min_friction_margin"] = (float(np.nanmin(fr_m))
                                if not np.all(np.isnan(fr_m)) else None)
    fb = log.column("fallback")
    m["fallback_ticks"] = int(sum(1 for v in fb if v != "none"))
    m["max_iterations"] = int(np.max(log.column("iterations")))
    m["incident_counts"] = _count_incidents(log.incidents)
    if gait is not None:
        m["steps"] = int(log.column("step_index").max())
        t_col = log.column("t")
        span = float(t_col[-1] - t_col[0])
        axis = ("com_x", "com_y")[gait.params.axis]
        com_axis = log.column(axis)
        m["mean_speed"] = (float((com_axis[-1] - com_axis[0]) / span)
                           if span > 0 else 0.0)
        m["commanded_speed"] = gait.params.v_des
    return m


def _count_incidents(incidents):
    out: dict = {}
    for e in incidents:
        out[e["kind"]] = out.get(e["kind"], 0) + 1
    return out
