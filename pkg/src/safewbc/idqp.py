"""Whole-body inverse-dynamics controller.

Each tick assembles a strictly convex QP over X = [qdd; u; lam] (plus
optional barrier slack variables) and solves it:

    minimize  || W^(1/2) (J_y qdd + Jdot_y qd - y*) ||^2  +  X' Gamma X
    s.t.      M qdd - B u - J' lam = -bias          (dynamics rows)
              J qdd = -Jdot qd                      (loop + contact rows)
              |u| <= u_max
              friction pyramid rows on contact wrenches
              ZMP-in-support-polygon rows on contact wrenches
              J_h qdd >= -Jdot_h qd - K_alpha eta   (barrier rows)

lam stacks the loop-closure multipliers first, then the contact wrench
blocks, matching the constraint row ordering.  The mass matrix enters the
equalities as data; nothing in this module inverts it.

Infeasibility fallback: re-solve with barrier slacks enabled and the ZMP
shrink margin removed; if that also fails, hold the previous torque for one
tick.  Every fallback engagement and every nonzero barrier slack is recorded
as an incident.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import contacts as ct
from . import qp
from . import safety as sf
from . import tasks as tk
from .errors import VanishingDecouplingError
from .multibody import KinCache, RobotModel

DEFAULT_GAMMA_QDD = 1e-4
DEFAULT_GAMMA_U = 1e-3
DEFAULT_GAMMA_LAM = 1e-6
_SLACK_USE_TOL = 1e-9
_RANK_TOL = 1e-8


@dataclass(frozen=True)
class ControllerOptions:
    gamma_qdd: float = DEFAULT_GAMMA_QDD
    gamma_u: float = DEFAULT_GAMMA_U
    gamma_lam: float = DEFAULT_GAMMA_LAM
    zmp_shrink: float = ct.ZMP_SHRINK_DEFAULT
    eps_normal: float = ct.EPS_NORMAL
    use_zmp: bool = True
    max_iter: int = 500


@dataclass(frozen=True)
class VariableLayout:
    """Block offsets of the decision vector X."""

    nq: int
    nu: int
    nloop: int
    ncontact: int
    nslack: int

    @property
    def nlam(self) -> int:
        return self.nloop + self.ncontact

    @property
    def size(self) -> int:
        return self.nq + self.nu + self.nlam + self.nslack

    @property
    def qdd(self) -> slice:
        return slice(0, self.nq)

    @property
    def u(self) -> slice:
        return slice(self.nq, self.nq + self.nu)

    @property
    def lam(self) -> slice:
        return slice(self.nq + self.nu, self.nq + self.nu + self.nlam)

    @property
    def lam_contact(self) -> slice:
        start = self.nq + self.nu + self.nloop
        return slice(start, start + self.ncontact)

    @property
    def slack(self) -> slice:
        return slice(self.size - self.nslack, self.size)


@dataclass
class QpProblem:
    """Assembled tick problem: min 1/2 X'H X + g'X, A_eq X = b_eq,
    A_in X <= b_in."""

    h: np.ndarray
    g: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray
    a_in: np.ndarray
    b_in: np.ndarray
    layout: VariableLayout
    gamma: np.ndarray  # diagonal of the regularizer over X
    labels: tuple[str, ...]  # one label per inequality row
    barrier_states: tuple[sf.BarrierState, ...]
    slack_names: tuple[str, ...]  # slacked barriers, slack-block order
    dropped_barriers: tuple[str, ...]
    rank_warning: bool = False


def _barrier_states(cache: KinCache, barriers: Sequence[sf.BarrierSpec]):
    """Evaluate barrier rows; a vanished row is dropped only when vacuous.

    A zero coefficient row cannot influence the QP.  If its right-hand side
    is nonpositive the constraint holds for every qdd and the row is safely
    skipped (reported in dropped); otherwise no acceleration can satisfy it
    and the vanishing-decoupling error propagates.
    """
    states: list[sf.BarrierState] = []
    dropped: list[str] = []
    for spec in barriers:
        try:
            states.append(sf.aecbf_row_cached(cache, spec))
        except VanishingDecouplingError:
            h, hdot, _, drift = sf.barrier_eval_cached(cache, spec)
            rhs = float(-drift - spec.k_alpha @ np.array([h, hdot]))
            if rhs <= 1e-12:
                dropped.append(spec.name)
            else:
                raise
    return states, dropped


def assemble(
    model: RobotModel,
    q,
    qd,
    stack: tk.TaskStack,
    contacts: Sequence[ct.ContactSpec] = (),
    barriers: Sequence[sf.BarrierSpec] = (),
    options: ControllerOptions | None = None,
    *,
    cache: KinCache | None = None,
    force_slack: bool = False,
    zmp_shrink: float | None = None,
) -> QpProblem:
    opt = options or ControllerOptions()
    if cache is None:
        cache = KinCache(model, q, qd)
    shrink = opt.zmp_shrink if zmp_shrink is None else zmp_shrink

    mass = cache.mass_matrix()
    bias = cache.bias_forces()
    jac_loop = cache.loop_jacobian()
    drift_loop = cache.loop_drift()
    jac_blocks = [jac_loop] if jac_loop.size else []
    drift_blocks = [drift_loop] if drift_loop.size else []
    for c in contacts:
        jac_blocks.append(ct.contact_jacobian(cache, c))
        drift_blocks.append(ct.contact_drift(cache, c))
    if jac_blocks:
        jac_all = np.vstack(jac_blocks)
        drift_all = np.concatenate(drift_blocks)
    else:
        jac_all = np.zeros((0, model.nq))
        drift_all = np.zeros(0)

    states, dropped = _barrier_states(cache, barriers)
    slack_flags = [st.slack or force_slack for st in states]

    layout = VariableLayout(
        nq=model.nq,
        nu=model.nu,
        nloop=jac_loop.shape[0] if jac_loop.size else 0,
        ncontact=ct.stack_dim(contacts),
        nslack=int(sum(slack_flags)),
    )
    nx = layout.size

    # cost: task rows on the qdd block, regularizer on everything
    gamma = np.empty(nx)
    gamma[layout.qdd] = opt.gamma_qdd
    gamma[layout.u] = opt.gamma_u
    gamma[layout.lam] = opt.gamma_lam
    gamma[layout.slack] = sf.SLACK_PENALTY
    h = np.zeros((nx, nx))
    g = np.zeros(nx)
    w_jac = stack.weights[:, None] * stack.jac
    h[layout.qdd, layout.qdd] = 2.0 * (stack.jac.T @ w_jac)
    h[np.arange(nx), np.arange(nx)] += 2.0 * gamma
    g[layout.qdd] = 2.0 * (w_jac.T @ (stack.drift - stack.y_star))

    # equalities: dynamics rows then constraint rows
    n_eq = model.nq + jac_all.shape[0]
    a_eq = np.zeros((n_eq, nx))
    b_eq = np.empty(n_eq)
    a_eq[: model.nq, layout.qdd] = mass
    a_eq[: model.nq, layout.u] = -model.B
    a_eq[: model.nq, layout.lam] = -jac_all.T
    b_eq[: model.nq] = -bias
    a_eq[model.nq :, layout.qdd] = jac_all
    b_eq[model.nq :] = -drift_all

    rank_warning = False
    if jac_all.shape[0]:
        sv = np.linalg.svd(jac_all, compute_uv=False)
        rank = int(np.sum(sv > _RANK_TOL * sv[0])) if sv[0] > 0.0 else 0
        rank_warning = rank < jac_all.shape[0]

    # inequalities
    rows: list[np.ndarray] = []
    rhs: list[float] = []
    labels: list[str] = []

    for i in range(model.nu):
        lim = float(model.torque_limits[i])
        if not np.isfinite(lim):
            continue
        up = np.zeros(nx)
        up[layout.u.start + i] = 1.0
        rows.append(up)
        rhs.append(lim)
        labels.append(f"torque:{i}:upper")
        rows.append(-up)
        rhs.append(lim)
        labels.append(f"torque:{i}:lower")

    if contacts:
        a_fr, b_fr = ct.stacked_friction_rows(contacts, opt.eps_normal)
        offsets = ct.stack_offsets(contacts)
        row_owner = []
        for c, off in zip(contacts, offsets):
            nrows = ct.friction_rows(c, opt.eps_normal)[0].shape[0]
            row_owner += [c.frame] * nrows
        for k in range(a_fr.shape[0]):
            r = np.zeros(nx)
            r[layout.lam_contact] = a_fr[k]
            rows.append(r)
            rhs.append(float(b_fr[k]))
            labels.append(f"friction:{row_owner[k]}:{k}")

        if opt.use_zmp:
            polygon = ct.support_polygon(model, cache, contacts)
            a_z, b_z = ct.zmp_rows(model, cache, contacts, polygon, shrink)
            for k in range(a_z.shape[0]):
                r = np.zeros(nx)
                r[layout.lam_contact] = a_z[k]
                rows.append(r)
                rhs.append(float(b_z[k]))
                labels.append(f"zmp:{k}")

    slack_col = layout.slack.start
    for st, flg in zip(states, slack_flags):
        r = np.zeros(nx)
        r[layout.qdd] = -st.row
        if flg:
            r[slack_col] = -1.0
        rows.append(r)
        rhs.append(-st.rhs)
        labels.append(f"barrier:{st.name}")
        if flg:
            nonneg = np.zeros(nx)
            nonneg[slack_col] = -1.0
            rows.append(nonneg)
            rhs.append(0.0)
            labels.append(f"slack:{st.name}")
            slack_col += 1

    a_in = np.array(rows) if rows else np.zeros((0, nx))
    b_in = np.array(rhs)
    return QpProblem(
        h=h,
        g=g,
        a_eq=a_eq,
        b_eq=b_eq,
        a_in=a_in,
        b_in=b_in,
        layout=layout,
        gamma=gamma,
        labels=tuple(labels),
        barrier_states=tuple(states),
        slack_names=tuple(
            st.name for st, flg in zip(states, slack_flags) if flg
        ),
        dropped_barriers=tuple(dropped),
        rank_warning=rank_warning,
    )


def solve(problem: QpProblem, warm_active=None, max_iter: int = 500) -> qp.QpSolution:
    return qp.solve_qp(
        problem.h,
        problem.g,
        problem.a_eq,
        problem.b_eq,
        problem.a_in,
        problem.b_in,
        warm_active=warm_active,
        max_iter=max_iter,
    )


# ---------------------------------------------------------------------------
# per-tick diagnostics


@dataclass
class Diagnostics:
    t: float
    status: str
    iterations: int
    fallback: str  # "none" | "slack" | "hold"
    qdd: np.ndarray
    u: np.ndarray
    lam: np.ndarray
    slack: np.ndarray
    dyn_residual: float
    cons_residual: float
    task_errors: dict[str, tuple[np.ndarray, np.ndarray]]
    barrier_h: dict[str, tuple[float, float]]
    zmp: tuple[float, float] | None
    zmp_margin: float | None
    friction_margins: dict[str, float]
    dropped_barriers: tuple[str, ...]
    rank_warning: bool

    @property
    def min_friction_margin(self) -> float | None:
        if not self.friction_margins:
            return None
        return min(self.friction_margins.values())


@dataclass
class ControlResult:
    u: np.ndarray
    solution: qp.QpSolution
    diag: Diagnostics


class Controller:
    """Stateful tick controller: warm start, fallback policy, incident log."""

    def __init__(
        self,
        model: RobotModel,
        tasks: Sequence[tk.TaskSpec],
        contacts: Sequence[ct.ContactSpec] = (),
        barriers: Sequence[sf.BarrierSpec] = (),
        options: ControllerOptions | None = None,
    ):
        self.model = model
        self.tasks = list(tasks)
        self.contacts = list(contacts)
        self.barriers = list(barriers)
        self.options = options or ControllerOptions()
        self.incidents: list[dict] = []
        self._warm_labels: tuple[str, ...] | None = None
        self._warm_active: tuple | None = None
        self._prev_u = np.zeros(model.nu)

    def _log(self, t: float, kind: str, **detail):
        self.incidents.append({"t": t, "kind": kind, **detail})

    def control_step(
        self,
        t: float,
        q,
        qd,
        *,
        tasks: Sequence[tk.TaskSpec] | None = None,
        contacts: Sequence[ct.ContactSpec] | None = None,
        barriers: Sequence[sf.BarrierSpec] | None = None,
    ) -> ControlResult:
        active_tasks = self.tasks if tasks is None else list(tasks)
        active_contacts = self.contacts if contacts is None else list(contacts)
        active_barriers = self.barriers if barriers is None else list(barriers)

        cache = KinCache(self.model, q, qd)
        stack = tk.stack_tasks(cache, active_tasks, t)
        problem = assemble(
            self.model,
            q,
            qd,
            stack,
            active_contacts,
            active_barriers,
            self.options,
            cache=cache,
        )
        warm = (
            self._warm_active
            if self._warm_labels == problem.labels
            else None
        )
        sol = solve(problem, warm_active=warm, max_iter=self.options.max_iter)
        fallback = "none"
        if not sol.ok:
            worst = (
                problem.labels[sol.most_violated]
                if sol.most_violated is not None
                and sol.most_violated_kind == "in"
                and sol.most_violated < len(problem.labels)
                else sol.most_violated_kind
            )
            self._log(t, "qp-infeasible", status=sol.status, worst_row=worst)
            problem = assemble(
                self.model,
                q,
                qd,
                stack,
                active_contacts,
                active_barriers,
                self.options,
                cache=cache,
                force_slack=True,
                zmp_shrink=0.0,
            )
            sol = solve(problem, max_iter=self.options.max_iter)
            fallback = "slack" if sol.ok else "hold"
            if sol.ok:
                self._log(t, "fallback-slack-engaged")
            else:
                self._log(t, "fallback-hold-torque", status=sol.status)

        if sol.ok:
            u = sol.x[problem.layout.u].copy()
            self._prev_u = u.copy()
            self._warm_labels = problem.labels
            self._warm_active = sol.active_set
        else:
            u = self._prev_u.copy()
            self._warm_labels = None
            self._warm_active = None

        diag = self._diagnostics(t, cache, stack, problem, sol, fallback,
                                 active_contacts)
        for b in problem.dropped_barriers:
            self._log(t, "barrier-row-vanished", barrier=b)
        return ControlResult(u=u, solution=sol, diag=diag)

    def _diagnostics(
        self,
        t: float,
        cache: KinCache,
        stack: tk.TaskStack,
        problem: QpProblem,
        sol: qp.QpSolution,
        fallback: str,
        active_contacts: Sequence[ct.ContactSpec],
    ) -> Diagnostics:
        lay = problem.layout
        nx = lay.size
        x = sol.x if sol.ok else np.zeros(nx)
        qdd = x[lay.qdd].copy()
        u = x[lay.u].copy()
        lam = x[lay.lam].copy()
        slack = x[lay.slack].copy()

        dyn = problem.a_eq[: lay.nq] @ x - problem.b_eq[: lay.nq]
        cons = problem.a_eq[lay.nq :] @ x - problem.b_eq[lay.nq :]
        task_errors = {ev.name: (ev.y.copy(), ev.ydot.copy()) for ev in stack.evals}
        barrier_h = {
            st.name: (float(st.eta[0]), float(st.eta[1]))
            for st in problem.barrier_states
        }

        zmp_point = None
        zmp_margin = None
        friction_margins: dict[str, float] = {}
        if active_contacts and sol.ok:
            lam_c = x[lay.lam_contact]
            wrench = ct.aggregate_wrench(self.model, cache, active_contacts, lam_c)
            if wrench[2] >= self.options.eps_normal:
                zmp_point = ct.zmp(wrench, self.options.eps_normal)
            offsets = ct.stack_offsets(active_contacts)
            for c, off in zip(active_contacts, offsets):
                a_c, b_c = ct.friction_rows(c, self.options.eps_normal)
                margins = b_c - a_c @ lam_c[off : off + c.dim]
                friction_margins[c.frame] = float(margins.min())
            if self.options.use_zmp:
                polygon = ct.support_polygon(self.model, cache, active_contacts)
                a_z, b_z = ct.zmp_rows(self.model, cache, active_contacts,
                                       polygon, 0.0)
                if a_z.shape[0]:
                    zmp_margin = float((b_z - a_z @ lam_c).min())

        if sol.ok and lay.nslack:
            for name, val in zip(problem.slack_names, slack):
                if val > _SLACK_USE_TOL:
                    self._log(t, "barrier-slack-used", barrier=name,
                              value=float(val))
        if sol.ok and sol.active_set:
            kinds = {problem.labels[i].split(":")[0] for i in sol.active_set}
            if "zmp" in kinds and "barrier" in kinds:
                self._log(t, "zmp-and-barrier-active")

        return Diagnostics(
            t=t,
            status=sol.status,
            iterations=sol.iterations,
            fallback=fallback,
            qdd=qdd,
            u=u,
            lam=lam,
            slack=slack,
            dyn_residual=float(np.abs(dyn).max(initial=0.0)) if sol.ok else float("nan"),
            cons_residual=float(np.abs(cons).max(initial=0.0)) if sol.ok else float("nan"),
            task_errors=task_errors,
            barrier_h=barrier_h,
            zmp=zmp_point,
            zmp_margin=zmp_margin,
            friction_margins=friction_margins,
            dropped_barriers=problem.dropped_barriers,
            rank_warning=problem.rank_warning,
        )
