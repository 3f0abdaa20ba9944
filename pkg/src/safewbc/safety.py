"""Control barrier machinery on acceleration: barrier evaluation, pole-based
gain design with an initial-state validity check, and the inequality row that
keeps the barrier nonnegative when inserted into the whole-body QP.

A barrier is a scalar h(q) >= 0 defining the safe set.  For the supported
position-type barriers h has relative degree two: h depends on q only, so
hddot = J_h qdd + Jdot_h qd is affine in the acceleration decision variable.
The QP row

    J_h qdd >= -Jdot_h qd - K_alpha [h, hdot]

enforces hddot >= -K_alpha eta, which makes h(t) decay no faster than the
linear system with the chosen poles and, from a valid initial state, keeps
h(t) >= c_row exp((F - G K_alpha) t) eta(0) pointwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import (
    ScenarioError,
    UnsafeInitialStateError,
    VanishingDecouplingError,
)
from .multibody import KinCache, RobotModel

DEFAULT_POLES = (10.0, 10.0)  # 1/s, critically damped, matches task bandwidth
SLACK_PENALTY = 1e6  # soft-barrier weight when slack is enabled
_ROW_TOL = 1e-10  # below this the row cannot influence the QP

BARRIER_KINDS = ("frame-coord", "frame-separation")


@dataclass(frozen=True)
class BarrierSpec:
    """Declarative safety constraint h(q) >= 0 on frame coordinates.

    kind "frame-coord":       h = sign * p[coord](frame) - threshold
    kind "frame-separation":  h = sign * (p[coord](frame) - p[coord](frame_other))
                                  - threshold

    ``poles`` (all > 0) place the closed-loop decay of h; ``slack`` turns the
    QP row into a heavily penalized soft constraint; ``domain`` restricts
    activation to a named controller domain (None = always active).
    """

    name: str
    kind: str
    frame: str
    coord: int
    threshold: float
    sign: float = 1.0
    frame_other: str | None = None
    poles: tuple[float, ...] = DEFAULT_POLES
    slack: bool = False
    domain: str | None = None

    def __post_init__(self):
        if self.kind not in BARRIER_KINDS:
            raise ScenarioError(f"unknown barrier kind {self.kind!r}")
        if self.coord not in (0, 1, 2):
            raise ScenarioError(f"barrier {self.name!r}: coord must be 0, 1, or 2")
        if self.sign not in (1.0, -1.0, 1, -1):
            raise ScenarioError(f"barrier {self.name!r}: sign must be +1 or -1")
        object.__setattr__(self, "sign", float(self.sign))
        if self.kind == "frame-separation" and not self.frame_other:
            raise ScenarioError(f"barrier {self.name!r}: frame-separation needs frame_other")
        if self.kind == "frame-coord" and self.frame_other is not None:
            raise ScenarioError(f"barrier {self.name!r}: frame-coord takes no frame_other")
        poles = tuple(float(p) for p in self.poles)
        if len(poles) not in (1, 2):
            raise ScenarioError(f"barrier {self.name!r}: supported relative degree is 1 or 2")
        if any((not math.isfinite(p)) or p <= 0.0 for p in poles):
            raise ScenarioError(f"barrier {self.name!r}: poles must be finite and > 0")
        object.__setattr__(self, "poles", poles)

    @property
    def relative_degree(self) -> int:
        return len(self.poles)

    @property
    def k_alpha(self) -> np.ndarray:
        return design_k_alpha(self.poles)


# ---------------------------------------------------------------------------
# gain design


def design_k_alpha(poles: Sequence[float]) -> np.ndarray:
    """Companion-form gain row placing eig(F - G K) at -poles.

    For poles [p1, p2] this is [p1 p2, p1 + p2] acting on eta = [h, hdot];
    for a single pole [p] it is [p].
    """
    arr = np.atleast_1d(np.asarray(poles, float))
    if arr.ndim != 1 or arr.size == 0:
        raise ScenarioError("poles must be a nonempty 1-d sequence")
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0.0):
        raise ScenarioError("poles must be finite and > 0")
    # np.poly(-p) gives descending coefficients of prod(s + p_i), monic.
    coeffs = np.poly(-arr)
    return np.real(coeffs[1:][::-1]).astype(float)


def companion_matrices(k_alpha: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(F, G, A_cl) with A_cl = F - G K integrator-chain closed loop."""
    k = np.atleast_1d(np.asarray(k_alpha, float))
    r = k.size
    f = np.zeros((r, r))
    if r > 1:
        f[np.arange(r - 1), np.arange(1, r)] = 1.0
    g = np.zeros((r, 1))
    g[-1, 0] = 1.0
    return f, g, f - g @ k[None, :]


def exponential_bound(k_alpha: np.ndarray, eta0: np.ndarray, times) -> np.ndarray:
    """Lower envelope b(t) = e1' expm((F - G K) t) eta0 that a satisfied
    barrier row guarantees h(t) to stay above."""
    _, _, a_cl = companion_matrices(k_alpha)
    eta0 = np.asarray(eta0, float)
    if eta0.shape != (a_cl.shape[0],):
        raise ScenarioError("eta0 length must match the gain row")
    ts = np.atleast_1d(np.asarray(times, float))
    out = np.empty(ts.size)
    for i, t in enumerate(ts):
        out[i] = (scipy.linalg.expm(a_cl * t) @ eta0)[0]
    return out if np.ndim(times) else float(out[0])


# ---------------------------------------------------------------------------
# barrier evaluation


def _coord_output(cache: KinCache, spec: BarrierSpec):
    """(value, jac_row, drift_scalar) of the signed coordinate expression."""
    c = spec.coord
    p, _ = cache.frame_pose(spec.frame)
    jac = cache.frame_jacobian(spec.frame)[c].copy()
    drift = float(cache.frame_drift(spec.frame)[c])
    val = float(p[c])
    if spec.kind == "frame-separation":
        p2, _ = cache.frame_pose(spec.frame_other)
        jac -= cache.frame_jacobian(spec.frame_other)[c]
        drift -= float(cache.frame_drift(spec.frame_other)[c])
        val -= float(p2[c])
    return spec.sign * val - spec.threshold, spec.sign * jac, spec.sign * drift


def barrier_eval(spec: BarrierSpec, model: RobotModel, q, qd=None):
    """(h, hdot, J_h, jdot_h_qd) at the given state; hdot needs qd."""
    cache = KinCache(model, q, qd)
    return barrier_eval_cached(cache, spec)


def barrier_eval_cached(cache: KinCache, spec: BarrierSpec):
    if cache.qd is None:
        c = spec.coord
        p, _ = cache.frame_pose(spec.frame)
        val = float(p[c])
        jac = cache.frame_jacobian(spec.frame)[c].copy()
        if spec.kind == "frame-separation":
            p2, _ = cache.frame_pose(spec.frame_other)
            val -= float(p2[c])
            jac -= cache.frame_jacobian(spec.frame_other)[c]
        return spec.sign * val - spec.threshold, None, spec.sign * jac, None
    h, jac, drift = _coord_output(cache, spec)
    return h, float(jac @ cache.qd), jac, drift


@dataclass
class BarrierState:
    """One barrier's QP row at a state: row @ qdd >= rhs."""

    name: str
    eta: np.ndarray  # [h] or [h, hdot]
    row: np.ndarray  # 1 x n coefficient on qdd
    rhs: float
    slack: bool = False

    @property
    def h(self) -> float:
        return float(self.eta[0])


def aecbf_row(spec: BarrierSpec, model: RobotModel, q, qd) -> BarrierState:
    return aecbf_row_cached(KinCache(model, q, qd), spec)


def aecbf_row_cached(cache: KinCache, spec: BarrierSpec) -> BarrierState:
    """Inequality row J_h qdd >= -Jdot_h qd - K_alpha eta for the QP."""
    if spec.relative_degree != 2:
        raise ScenarioError(
            f"barrier {spec.name!r}: acceleration row needs relative degree 2"
        )
    h, hdot, jac, drift = barrier_eval_cached(cache, spec)
    if float(np.linalg.norm(jac)) < _ROW_TOL:
        raise VanishingDecouplingError(
            f"barrier {spec.name!r}: acceleration coefficient row is numerically zero"
        )
    eta = np.array([h, hdot])
    rhs = float(-drift - spec.k_alpha @ eta)
    return BarrierState(name=spec.name, eta=eta, row=jac, rhs=rhs, slack=spec.slack)


# ---------------------------------------------------------------------------
# pole validation at the initial state


@dataclass
class PoleCheck:
    """One step of the B_i recursion B_i = Bdot_{i-1} + p_i B_{i-1} at x0."""

    index: int  # 1-based pole index, in the order poles are applied
    pole: float
    b_prev: float  # B_{i-1}(x0)
    bdot_prev: float  # Bdot_{i-1}(x0)
    b_value: float  # B_i(x0)
    required_min: float | None  # smallest pole passing, when B_{i-1} > 0
    ok: bool


@dataclass
class PoleReport:
    accepted: bool
    rest_start: bool
    h0: float
    hdot0: float
    checks: list[PoleCheck] = field(default_factory=list)
    note: str = ""


def pole_report(poles: Sequence[float], h0: float, hdot0: float,
                rest_start: bool | None = None) -> PoleReport:
    """Validate poles against the initial barrier state (h0, hdot0).

    Checks, in the order the poles are applied to the recursion
    B_0 = h, B_i = Bdot_{i-1} + p_i B_{i-1}:
      * every pole is > 0,
      * B_i(x0) >= 0 for i = 1 .. r-1 (equivalently p_i >= -Bdot_{i-1}/B_{i-1}).
    The final condition B_r >= 0 is exactly the inequality row the controller
    enforces at every instant, so it is not a pole restriction.  From rest
    (hdot0 = 0 with h0 >= 0) every positive pole choice passes.
    """
    p = [float(x) for x in poles]
    if len(p) not in (1, 2):
        raise ScenarioError("supported relative degree is 1 or 2")
    h0 = float(h0)
    hdot0 = float(hdot0)
    if h0 < 0.0:
        raise UnsafeInitialStateError(
            f"barrier is negative at the initial state (h0 = {h0:.6g})"
        )
    if rest_start is None:
        rest_start = hdot0 == 0.0
    checks: list[PoleCheck] = []
    accepted = True
    b_prev, bdot_prev = h0, hdot0
    for i, pole in enumerate(p, start=1):
        ok = pole > 0.0
        b_val = bdot_prev + pole * b_prev
        required = None
        if i < len(p) or len(p) == 1:
            # state-only condition: B_i(x0) >= 0
            if b_prev > 0.0:
                required = max(0.0, -bdot_prev / b_prev)
            ok = ok and b_val >= 0.0
        checks.append(
            PoleCheck(
                index=i,
                pole=pole,
                b_prev=b_prev,
                bdot_prev=bdot_prev,
                b_value=b_val,
                required_min=required,
                ok=ok,
            )
        )
        accepted = accepted and ok
        # next recursion level needs Bdot_i, which involves the commanded
        # acceleration; the QP row enforces B_r >= 0 directly, so only the
        # levels before it gate the pole choice.
        b_prev = b_val
        bdot_prev = math.nan
    note = (
        "rest start: every positive pole choice is valid"
        if rest_start
        else "moving start: each level-i pole must keep B_i(x0) >= 0"
    )
    return PoleReport(accepted=accepted, rest_start=rest_start, h0=h0,
                      hdot0=hdot0, checks=checks, note=note)


def validate_poles(spec: BarrierSpec, model: RobotModel, q0, qd0) -> PoleReport:
    """Pole validity for a barrier at the scenario's initial state."""
    h0, hdot0, _, _ = barrier_eval(spec, model, q0, qd0)
    rest = bool(np.allclose(np.asarray(qd0, float), 0.0))
    return pole_report(spec.poles, h0, hdot0, rest_start=rest)


# ---------------------------------------------------------------------------
# torque-space oracle (test support)


def torque_ecbf_row_oracle(model: RobotModel, spec: BarrierSpec, q, qd):
    """Equivalent barrier row on the actuation u for fixed-base, unconstrained
    models: row_u @ u >= rhs_u.  Test-only; substitutes the closed-form
    forward dynamics qdd = M^-1 (B u - bias) into the acceleration row, which
    is only available without a floating base or loop closures.
    """
    if model.base_type != "fixed":
        raise ScenarioError("torque barrier oracle needs a fixed-base model")
    if model.closures:
        raise ScenarioError("torque barrier oracle does not support loop closures")
    cache = KinCache(model, q, qd)
    state = aecbf_row_cached(cache, spec)
    minv = np.linalg.inv(cache.mass_matrix())
    bias = cache.bias_forces()
    row_u = state.row @ minv @ model.B
    rhs_u = state.rhs + float(state.row @ minv @ bias)
    return row_u, rhs_u
