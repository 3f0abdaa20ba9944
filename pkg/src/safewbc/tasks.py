"""Task-space outputs, PD servo targets, and weighted stacking for the QP cost.

A task maps the configuration to a low-dimensional output y^a (a frame
position, a frame orientation in Euler ZYX angles, the center of mass, or a
subset of joints) and tracks a reference y^d(t).  Its contribution to the
controller cost is the block row

    || W^(1/2) (J qdd + Jdot qd - y*) ||^2,
    y* = -Kp (y^a - y^d) - Kd (J qd - yd^d) + ydd^d,

so a feasible, unconstrained solve drives the output error like a damped
second-order system with poles of s^2 + Kd s + Kp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import GimbalLockError, ScenarioError
from .multibody import KinCache, RobotModel, matrix_to_euler_zyx

KINDS = (
    "frame-position",
    "frame-orientation-euler-zyx",
    "com-position",
    "com-height",
    "joint-subset",
)

DEFAULT_KP = 100.0  # 1/s^2, critically damped pair with DEFAULT_KD
DEFAULT_KD = 20.0  # 1/s


# ---------------------------------------------------------------------------
# reference signals


@dataclass(frozen=True)
class Reference:
    """Reference trajectory with value, rate, and acceleration callables.

    Each callable maps a time (s) to a float array of length ``dim``.
    """

    dim: int
    value: Callable[[float], np.ndarray]
    rate: Callable[[float], np.ndarray]
    accel: Callable[[float], np.ndarray]
    name: str = "reference"


def constant_reference(values) -> Reference:
    vals = np.atleast_1d(np.asarray(values, float)).copy()
    zero = np.zeros_like(vals)
    return Reference(
        dim=vals.size,
        value=lambda t: vals.copy(),
        rate=lambda t: zero.copy(),
        accel=lambda t: zero.copy(),
        name="constant",
    )


def sinusoid_reference(offset, amplitude, omega, phase=0.0) -> Reference:
    """y = offset + amplitude * sin(omega t + phase), elementwise."""
    off, amp, om, ph = np.broadcast_arrays(
        np.atleast_1d(np.asarray(offset, float)),
        np.asarray(amplitude, float),
        np.asarray(omega, float),
        np.asarray(phase, float),
    )
    off, amp, om, ph = (a.astype(float).copy() for a in (off, amp, om, ph))
    return Reference(
        dim=off.size,
        value=lambda t: off + amp * np.sin(om * t + ph),
        rate=lambda t: amp * om * np.cos(om * t + ph),
        accel=lambda t: -amp * om * om * np.sin(om * t + ph),
        name="sinusoid",
    )


def arm_sinusoid_reference(amplitude=0.3, omega=math.pi / 5.0) -> Reference:
    """Zero-mean arm swing sinusoid; default period 10 s."""
    ref = sinusoid_reference(0.0, amplitude, omega)
    return Reference(ref.dim, ref.value, ref.rate, ref.accel, name="arm-sinusoid")


def squat_reference(
    base_height: float,
    drop: float = 0.12,
    wobble_amp: float = 0.03,
    wobble_omega: float = math.pi,
) -> Reference:
    """Height profile that settles ``drop`` below base while oscillating.

    z(t) = base - drop (1 - e^-t) + wobble_amp sin(wobble_omega t)
    """
    b, d, a, w = float(base_height), float(drop), float(wobble_amp), float(wobble_omega)

    def value(t: float) -> np.ndarray:
        return np.array([b - d * (1.0 - math.exp(-t)) + a * math.sin(w * t)])

    def rate(t: float) -> np.ndarray:
        return np.array([-d * math.exp(-t) + a * w * math.cos(w * t)])

    def accel(t: float) -> np.ndarray:
        return np.array([d * math.exp(-t) - a * w * w * math.sin(w * t)])

    return Reference(1, value, rate, accel, name="squat")


def bow_reference(amplitude: float = 0.45, peak_time: float = 3.0) -> Reference:
    """Triangular lean-and-return profile peaking at amplitude*peak_time.

    y(t) = amplitude * max(peak_time - |t - peak_time|, 0): ramps up over
    [0, peak_time], back down over [peak_time, 2*peak_time], then holds 0.
    The rate uses the right-hand derivative at the kinks; the acceleration
    is zero almost everywhere and reported as zero.
    """
    a, tp = float(amplitude), float(peak_time)
    if tp <= 0.0:
        raise ScenarioError("bow reference needs peak_time > 0")

    def value(t: float) -> np.ndarray:
        return np.array([a * max(tp - abs(t - tp), 0.0)])

    def rate(t: float) -> np.ndarray:
        if 0.0 <= t < tp:
            return np.array([a])
        if tp <= t < 2.0 * tp:
            return np.array([-a])
        return np.zeros(1)

    def accel(t: float) -> np.ndarray:
        return np.zeros(1)

    return Reference(1, value, rate, accel, name="bow")


def sampled_reference(times, values) -> Reference:
    """Piecewise-linear reference from samples; derivatives by central
    differences on the sample grid.  Queries outside the sampled span raise."""
    t = np.asarray(times, float)
    v = np.asarray(values, float)
    if v.ndim == 1:
        v = v[:, None]
    if t.ndim != 1 or t.size < 3:
        raise ScenarioError("sampled reference needs at least 3 samples")
    if v.shape[0] != t.size:
        raise ScenarioError("sampled reference times/values length mismatch")
    if np.any(np.diff(t) <= 0.0):
        raise ScenarioError("sampled reference times must be strictly increasing")
    rate_s = np.gradient(v, t, axis=0)
    accel_s = np.gradient(rate_s, t, axis=0)
    dim = v.shape[1]

    def interp(samples: np.ndarray, tq: float) -> np.ndarray:
        if tq < t[0] or tq > t[-1]:
            raise ValueError(f"reference undefined at t={tq:g}")
        return np.array([np.interp(tq, t, samples[:, j]) for j in range(dim)])

    return Reference(
        dim=dim,
        value=lambda tq: interp(v, tq),
        rate=lambda tq: interp(rate_s, tq),
        accel=lambda tq: interp(accel_s, tq),
        name="sampled",
    )


# ---------------------------------------------------------------------------
# task specification


def _as_gain(x, dim: int, label: str, minimum_exclusive: bool) -> tuple[float, ...]:
    arr = np.atleast_1d(np.asarray(x, float))
    if arr.size == 1:
        arr = np.full(dim, float(arr[0]))
    if arr.shape != (dim,):
        raise ScenarioError(f"{label} must be scalar or length {dim}")
    if not np.all(np.isfinite(arr)):
        raise ScenarioError(f"{label} must be finite")
    if minimum_exclusive and np.any(arr <= 0.0):
        raise ScenarioError(f"{label} entries must be > 0")
    if not minimum_exclusive and np.any(arr < 0.0):
        raise ScenarioError(f"{label} entries must be >= 0")
    return tuple(float(g) for g in arr)


@dataclass(frozen=True)
class TaskSpec:
    """One tracked output: what it measures, its reference, gains, weight."""

    name: str
    kind: str
    reference: Reference
    frame: str | None = None
    joints: tuple[int, ...] | None = None
    axes: tuple[int, ...] | None = None
    kp: float | Sequence[float] = DEFAULT_KP
    kd: float | Sequence[float] = DEFAULT_KD
    weight: float | Sequence[float] = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScenarioError(f"unknown task kind {self.kind!r}")
        needs_frame = self.kind in ("frame-position", "frame-orientation-euler-zyx")
        if needs_frame and not self.frame:
            raise ScenarioError(f"task {self.name!r}: kind {self.kind} needs a frame")
        if not needs_frame and self.frame is not None:
            raise ScenarioError(f"task {self.name!r}: kind {self.kind} takes no frame")
        if self.kind == "joint-subset":
            if not self.joints:
                raise ScenarioError(f"task {self.name!r}: joint-subset needs joints")
            object.__setattr__(self, "joints", tuple(int(j) for j in self.joints))
            if self.axes is not None:
                raise ScenarioError(f"task {self.name!r}: joint-subset takes no axes")
        elif self.joints is not None:
            raise ScenarioError(f"task {self.name!r}: kind {self.kind} takes no joints")
        if self.axes is not None:
            if self.kind == "com-height":
                raise ScenarioError(f"task {self.name!r}: com-height takes no axes")
            axes = tuple(int(a) for a in self.axes)
            if len(axes) == 0 or len(set(axes)) != len(axes):
                raise ScenarioError(f"task {self.name!r}: axes must be nonempty, unique")
            if any(a not in (0, 1, 2) for a in axes):
                raise ScenarioError(f"task {self.name!r}: axes entries must be 0, 1, or 2")
            object.__setattr__(self, "axes", axes)
        dim = self.dim
        if self.reference.dim != dim:
            raise ScenarioError(
                f"task {self.name!r}: reference dim {self.reference.dim} != task dim {dim}"
            )
        object.__setattr__(self, "kp", _as_gain(self.kp, dim, f"task {self.name!r} kp", True))
        object.__setattr__(self, "kd", _as_gain(self.kd, dim, f"task {self.name!r} kd", True))
        object.__setattr__(
            self, "weight", _as_gain(self.weight, dim, f"task {self.name!r} weight", False)
        )

    @property
    def dim(self) -> int:
        if self.kind == "com-height":
            return 1
        if self.kind == "joint-subset":
            return len(self.joints)
        return 3 if self.axes is None else len(self.axes)

    @property
    def selected_axes(self) -> tuple[int, ...]:
        return (0, 1, 2) if self.axes is None else self.axes


# ---------------------------------------------------------------------------
# Euler ZYX rate kinematics

_GIMBAL_TOL = 1e-8


def euler_rate_matrix(angles: np.ndarray) -> np.ndarray:
    """E with omega = E @ [yaw_dot, pitch_dot, roll_dot], world frame."""
    yaw, pitch = float(angles[0]), float(angles[1])
    cz, sz = math.cos(yaw), math.sin(yaw)
    cy, sy = math.cos(pitch), math.sin(pitch)
    return np.array(
        [
            [0.0, -sz, cz * cy],
            [0.0, cz, sz * cy],
            [1.0, 0.0, -sy],
        ]
    )


def euler_rate_matrix_dot(angles: np.ndarray, rates: np.ndarray) -> np.ndarray:
    """Time derivative of euler_rate_matrix along angle rates."""
    yaw, pitch = float(angles[0]), float(angles[1])
    dz, dy = float(rates[0]), float(rates[1])
    cz, sz = math.cos(yaw), math.sin(yaw)
    cy, sy = math.cos(pitch), math.sin(pitch)
    return np.array(
        [
            [0.0, -cz * dz, -sz * dz * cy - cz * sy * dy],
            [0.0, -sz * dz, cz * dz * cy - sz * sy * dy],
            [0.0, 0.0, -cy * dy],
        ]
    )


def _orientation_output(cache: KinCache, frame: str):
    p, r = cache.frame_pose(frame)
    angles = matrix_to_euler_zyx(r)
    if abs(math.cos(angles[1])) < _GIMBAL_TOL:
        raise GimbalLockError(f"frame {frame!r} pitch too close to +-pi/2 for Euler ZYX")
    e = euler_rate_matrix(angles)
    jac6 = cache.frame_jacobian(frame)
    drift6 = cache.frame_drift(frame)
    jac = np.linalg.solve(e, jac6[3:])
    rates = jac @ cache.qd
    edot = euler_rate_matrix_dot(angles, rates)
    drift = np.linalg.solve(e, drift6[3:] - edot @ rates)
    return angles, jac, drift


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class TaskEval:
    """Per-task quantities at one controller tick."""

    name: str
    y: np.ndarray  # output error y^a - y^d
    ydot: np.ndarray  # error rate J qd - yd^d
    y_star: np.ndarray  # servo target fed to the QP cost
    jac: np.ndarray  # task Jacobian on qdd
    drift: np.ndarray  # Jdot qd
    weights: np.ndarray


@dataclass
class TaskStack:
    """Declaration-ordered vertical stack of task rows for the QP cost."""

    jac: np.ndarray
    drift: np.ndarray
    y_star: np.ndarray
    weights: np.ndarray
    slices: dict[str, slice] = field(default_factory=dict)
    evals: list[TaskEval] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.jac.shape[0]


def task_output(cache: KinCache, task: TaskSpec):
    """Return (y_a, jac, jdot_qd) for the raw task output at the cached state."""
    kind = task.kind
    if kind == "joint-subset":
        idx = list(task.joints)
        n = cache.model.nq
        jac = np.zeros((len(idx), n))
        jac[np.arange(len(idx)), idx] = 1.0
        return cache.q[idx].copy(), jac, np.zeros(len(idx))
    if kind == "frame-orientation-euler-zyx":
        y, jac, drift = _orientation_output(cache, task.frame)
    elif kind == "frame-position":
        y, _ = cache.frame_pose(task.frame)
        jac = cache.frame_jacobian(task.frame)[:3]
        drift = cache.frame_drift(task.frame)[:3]
    elif kind in ("com-position", "com-height"):
        y = cache.com()
        jac = cache.com_jacobian()
        drift = cache.com_drift_acc()
    else:  # pragma: no cover - guarded by TaskSpec validation
        raise ScenarioError(f"unknown task kind {kind!r}")
    sel = (2,) if kind == "com-height" else task.selected_axes
    idx = list(sel)
    return y[idx].copy(), jac[idx].copy(), drift[idx].copy()


def _wrap_angles(err: np.ndarray) -> np.ndarray:
    return np.mod(err + math.pi, 2.0 * math.pi) - math.pi


def eval_task(cache: KinCache, task: TaskSpec, t: float) -> TaskEval:
    y_a, jac, drift = task_output(cache, task)
    y = y_a - task.reference.value(t)
    if task.kind == "frame-orientation-euler-zyx":
        y = _wrap_angles(y)
    ydot = jac @ cache.qd - task.reference.rate(t)
    kp = np.asarray(task.kp)
    kd = np.asarray(task.kd)
    y_star = -kp * y - kd * ydot + task.reference.accel(t)
    return TaskEval(
        name=task.name,
        y=y,
        ydot=ydot,
        y_star=y_star,
        jac=jac,
        drift=drift,
        weights=np.asarray(task.weight, float),
    )


def stack_tasks(cache: KinCache, tasks: Sequence[TaskSpec], t: float) -> TaskStack:
    if not tasks:
        raise ScenarioError("stack_tasks needs at least one task")
    names = [task.name for task in tasks]
    if len(set(names)) != len(names):
        raise ScenarioError("task names must be unique within a stack")
    evals = [eval_task(cache, task, t) for task in tasks]
    jac = np.vstack([ev.jac for ev in evals])
    drift = np.concatenate([ev.drift for ev in evals])
    y_star = np.concatenate([ev.y_star for ev in evals])
    weights = np.concatenate([ev.weights for ev in evals])
    slices: dict[str, slice] = {}
    row = 0
    for ev in evals:
        slices[ev.name] = slice(row, row + ev.y.size)
        row += ev.y.size
    return TaskStack(jac=jac, drift=drift, y_star=y_star, weights=weights,
                     slices=slices, evals=evals)


# -- model-level conveniences ----------------------------------------------


def task_error(model: RobotModel, task: TaskSpec, t: float, q, qd):
    """(y, ydot) = (y^a(q) - y^d(t), J qd - yd^d(t))."""
    ev = eval_task(KinCache(model, q, qd), task, t)
    return ev.y, ev.ydot


def task_servo(model: RobotModel, task: TaskSpec, t: float, q, qd) -> np.ndarray:
    """Servo target y* = -Kp y - Kd ydot + ydd^d(t)."""
    return eval_task(KinCache(model, q, qd), task, t).y_star
