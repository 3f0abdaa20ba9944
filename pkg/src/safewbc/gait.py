"""Walking reference generation for the planar biped.

A step lasts ``T`` seconds of single support.  The swing foot tracks a
smoothed horizontal move toward a placement target plus a half-sine vertical
arc, the CoM holds a constant height, and the torso pitch holds zero.  The
placement target comes from a pluggable provider; the shipped default is a
one-step deadbeat rule on the linear inverted pendulum: place the next
stance point so that the pendulum's step-to-step map lands on the commanded
velocity at the following touchdown.  Touchdowns are time scheduled; the
scenario runner owns the impact projection and contact swap.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import contacts as ct
from . import multibody as mb
from . import tasks as tk
from .errors import ScenarioError

DEFAULT_PERIOD = 0.35
DEFAULT_APEX = 0.08
DEFAULT_SMOOTHING = 5.0


@dataclass(frozen=True)
class GaitParams:
    """Step timing and pendulum geometry."""

    period: float = DEFAULT_PERIOD
    com_height: float = 0.65
    z_apex: float = DEFAULT_APEX
    smoothing: float = DEFAULT_SMOOTHING
    step_width: float = 0.18
    v_des: float = 0.0
    reach: float = 0.24
    axis: int = 1
    gravity: float = 9.81

    def __post_init__(self):
        if not self.period > 0:
            raise ScenarioError("step period must be positive")
        if not self.com_height > 0:
            raise ScenarioError("pendulum height must be positive")
        if self.z_apex < 0:
            raise ScenarioError("swing apex must be nonnegative")
        if not self.smoothing > 0:
            raise ScenarioError("smoothing rate must be positive")
        if self.step_width < 0 or not self.reach > 0:
            raise ScenarioError("step width must be >= 0 and reach > 0")
        if self.axis not in (0, 1):
            raise ScenarioError("walking axis must be a ground coordinate")

    @property
    def omega(self) -> float:
        return math.sqrt(self.gravity / self.com_height)


@dataclass(frozen=True)
class FootTarget:
    """World-frame ground coordinates for the next stance point."""

    u_x: float
    u_y: float
    provider: str = "manual"

    def __post_init__(self):
        if not (math.isfinite(self.u_x) and math.isfinite(self.u_y)):
            raise ScenarioError("foot target must be finite")

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.u_x, self.u_y])


def swing_reference(tau: float, params: GaitParams, sw0, target: FootTarget):
    """Swing-foot position, velocity, and acceleration at phase ``tau``.

    The horizontal coordinates ease from ``sw0`` toward the target with the
    profile s = 1 - exp(-c tau / T), which starts exactly at sw0 with zero
    horizontal rate; the vertical coordinate is a half-sine arc that lifts
    off and lands at ground level.
    """
    T = params.period
    if tau < -1e-9 or tau > T + 1e-9:
        warnings.warn(f"swing phase {tau:.6g} outside [0, {T:.6g}], clamped",
                      stacklevel=2)
    tau = min(max(tau, 0.0), T)
    c = params.smoothing / T
    e = math.exp(-c * tau)
    s, sd, sdd = 1.0 - e, c * e, -c * c * e
    d = target.xy - np.asarray(sw0, dtype=float)
    w = 2.0 * math.pi / T
    z, zd, zdd = (params.z_apex * math.sin(w * tau),
                  params.z_apex * w * math.cos(w * tau),
                  -params.z_apex * w * w * math.sin(w * tau))
    pos = np.array([sw0[0] + s * d[0], sw0[1] + s * d[1], z])
    vel = np.array([sd * d[0], sd * d[1], zd])
    acc = np.array([sdd * d[0], sdd * d[1], zdd])
    return pos, vel, acc


def orbit_velocities(params: GaitParams) -> tuple[float, float]:
    """Touchdown speeds (fast, slow) of the period-2 pendulum orbit.

    A shuffle at mean speed v_des with placement separation step_width is a
    two-step limit cycle: the step after placing the leading foot sweeps the
    wide gap fast, the step after placing the trailing foot barely moves.
    Solving the step-to-step map for periodicity, mean displacement, and
    separation gives the touchdown speeds in closed form.
    """
    w, T = params.omega, params.period
    s, c = math.sinh(w * T), math.cosh(w * T)
    vsum = params.v_des * T * w * s / (c - 1.0)
    vdif = (params.step_width + params.v_des * T) * w * s / (1.0 + c)
    return 0.5 * (vsum + vdif), 0.5 * (vsum - vdif)


def pendulum_velocity(cache: mb.KinCache, stance, params: GaitParams) -> float:
    """Pendulum-equivalent CoM speed from angular momentum about the stance point.

    The raw CoM velocity is polluted by swing-leg reaction (the leg is a
    fifth of the robot), which the placement rule must not chase.  Angular
    momentum about the stance point is immune to internal forces, so
    dividing it by m H recovers the speed the pendulum map propagates.
    """
    p = np.array([stance[0], stance[1], 0.0])
    L = cache.angular_momentum(p)
    mh = cache.model.total_mass * params.com_height
    return float(L[1] / mh) if params.axis == 0 else float(-L[0] / mh)


def deadbeat_target(params: GaitParams, com, com_vel, stance, tau: float,
                    side: float) -> FootTarget:
    """One-step deadbeat placement onto the period-2 pendulum orbit.

    Predicts the CoM state at the upcoming touchdown from the pendulum about
    the current stance point, then places the new stance point so that the
    following step ends exactly at the orbit's touchdown speed for its side.
    ``side`` is +1 when the swing foot belongs on the positive side of the
    walking axis; placing that leading foot aims for the slow touchdown.
    """
    a = params.axis
    w, T = params.omega, params.period
    trem = max(params.period - tau, 0.0)
    x = float(com[a]) - float(stance[a])
    v = float(com_vel[a])
    ch, sh = math.cosh(w * trem), math.sinh(w * trem)
    x_td = x * ch + v * sh / w
    v_td = x * w * sh + v * ch
    c_td = float(stance[a]) + x_td
    v_fast, v_slow = orbit_velocities(params)
    v_aim = v_slow if side > 0 else v_fast
    u = c_td + (v_td * math.cosh(w * T) - v_aim) / (w * math.sinh(w * T))
    lo, hi = c_td - params.reach, c_td + params.reach
    if u < lo or u > hi:
        warnings.warn(f"foot target {u:.4f} beyond reach of CoM {c_td:.4f}, "
                      "clamped", stacklevel=2)
        u = min(max(u, lo), hi)
    other = float(com[1 - a])
    coords = (u, other) if a == 0 else (other, u)
    return FootTarget(coords[0], coords[1], provider="deadbeat")


PROVIDERS = {"deadbeat": deadbeat_target}


def foot_target(provider, params: GaitParams, com, com_vel, stance,
                tau: float, side: float) -> FootTarget:
    """Resolve a provider by name or callable and compute the placement."""
    fn = PROVIDERS.get(provider, provider) if isinstance(provider, str) else provider
    if not callable(fn):
        raise ScenarioError(f"unknown foot-target provider {provider!r}")
    return fn(params, com, com_vel, stance, tau, side)


def alip_output_stack(params: GaitParams, swing_frame: str, sw0,
                      target: FootTarget, t0: float, torso_joint: int,
                      axes=(1, 2), *, com_weight=10.0, torso_weight=4.0,
                      swing_weight=8.0, swing_kp=400.0, swing_kd=40.0,
                      com_kp=100.0, com_kd=20.0):
    """Single-support task list: CoM height, torso pitch, swing foot."""
    axes = tuple(axes)
    idx = list(axes)

    def value(t):
        return swing_reference(t - t0, params, sw0, target)[0][idx]

    def rate(t):
        return swing_reference(t - t0, params, sw0, target)[1][idx]

    def accel(t):
        return swing_reference(t - t0, params, sw0, target)[2][idx]

    swing_ref = tk.Reference(dim=len(axes), value=value, rate=rate,
                             accel=accel, name="swing")
    return [
        tk.TaskSpec(name="com-height", kind="com-height",
                    reference=tk.constant_reference([params.com_height]),
                    kp=com_kp, kd=com_kd, weight=com_weight),
        tk.TaskSpec(name="torso", kind="joint-subset", joints=(torso_joint,),
                    reference=tk.constant_reference([0.0]),
                    kp=com_kp, kd=com_kd, weight=torso_weight),
        tk.TaskSpec(name="swing", kind="frame-position", frame=swing_frame,
                    axes=axes, reference=swing_ref,
                    kp=swing_kp, kd=swing_kd, weight=swing_weight),
    ]


@dataclass
class GaitScheduler:
    """Alternating left/right single-support domains of exact period T.

    Owns which foot is stance, the swing start pose, and the per-step
    placement target.  The scenario runner drives it: ``due`` at a tick
    boundary means a touchdown is scheduled there; the runner projects
    velocities onto the new contact set and then calls ``advance`` with the
    post-impact state, which plans the next placement.
    """

    model: mb.RobotModel
    params: GaitParams
    left_frame: str = "foot_l"
    right_frame: str = "foot_r"
    torso_joint: int = 2
    first_swing: str = "left"
    provider: str = "deadbeat"
    task_axes: tuple = (1, 2)
    mu: float = 0.6
    stance: str = field(default="", init=False)
    step_index: int = field(default=0, init=False)
    t0: float = field(default=0.0, init=False)
    sw0: np.ndarray = field(default=None, init=False)
    last_target: FootTarget = field(default=None, init=False)
    started: bool = field(default=False, init=False)

    def __post_init__(self):
        if self.first_swing not in ("left", "right"):
            raise ScenarioError("first_swing must be 'left' or 'right'")
        for f in (self.left_frame, self.right_frame):
            self.model.frame(f)

    @property
    def swing(self) -> str:
        return "right" if self.stance == "left" else "left"

    def frame_of(self, leg: str) -> str:
        return self.left_frame if leg == "left" else self.right_frame

    @property
    def swing_frame(self) -> str:
        return self.frame_of(self.swing)

    @property
    def stance_frame(self) -> str:
        return self.frame_of(self.stance)

    @property
    def side(self) -> float:
        # the left foot lives on the positive side of the walking axis
        return 1.0 if self.swing == "left" else -1.0

    def start(self, q, qd, t: float) -> None:
        self.stance = "right" if self.first_swing == "left" else "left"
        self.step_index = 0
        self.t0 = t
        self._open_step(q, qd)
        self.started = True

    def due(self, t: float) -> bool:
        return self.started and (t - self.t0) >= self.params.period - 1e-9

    def advance(self, q, qd, t: float) -> None:
        """Swap stance and swing at a touchdown and open the next step.

        Call with the post-impact velocity: the placement target is planned
        once per step from the state measured here.
        """
        self.stance = self.swing
        self.step_index += 1
        self.t0 += self.params.period
        self._open_step(q, qd)

    def _open_step(self, q, qd) -> None:
        cache = mb.KinCache(self.model, np.asarray(q, dtype=float),
                            np.asarray(qd, dtype=float))
        p, _ = cache.frame_pose(self.swing_frame)
        self.sw0 = p[:2].copy()
        stance_p, _ = cache.frame_pose(self.stance_frame)
        vel = cache.com_velocity().copy()
        vel[self.params.axis] = pendulum_velocity(cache, stance_p, self.params)
        self.last_target = foot_target(self.provider, self.params, cache.com(),
                                       vel, stance_p, 0.0, self.side)

    def contacts(self) -> tuple:
        return (ct.ContactSpec(frame=self.stance_frame, mu=self.mu),)

    def tasks(self, q, qd, t: float) -> list:
        """Task list for the current instant; the target is fixed per step."""
        return alip_output_stack(self.params, self.swing_frame, self.sw0,
                                 self.last_target, self.t0, self.torso_joint,
                                 axes=self.task_axes)
