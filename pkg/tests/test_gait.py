"""Walking reference generation: swing profile, placement rule, scheduler."""
import math
import warnings

import numpy as np
import pytest

from safewbc import gait as gt
from safewbc import multibody as mb
from safewbc.errors import ScenarioError

BIPED = "src/safewbc/models/biped5.yaml"


def lip_integrate(omega, x0, v0, horizon, n=20000):
    """Numerically integrate the inverted-pendulum ODE xdd = omega^2 x."""
    dt = horizon / n
    x, v = float(x0), float(v0)
    for _ in range(n):
        # classic RK4 on the linear system
        def f(s):
            return np.array([s[1], omega * omega * s[0]])
        s = np.array([x, v])
        k1 = f(s)
        k2 = f(s + 0.5 * dt * k1)
        k3 = f(s + 0.5 * dt * k2)
        k4 = f(s + dt * k3)
        s = s + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        x, v = s
    return x, v


def test_swing_reference_endpoints():
    params = gt.GaitParams(period=0.35, com_height=0.65, z_apex=0.08)
    sw0 = np.array([0.01, -0.04])
    target = gt.FootTarget(0.05, 0.11)
    p0, v0, _ = gt.swing_reference(0.0, params, sw0, target)
    assert np.allclose(p0[:2], sw0)
    assert p0[2] == 0.0
    # horizontal rate starts at the smoothing slope, vertical at the arc slope
    assert v0[2] == pytest.approx(0.08 * 2 * math.pi / 0.35)

    pq, _, _ = gt.swing_reference(0.35 / 4, params, sw0, target)
    assert pq[2] == pytest.approx(0.08)

    pT, _, _ = gt.swing_reference(0.35, params, sw0, target)
    assert pT[2] == pytest.approx(0.0, abs=1e-15)
    # 1 - e^-5 = 0.993262... of the horizontal distance is covered
    frac = 1.0 - math.exp(-5.0)
    assert pT[0] == pytest.approx(0.01 + frac * (0.05 - 0.01))
    assert pT[1] == pytest.approx(-0.04 + frac * (0.11 + 0.04))


def test_swing_reference_derivatives_match_fd():
    params = gt.GaitParams(period=0.4, com_height=0.7, z_apex=0.05,
                           smoothing=5.0)
    sw0 = np.array([-0.02, 0.03])
    target = gt.FootTarget(0.10, -0.08)
    h = 1e-6
    for tau in (0.05, 0.17, 0.31):
        pm = gt.swing_reference(tau - h, params, sw0, target)[0]
        pp = gt.swing_reference(tau + h, params, sw0, target)[0]
        vm = gt.swing_reference(tau - h, params, sw0, target)[1]
        vp = gt.swing_reference(tau + h, params, sw0, target)[1]
        _, v, a = gt.swing_reference(tau, params, sw0, target)
        assert np.allclose((pp - pm) / (2 * h), v, atol=1e-6)
        assert np.allclose((vp - vm) / (2 * h), a, atol=1e-5)


def test_swing_reference_clamps_with_warning():
    params = gt.GaitParams(period=0.35, com_height=0.65)
    sw0 = np.zeros(2)
    target = gt.FootTarget(0.1, 0.1)
    with pytest.warns(UserWarning, match="clamped"):
        p, _, _ = gt.swing_reference(0.5, params, sw0, target)
    ref = gt.swing_reference(0.35, params, sw0, target)[0]
    assert np.allclose(p, ref)
    # float-epsilon phase excursions clamp silently
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        gt.swing_reference(-1e-15, params, sw0, target)


def test_orbit_velocities_close_the_two_step_map():
    """The closed-form touchdown speeds must be a period-2 fixed point of the
    numerically integrated pendulum, with each step displacing v_des * T."""
    params = gt.GaitParams(period=0.35, com_height=0.68, v_des=0.2,
                           step_width=0.13)
    w = params.omega
    T = params.period
    v_fast, v_slow = gt.orbit_velocities(params)
    s, c = math.sinh(w * T), math.cosh(w * T)
    # back out the on-orbit offsets from the velocity map
    x_fast = (v_slow - v_fast * c) / (w * s)
    x_slow = (v_fast - v_slow * c) / (w * s)
    # step A: integrate from the fast touchdown
    x1, v1 = lip_integrate(w, x_fast, v_fast, T)
    assert v1 == pytest.approx(v_slow, abs=1e-9)
    # step B: from the slow touchdown
    x2, v2 = lip_integrate(w, x_slow, v_slow, T)
    assert v2 == pytest.approx(v_fast, abs=1e-9)
    # every step displaces the CoM by exactly v_des * T
    assert x1 - x_fast == pytest.approx(0.2 * T, abs=1e-9)
    assert x2 - x_slow == pytest.approx(0.2 * T, abs=1e-9)
    # the trailing foot lands step_width behind the stance foot, the leading
    # foot lands step_width plus a full stride ahead
    assert x1 - x_slow == pytest.approx(-0.13, abs=1e-9)
    assert x2 - x_fast == pytest.approx(0.13 + 2 * 0.2 * T, abs=1e-9)


def test_orbit_velocities_standstill_symmetry():
    params = gt.GaitParams(period=0.4, com_height=0.7, v_des=0.0,
                           step_width=0.18)
    v_fast, v_slow = gt.orbit_velocities(params)
    assert v_fast == pytest.approx(-v_slow)
    assert v_fast > 0


def test_deadbeat_standstill_places_half_width_ahead():
    """On the standstill shuffle orbit the target lands half the step width
    beyond the touchdown CoM position."""
    params = gt.GaitParams(period=0.35, com_height=0.65, v_des=0.0,
                           step_width=0.18, reach=0.4, axis=1)
    v_fast, v_slow = gt.orbit_velocities(params)
    assert v_slow == pytest.approx(-v_fast)
    # on the shuffle orbit the trailing foot touches down with the CoM dead
    # center, rocking toward it; the next placement mirrors the stance
    stance = np.array([0.0, -0.09, 0.0])
    com = np.array([0.0, 0.0, 0.65])
    vel = np.array([0.0, v_slow, 0.0])
    tgt = gt.deadbeat_target(params, com, vel, stance, 0.0, side=1.0)
    assert tgt.u_y == pytest.approx(com[1] + 0.09, abs=1e-12)
    # mirrored on the return swing: fast landing on the left side
    stance_l = np.array([0.0, 0.09, 0.0])
    vel_b = np.array([0.0, v_fast, 0.0])
    tgt2 = gt.deadbeat_target(params, com, vel_b, stance_l, 0.0, side=-1.0)
    assert tgt2.u_y == pytest.approx(com[1] - 0.09, abs=1e-12)


def test_deadbeat_reach_clamp_warns():
    params = gt.GaitParams(period=0.35, com_height=0.65, v_des=0.2,
                           step_width=0.13, reach=0.05, axis=1)
    com = np.array([0.0, 0.0, 0.65])
    vel = np.array([0.0, 1.5, 0.0])
    stance = np.array([0.0, -0.05, 0.0])
    with pytest.warns(UserWarning, match="reach"):
        tgt = gt.deadbeat_target(params, com, vel, stance, 0.0, side=1.0)
    w, T = params.omega, params.period
    c_td = stance[1] + (com[1] - stance[1]) * math.cosh(w * T) \
        + 1.5 * math.sinh(w * T) / w
    assert abs(tgt.u_y - c_td) == pytest.approx(0.05, abs=1e-12)


def test_foot_target_dispatch():
    params = gt.GaitParams(period=0.35, com_height=0.65)
    com = np.array([0.0, 0.0, 0.65])
    vel = np.zeros(3)
    stance = np.array([0.0, -0.09, 0.0])
    by_name = gt.foot_target("deadbeat", params, com, vel, stance, 0.0, 1.0)
    direct = gt.foot_target(gt.deadbeat_target, params, com, vel, stance,
                            0.0, 1.0)
    assert by_name.u_y == direct.u_y
    with pytest.raises(ScenarioError, match="provider"):
        gt.foot_target("nope", params, com, vel, stance, 0.0, 1.0)


def test_pendulum_velocity_pure_translation():
    """When every body translates together, the momentum-based speed equals
    the CoM speed scaled by the actual-to-nominal height ratio."""
    model = mb.load_model(BIPED)
    q = model.q0.copy()
    qd = np.zeros(model.nq)
    qd[0] = 0.0
    qd[1] = 0.0
    # base y translation only (planar walking axis)
    qd_y = qd.copy()
    qd_y[0] = 0.31
    cache = mb.KinCache(model, q, qd_y)
    params = gt.GaitParams(period=0.35, com_height=float(cache.com()[2]),
                           axis=1)
    stance = np.array([0.0, -0.09, 0.0])
    # q layout: index 0 is the base y coordinate
    got = gt.pendulum_velocity(cache, stance, params)
    assert got == pytest.approx(0.31 * cache.com()[2] / params.com_height,
                                abs=1e-12)


def test_alip_output_stack_structure():
    params = gt.GaitParams(period=0.35, com_height=0.66, z_apex=0.04)
    sw0 = np.array([0.0, -0.09])
    target = gt.FootTarget(0.0, 0.07)
    tasks = gt.alip_output_stack(params, "foot_l", sw0, target, t0=1.2,
                                 torso_joint=2)
    names = [t.name for t in tasks]
    kinds = [t.kind for t in tasks]
    assert names == ["com-height", "torso", "swing"]
    assert kinds == ["com-height", "joint-subset", "frame-position"]
    assert np.allclose(tasks[0].reference.value(3.0), [0.66])
    assert tasks[1].joints == (2,)
    assert tasks[2].frame == "foot_l"
    assert tasks[2].axes == (1, 2)
    # the swing reference closure evaluates the profile at t - t0
    p, v, a = gt.swing_reference(0.1, params, sw0, target)
    assert np.allclose(tasks[2].reference.value(1.3), p[[1, 2]])
    assert np.allclose(tasks[2].reference.rate(1.3), v[[1, 2]])
    assert np.allclose(tasks[2].reference.accel(1.3), a[[1, 2]])


def test_scheduler_alternates_and_plans():
    model = mb.load_model(BIPED)
    params = gt.GaitParams(period=0.35, com_height=0.67, v_des=0.0,
                           step_width=0.18, reach=0.4, axis=1)
    sched = gt.GaitScheduler(model, params, first_swing="left")
    q = model.q0.copy()
    qd = np.zeros(model.nq)
    sched.start(q, qd, 0.0)
    assert sched.stance == "right" and sched.swing == "left"
    assert sched.side == 1.0
    assert sched.stance_frame == "foot_r"
    cache = mb.KinCache(model, q)
    assert np.allclose(sched.sw0, cache.frame_pose("foot_l")[0][:2])
    assert sched.last_target is not None

    assert not sched.due(0.349)
    assert sched.due(0.35)
    sched.advance(q, qd, 0.35)
    assert sched.stance == "left" and sched.swing == "right"
    assert sched.side == -1.0
    assert sched.step_index == 1
    assert sched.t0 == pytest.approx(0.35)
    (spec,) = sched.contacts()
    assert spec.frame == "foot_l"

    tasks = sched.tasks(q, qd, 0.40)
    assert [t.name for t in tasks] == ["com-height", "torso", "swing"]
    assert tasks[2].frame == "foot_r"


def test_scheduler_period_is_exact_over_many_steps():
    model = mb.load_model(BIPED)
    params = gt.GaitParams(period=0.35, com_height=0.67, step_width=0.18,
                           reach=0.4)
    sched = gt.GaitScheduler(model, params)
    q = model.q0.copy()
    qd = np.zeros(model.nq)
    sched.start(q, qd, 0.0)
    # drive on a 1 kHz grid like the scenario runner does
    dt = 1e-3
    touchdowns = []
    for k in range(3501):
        t = k * dt
        if sched.due(t):
            sched.advance(q, qd, t)
            touchdowns.append(t)
    assert len(touchdowns) == 10
    assert np.allclose(np.diff(touchdowns), 0.35, atol=1e-12)
    # accumulated t0 stays on the exact grid, no phase creep
    assert sched.t0 == pytest.approx(3.5, abs=1e-12)


def test_gait_params_validation():
    with pytest.raises(ScenarioError):
        gt.GaitParams(period=0.0, com_height=0.65)
    with pytest.raises(ScenarioError):
        gt.GaitParams(period=0.35, com_height=-1.0)
    with pytest.raises(ScenarioError):
        gt.GaitParams(period=0.35, com_height=0.65, z_apex=-0.01)
    with pytest.raises(ScenarioError):
        gt.GaitParams(period=0.35, com_height=0.65, axis=2)
    with pytest.raises(ScenarioError):
        gt.GaitScheduler(mb.load_model(BIPED),
                         gt.GaitParams(period=0.35, com_height=0.65),
                         first_swing="forward")
    with pytest.raises(ScenarioError):
        gt.FootTarget(float("nan"), 0.0)
