import math

import numpy as np
import pytest

from safewbc import tasks as tk
from safewbc import multibody as mb
from safewbc.errors import GimbalLockError, ScenarioError


# -- reference signals ---------------------------------------------------------


def test_constant_reference():
    r = tk.constant_reference([0.3, -0.1])
    assert r.dim == 2
    np.testing.assert_allclose(r.value(7.2), [0.3, -0.1])
    np.testing.assert_allclose(r.rate(7.2), 0.0)
    np.testing.assert_allclose(r.accel(7.2), 0.0)


def test_sinusoid_reference_derivatives_match_fd():
    r = tk.sinusoid_reference([1.0, 0.0], [0.2, 0.5], [3.0, 0.7], [0.0, 1.1])
    h = 1e-6
    for t in (0.0, 0.4, 2.9):
        fd_rate = (r.value(t + h) - r.value(t - h)) / (2 * h)
        fd_acc = (r.rate(t + h) - r.rate(t - h)) / (2 * h)
        np.testing.assert_allclose(r.rate(t), fd_rate, atol=1e-7)
        np.testing.assert_allclose(r.accel(t), fd_acc, atol=1e-7)


def test_squat_reference_frozen_values():
    r = tk.squat_reference(1.0)
    # z(t) = 1 - 0.12 (1 - e^-t) + 0.03 sin(pi t)
    np.testing.assert_allclose(r.value(0.0), [1.0], atol=1e-15)
    np.testing.assert_allclose(r.value(1.0), [0.9241455329405731], atol=1e-12)
    np.testing.assert_allclose(r.value(0.5), [1.0 - 0.12 * (1 - math.exp(-0.5)) + 0.03])
    np.testing.assert_allclose(r.rate(0.0), [-0.12 + 0.03 * math.pi], atol=1e-15)
    np.testing.assert_allclose(r.accel(0.0), [0.12], atol=1e-15)
    # long-run settle: oscillates about base - drop
    assert abs(r.value(30.0)[0] - 0.88) <= 0.03 + 1e-12


def test_bow_reference_profile():
    r = tk.bow_reference()
    np.testing.assert_allclose(r.value(3.0), [1.35], atol=1e-15)
    np.testing.assert_allclose(r.value(0.0), [0.0], atol=1e-15)
    np.testing.assert_allclose(r.value(1.5), [0.675], atol=1e-15)
    np.testing.assert_allclose(r.value(6.0), [0.0], atol=1e-15)
    np.testing.assert_allclose(r.value(9.0), [0.0], atol=1e-15)
    np.testing.assert_allclose(r.rate(1.0), [0.45])
    np.testing.assert_allclose(r.rate(4.0), [-0.45])
    np.testing.assert_allclose(r.rate(8.0), [0.0])
    np.testing.assert_allclose(r.accel(2.0), [0.0])


def test_sampled_reference_tracks_analytic_signal():
    t = np.arange(0.0, 2.0 + 1e-12, 1e-3)
    vals = np.sin(2.0 * t)
    r = tk.sampled_reference(t, vals)
    assert r.dim == 1
    for tq in (0.25, 0.8, 1.5):
        np.testing.assert_allclose(r.value(tq), [math.sin(2 * tq)], atol=1e-6)
        np.testing.assert_allclose(r.rate(tq), [2 * math.cos(2 * tq)], atol=1e-4)
        np.testing.assert_allclose(r.accel(tq), [-4 * math.sin(2 * tq)], atol=1e-2)
    with pytest.raises(ValueError, match="undefined"):
        r.value(2.5)
    with pytest.raises(ValueError, match="undefined"):
        r.rate(-0.1)


def test_sampled_reference_validation():
    with pytest.raises(ScenarioError):
        tk.sampled_reference([0.0, 1.0], [0.0, 1.0])  # too few samples
    with pytest.raises(ScenarioError):
        tk.sampled_reference([0.0, 1.0, 1.0], [0.0, 1.0, 2.0])  # not increasing
    with pytest.raises(ScenarioError):
        tk.sampled_reference([0.0, 1.0, 2.0], [0.0, 1.0])  # length mismatch


# -- task spec validation --------------------------------------------------------


def _ref(dim):
    return tk.constant_reference(np.zeros(dim))


def test_task_spec_validation():
    with pytest.raises(ScenarioError, match="kind"):
        tk.TaskSpec(name="t", kind="frame-pose", reference=_ref(3), frame="tip")
    with pytest.raises(ScenarioError, match="needs a frame"):
        tk.TaskSpec(name="t", kind="frame-position", reference=_ref(3))
    with pytest.raises(ScenarioError, match="takes no frame"):
        tk.TaskSpec(name="t", kind="com-position", reference=_ref(3), frame="tip")
    with pytest.raises(ScenarioError, match="takes no axes"):
        tk.TaskSpec(name="t", kind="com-height", reference=_ref(1), axes=(2,))
    with pytest.raises(ScenarioError, match="needs joints"):
        tk.TaskSpec(name="t", kind="joint-subset", reference=_ref(1))
    with pytest.raises(ScenarioError, match="axes entries"):
        tk.TaskSpec(name="t", kind="frame-position", reference=_ref(1),
                    frame="tip", axes=(3,))
    with pytest.raises(ScenarioError, match="reference dim"):
        tk.TaskSpec(name="t", kind="frame-position", reference=_ref(2), frame="tip")
    with pytest.raises(ScenarioError, match="kp"):
        tk.TaskSpec(name="t", kind="com-height", reference=_ref(1), kp=0.0)
    with pytest.raises(ScenarioError, match="kd"):
        tk.TaskSpec(name="t", kind="com-height", reference=_ref(1), kd=-2.0)
    with pytest.raises(ScenarioError, match="weight"):
        tk.TaskSpec(name="t", kind="com-height", reference=_ref(1), weight=-1.0)
    # per-dimension gains broadcast and validate
    ok = tk.TaskSpec(name="t", kind="frame-position", reference=_ref(2),
                     frame="tip", axes=(1, 2), kp=[50.0, 80.0])
    assert ok.kp == (50.0, 80.0)
    assert ok.dim == 2


def test_default_gains_are_critically_damped():
    t = tk.TaskSpec(name="t", kind="com-height", reference=_ref(1))
    assert t.kp == (100.0,)
    assert t.kd == (20.0,)
    # kd^2 = 4 kp: repeated real pole
    assert t.kd[0] ** 2 == pytest.approx(4.0 * t.kp[0])


# -- task outputs ----------------------------------------------------------------


def test_frame_position_output_matches_kinematics(dpend, rng):
    q = rng.uniform(-1.0, 1.0, dpend.nq)
    qd = rng.standard_normal(dpend.nq)
    cache = mb.KinCache(dpend, q, qd)
    task = tk.TaskSpec(name="tip", kind="frame-position", frame="tip",
                       reference=_ref(2), axes=(1, 2))
    y, jac, drift = tk.task_output(cache, task)
    p, _ = cache.frame_pose("tip")
    np.testing.assert_allclose(y, p[[1, 2]])
    np.testing.assert_allclose(jac, cache.frame_jacobian("tip")[[1, 2]])
    np.testing.assert_allclose(drift, cache.frame_drift("tip")[[1, 2]])


def test_com_height_output(biped, rng):
    q = biped.q0 + 0.05 * rng.standard_normal(biped.nq)
    qd = 0.1 * rng.standard_normal(biped.nq)
    cache = mb.KinCache(biped, q, qd)
    task = tk.TaskSpec(name="h", kind="com-height", reference=_ref(1))
    y, jac, drift = tk.task_output(cache, task)
    assert y.shape == (1,)
    np.testing.assert_allclose(y[0], cache.com()[2])
    np.testing.assert_allclose(jac[0], cache.com_jacobian()[2])
    np.testing.assert_allclose(drift[0], cache.com_drift_acc()[2])


def test_joint_subset_output(biped, rng):
    q = biped.q0 + 0.05 * rng.standard_normal(biped.nq)
    qd = rng.standard_normal(biped.nq)
    cache = mb.KinCache(biped, q, qd)
    task = tk.TaskSpec(name="legs", kind="joint-subset", joints=(3, 5),
                       reference=_ref(2))
    y, jac, drift = tk.task_output(cache, task)
    np.testing.assert_allclose(y, q[[3, 5]])
    np.testing.assert_allclose(jac @ qd, qd[[3, 5]])
    np.testing.assert_allclose(drift, 0.0)


def test_euler_rate_matrix_identities(rng):
    for _ in range(20):
        ang = rng.uniform(-1.2, 1.2, 3)
        rates = rng.standard_normal(3)
        e = tk.euler_rate_matrix(ang)
        # determinant -cos(pitch): invertible away from gimbal lock
        assert np.linalg.det(e) == pytest.approx(-math.cos(ang[1]), abs=1e-12)
        # finite-difference of E along the angle rates
        h = 1e-6
        efd = (tk.euler_rate_matrix(ang + h * rates) -
               tk.euler_rate_matrix(ang - h * rates)) / (2 * h)
        np.testing.assert_allclose(tk.euler_rate_matrix_dot(ang, rates), efd,
                                   atol=1e-8)


def test_euler_rate_matrix_maps_rates_to_omega(rng):
    # omega = E ydot must reproduce R_dot = hat(omega) R
    ang = np.array([0.4, -0.3, 0.7])
    rates = np.array([0.2, -0.5, 0.9])
    h = 1e-6
    rp = mb.euler_zyx_to_matrix(*(ang + h * rates))
    rm = mb.euler_zyx_to_matrix(*(ang - h * rates))
    rdot = (rp - rm) / (2 * h)
    omega_hat = rdot @ mb.euler_zyx_to_matrix(*ang).T
    omega = np.array([omega_hat[2, 1], omega_hat[0, 2], omega_hat[1, 0]])
    np.testing.assert_allclose(tk.euler_rate_matrix(ang) @ rates, omega, atol=1e-8)


def test_orientation_task_jacobian_and_drift_fd(block, rng):
    q = block.q0 + 0.3 * rng.standard_normal(block.nq)
    qd = rng.standard_normal(block.nq)
    cache = mb.KinCache(block, q, qd)
    task = tk.TaskSpec(name="ori", kind="frame-orientation-euler-zyx",
                       frame="hand", reference=_ref(3))
    y, jac, drift = tk.task_output(cache, task)

    def angles(qq):
        _, r = mb.KinCache(block, qq).frame_pose("hand")
        return mb.matrix_to_euler_zyx(r)

    np.testing.assert_allclose(y, angles(q))
    h = 1e-6
    jfd = np.empty((3, block.nq))
    for i in range(block.nq):
        dq = np.zeros(block.nq)
        dq[i] = h
        jfd[:, i] = (angles(q + dq) - angles(q - dq)) / (2 * h)
    assert np.abs(jac - jfd).max() / max(1.0, np.abs(jfd).max()) < 1e-5

    def ydot(qq):
        c = mb.KinCache(block, qq, qd)
        _, j, _ = tk.task_output(c, task)
        return j @ qd

    dfd = (ydot(q + h * qd) - ydot(q - h * qd)) / (2 * h)
    assert np.abs(drift - dfd).max() / max(1.0, np.abs(dfd).max()) < 1e-5


def test_orientation_task_gimbal_guard(block):
    q = block.q0.copy()
    q[6] = math.pi / 2  # arm joint is about y: hand pitch hits the singularity
    cache = mb.KinCache(block, q, np.zeros(block.nq))
    task = tk.TaskSpec(name="ori", kind="frame-orientation-euler-zyx",
                       frame="hand", reference=_ref(3))
    with pytest.raises(GimbalLockError):
        tk.task_output(cache, task)


def test_orientation_error_wraps(block):
    cache = mb.KinCache(block, block.q0, np.zeros(block.nq))
    ref = tk.constant_reference([2.0 * math.pi, 0.0, 0.0])
    task = tk.TaskSpec(name="ori", kind="frame-orientation-euler-zyx",
                       frame="hand", reference=ref)
    ev = tk.eval_task(cache, task, 0.0)
    # actual yaw 0 vs desired 2 pi: wrapped error is 0, not -2 pi
    assert abs(ev.y[0]) < 1e-12


# -- error, servo, stacking -------------------------------------------------------


def test_task_error_zero_when_reference_matches(dpend, rng):
    q = rng.uniform(-1.0, 1.0, dpend.nq)
    qd = rng.standard_normal(dpend.nq)
    cache = mb.KinCache(dpend, q, qd)
    p, _ = cache.frame_pose("tip")
    task = tk.TaskSpec(name="tip", kind="frame-position", frame="tip",
                       reference=tk.constant_reference(p), axes=(0, 1, 2))
    y, ydot = tk.task_error(dpend, task, 0.0, q, qd)
    np.testing.assert_allclose(y, 0.0, atol=1e-14)
    np.testing.assert_allclose(ydot, cache.frame_jacobian("tip")[:3] @ qd)


def test_task_servo_pure_proportional(dpend):
    q = dpend.q0 + np.array([0.2, -0.3])
    task = tk.TaskSpec(name="posture", kind="joint-subset", joints=(0, 1),
                       reference=tk.constant_reference(dpend.q0), kp=64.0, kd=16.0)
    y_star = tk.task_servo(dpend, task, 0.0, q, np.zeros(2))
    np.testing.assert_allclose(y_star, -64.0 * np.array([0.2, -0.3]), atol=1e-13)


def test_closed_loop_error_decay_matches_poles(dpend):
    # feedback linearization u = M y* + bias makes the posture error follow
    # ydd = -kp y - kd ydot exactly; with poles 3 and 12 the tail decays at
    # the slow pole.  Measured log-slope over [1 s, 2 s] must match within 5%.
    p_slow, p_fast = 3.0, 12.0
    task = tk.TaskSpec(name="posture", kind="joint-subset", joints=(0, 1),
                       reference=tk.constant_reference(dpend.q0),
                       kp=p_slow * p_fast, kd=p_slow + p_fast)
    q = dpend.q0 + np.array([0.3, -0.2])
    qd = np.zeros(2)
    dt = 1e-3

    def accel(qq, qqd):
        cache = mb.KinCache(dpend, qq, qqd)
        ev = tk.eval_task(cache, task, 0.0)
        u = cache.mass_matrix() @ ev.y_star + cache.bias_forces()
        return np.linalg.solve(cache.mass_matrix(), dpend.B @ u - cache.bias_forces())

    samples = {}
    t = 0.0
    for step in range(2001):
        if step in (1000, 2000):
            samples[round(t)] = float(np.linalg.norm(q - dpend.q0))
        k1v = accel(q, qd)
        k1q = qd
        k2v = accel(q + 0.5 * dt * k1q, qd + 0.5 * dt * k1v)
        k2q = qd + 0.5 * dt * k1v
        k3v = accel(q + 0.5 * dt * k2q, qd + 0.5 * dt * k2v)
        k3q = qd + 0.5 * dt * k2v
        k4v = accel(q + dt * k3q, qd + dt * k3v)
        k4q = qd + dt * k3v
        q = q + dt / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
        qd = qd + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        t += dt
    rate = math.log(samples[1] / samples[2])
    assert abs(rate - p_slow) / p_slow < 0.05


def test_stack_tasks_layout(biped, rng):
    q = biped.q0 + 0.02 * rng.standard_normal(biped.nq)
    qd = 0.1 * rng.standard_normal(biped.nq)
    cache = mb.KinCache(biped, q, qd)
    com = tk.TaskSpec(name="com", kind="com-position", reference=_ref(2),
                      axes=(1, 2), weight=4.0)
    posture = tk.TaskSpec(name="torso", kind="joint-subset", joints=(2,),
                          reference=_ref(1), weight=[0.5])
    stack = tk.stack_tasks(cache, [com, posture], 0.0)
    assert stack.dim == 3
    assert stack.jac.shape == (3, biped.nq)
    assert stack.slices["com"] == slice(0, 2)
    assert stack.slices["torso"] == slice(2, 3)
    np.testing.assert_allclose(stack.weights, [4.0, 4.0, 0.5])
    ev_com = tk.eval_task(cache, com, 0.0)
    np.testing.assert_allclose(stack.jac[:2], ev_com.jac)
    np.testing.assert_allclose(stack.y_star[:2], ev_com.y_star)
    np.testing.assert_allclose(stack.drift[2], 0.0)
    # single task stacks to itself
    single = tk.stack_tasks(cache, [com], 0.0)
    np.testing.assert_allclose(single.jac, ev_com.jac)


def test_stack_tasks_rejects_bad_input(biped):
    cache = mb.KinCache(biped, biped.q0, np.zeros(biped.nq))
    with pytest.raises(ScenarioError, match="at least one"):
        tk.stack_tasks(cache, [], 0.0)
    t1 = tk.TaskSpec(name="a", kind="com-height", reference=_ref(1))
    with pytest.raises(ScenarioError, match="unique"):
        tk.stack_tasks(cache, [t1, t1], 0.0)
