"""Independent oracles shared by the test modules.

Everything here is deliberately written against first principles (finite
differences, closed-form textbook dynamics, exhaustive enumeration) rather
than reusing package internals, so it can arbitrate correctness.
"""
from __future__ import annotations

import math

import numpy as np

from safewbc import multibody as mb


# -- finite-difference kinematics -------------------------------------------


def fd_frame_jacobian(model, q, frame, h=1e-6):
    """6 x n Jacobian from central differences of the frame pose."""
    q = np.asarray(q, dtype=float)
    n = len(q)
    r0 = mb.forward_kinematics(model, q, frame)[1]
    cols = []
    for i in range(n):
        qp = q.copy()
        qp[i] += h
        qm = q.copy()
        qm[i] -= h
        pp, rp = mb.forward_kinematics(model, qp, frame)
        pm, rm = mb.forward_kinematics(model, qm, frame)
        dp = (pp - pm) / (2 * h)
        dr = (rp - rm) / (2 * h)
        w = dr @ r0.T
        cols.append(np.concatenate([dp, [w[2, 1], w[0, 2], w[1, 0]]]))
    return np.array(cols).T


def fd_drift(model, q, qd, frame, h=1e-6):
    """Jdot @ qd via the directional derivative of the Jacobian along qd."""
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    jp = mb.frame_jacobian(model, q + h * qd, frame)
    jm = mb.frame_jacobian(model, q - h * qd, frame)
    return (jp - jm) / (2 * h) @ qd


def fd_bias_lagrange(model, q, qd, h=1e-6):
    """Bias forces from the Euler-Lagrange identity
    d/dt(dL/dqd) - dL/dq evaluated with qdd = 0."""
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    n = len(q)

    def momentum(qq):
        return mb.KinCache(model, qq, qd).mass_matrix() @ qd

    dmqd = (momentum(q + h * qd) - momentum(q - h * qd)) / (2 * h)
    grad = np.zeros(n)
    for i in range(n):
        qp = q.copy()
        qp[i] += h
        qm = q.copy()
        qm[i] -= h
        cp = mb.KinCache(model, qp, qd)
        cm = mb.KinCache(model, qm, qd)
        lp = cp.kinetic_energy() - cp.potential_energy()
        lm = cm.kinetic_energy() - cm.potential_energy()
        grad[i] = (lp - lm) / (2 * h)
    return dmqd - grad


def fd_coriolis_matrix(model, q, qd, h=1e-6):
    """Christoffel-consistent C(q, qd) from finite differences of M."""
    q = np.asarray(q, dtype=float)
    n = len(q)
    dm = np.zeros((n, n, n))  # dm[k] = dM/dq_k
    for k in range(n):
        qp = q.copy()
        qp[k] += h
        qm = q.copy()
        qm[k] -= h
        dm[k] = (mb.mass_matrix(model, qp) - mb.mass_matrix(model, qm)) / (2 * h)
    c = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            for k in range(n):
                c[i, j] += 0.5 * (dm[k][i, j] + dm[j][i, k] - dm[i][j, k]) * qd[k]
    return c


# -- closed-form double pendulum ---------------------------------------------

DPEND_M1 = DPEND_M2 = 1.0
DPEND_L1 = DPEND_L2 = 0.5
DPEND_G = 9.81


def dpend_mass_matrix(q):
    m1, m2, l1, l2 = DPEND_M1, DPEND_M2, DPEND_L1, DPEND_L2
    c2 = math.cos(q[1])
    return np.array(
        [
            [
                (m1 + m2) * l1**2 + m2 * l2**2 + 2 * m2 * l1 * l2 * c2,
                m2 * l2**2 + m2 * l1 * l2 * c2,
            ],
            [m2 * l2**2 + m2 * l1 * l2 * c2, m2 * l2**2],
        ]
    )


def dpend_bias(q, qd):
    m1, m2, l1, l2, g = DPEND_M1, DPEND_M2, DPEND_L1, DPEND_L2, DPEND_G
    s2 = math.sin(q[1])
    cor1 = -m2 * l1 * l2 * s2 * (2 * qd[0] * qd[1] + qd[1] ** 2)
    cor2 = m2 * l1 * l2 * s2 * qd[0] ** 2
    g1 = g * ((m1 + m2) * l1 * math.sin(q[0]) + m2 * l2 * math.sin(q[0] + q[1]))
    g2 = g * m2 * l2 * math.sin(q[0] + q[1])
    return np.array([cor1 + g1, cor2 + g2])


def dpend_energy(q, qd):
    m = dpend_mass_matrix(q)
    ke = 0.5 * float(qd @ m @ qd)
    z1 = -DPEND_L1 * math.cos(q[0])
    z2 = z1 - DPEND_L2 * math.cos(q[0] + q[1])
    pe = DPEND_G * (DPEND_M1 * z1 + DPEND_M2 * z2)
    return ke + pe


# -- homogeneous-transform FK oracle ----------------------------------------


def chain_fk(model, q, frame):
    """Frame position via straight 4x4 homogeneous-transform products,
    independent of the package's kinematics pass."""

    def rot(axis, angle):
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        x, y, z = axis
        c, s = math.cos(angle), math.sin(angle)
        cc = 1 - c
        return np.array(
            [
                [c + x * x * cc, x * y * cc - z * s, x * z * cc + y * s],
                [y * x * cc + z * s, c + y * y * cc, y * z * cc - x * s],
                [z * x * cc - y * s, z * y * cc + x * s, c + z * z * cc],
            ]
        )

    def homog(r, p):
        t = np.eye(4)
        t[:3, :3] = r
        t[:3, 3] = p
        return t

    fr = model.frame(frame)
    transforms = {}
    for i, nd in enumerate(model.nodes):
        parent_t = np.eye(4) if nd.parent < 0 else transforms[nd.parent]
        if nd.jtype == "revolute":
            local = homog(rot(nd.axis, q[i]), nd.offset)
        else:
            local = homog(np.eye(3), nd.offset + nd.axis * q[i])
        transforms[i] = parent_t @ local
    t = transforms[fr.node] @ homog(fr.rotation, fr.offset)
    return t[:3, 3], t[:3, :3]


# -- brute-force QP oracle ----------------------------------------------------


def kkt_equality_solve(h, g, a_eq, b_eq):
    """Solve min 1/2 x'Hx + g'x s.t. a_eq x = b_eq via one dense KKT system."""
    n = h.shape[0]
    m = 0 if a_eq is None else a_eq.shape[0]
    if m == 0:
        return np.linalg.solve(h, -g), np.zeros(0)
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = h
    kkt[:n, n:] = a_eq.T
    kkt[n:, :n] = a_eq
    rhs = np.concatenate([-g, b_eq])
    sol = np.linalg.solve(kkt, rhs)
    return sol[:n], sol[n:]


def enumerate_qp(h, g, a_eq, b_eq, a_in, b_in, tol=1e-9):
    """Globally solve a strictly convex QP with inequality rows by
    enumerating every active subset and checking the KKT conditions.
    Returns (x, active_mask) or (None, None) if infeasible."""
    m_in = 0 if a_in is None else a_in.shape[0]
    best = None
    for mask in range(1 << m_in):
        act = [i for i in range(m_in) if mask >> i & 1]
        rows = [a_eq] if a_eq is not None and a_eq.size else []
        rhs = [b_eq] if b_eq is not None and np.size(b_eq) else []
        if act:
            rows.append(a_in[act])
            rhs.append(b_in[act])
        a_stack = np.vstack(rows) if rows else None
        b_stack = np.concatenate(rhs) if rhs else None
        if a_stack is not None and np.linalg.matrix_rank(a_stack) < a_stack.shape[0]:
            continue
        try:
            x, mult = kkt_equality_solve(h, g, a_stack, b_stack)
        except np.linalg.LinAlgError:
            continue
        n_eq = 0 if a_eq is None else a_eq.shape[0]
        dual_in = mult[n_eq:]
        if np.any(dual_in < -tol):
            continue
        if m_in:
            viol = a_in @ x - b_in
            if np.any(viol > tol):
                continue
        val = 0.5 * x @ h @ x + g @ x
        if best is None or val < best[0] - 1e-12:
            best = (val, x, act)
    if best is None:
        return None, None
    return best[1], best[2]


def point_in_hull(points, p, shrink=0.0, tol=1e-12):
    """Is p inside the convex hull of `points`, shrunk by `shrink` along every
    face normal?  Backed by scipy's qhull, independent of the package geometry.
    Returns (inside, signed distance to the shrunken boundary)."""
    from scipy.spatial import ConvexHull

    hull = ConvexHull(np.asarray(points, dtype=float))
    # hull.equations rows (a, c) satisfy a . x + c <= 0 inside, |a| = 1
    vals = hull.equations[:, :2] @ np.asarray(p, dtype=float) + hull.equations[:, 2]
    dist = -(vals.max()) - shrink
    return bool(dist >= -tol), float(dist)
