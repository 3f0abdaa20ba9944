"""Dense strictly-convex QP solver.

    minimize  1/2 x' H x + g' x
    s.t.      A_eq x  = b_eq
              A_in x <= b_in

Equalities are eliminated through an orthonormal null-space basis, then a dual
active-set method (Goldfarb-Idnani) runs on the reduced inequality-only
problem.  The final active set is re-solved as one KKT system with a round of
iterative refinement, which is also the warm-start fast path: a caller-supplied
active-set guess is verified against the full KKT conditions and accepted only
if primal feasibility and dual signs check out.

Deterministic by construction: constraint selection is most-violated-first
with lowest-index tie-breaking and there is no randomization anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

OPTIMAL = "optimal"
MAX_ITER = "max-iter"
INFEASIBLE = "infeasible"

_FEAS_TOL = 1e-10  # on unit-norm rows, so a geometric distance
_DUAL_TOL = 1e-10
_STEP_TOL = 1e-12


@dataclass
class QpSolution:
    x: np.ndarray
    objective: float
    eq_residual: float
    ineq_violation: float
    active_set: tuple
    mult_eq: np.ndarray
    mult_in: np.ndarray
    iterations: int
    status: str
    most_violated: int | None = None  # offending row index when infeasible
    most_violated_kind: str | None = None  # "eq" or "in"
    rank_deficient_eq: bool = False

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def _as_2d(a, n):
    if a is None:
        return np.zeros((0, n))
    a = np.asarray(a, dtype=float)
    return a.reshape(0, n) if a.size == 0 else np.atleast_2d(a)


def _as_1d(b):
    if b is None:
        return np.zeros(0)
    return np.atleast_1d(np.asarray(b, dtype=float))


def _equilibrate(a, b):
    """Scale rows to unit norm; returns scaled copies and the row norms."""
    norms = np.linalg.norm(a, axis=1)
    scale = np.where(norms > 0, norms, 1.0)
    return a / scale[:, None], b / scale, scale


def solve_qp(h, g, a_eq=None, b_eq=None, a_in=None, b_in=None,
             warm_active=None, max_iter=500) -> QpSolution:
    h = np.asarray(h, dtype=float)
    g = np.asarray(g, dtype=float)
    n = h.shape[0]
    a_eq, b_eq = _as_2d(a_eq, n), _as_1d(b_eq)
    a_in, b_in = _as_2d(a_in, n), _as_1d(b_in)
    m_eq, m_in = a_eq.shape[0], a_in.shape[0]

    h = 0.5 * (h + h.T)
    hf = cho_factor(h, lower=True)

    ae, be, _ = _equilibrate(a_eq, b_eq) if m_eq else (a_eq, b_eq, np.ones(0))
    ai, bi, sc_in = _equilibrate(a_in, b_in) if m_in else (a_in, b_in, np.ones(0))

    # warm start: trust the caller's active set if the full KKT check passes
    if warm_active:
        guess = sorted(i for i in set(warm_active) if 0 <= i < m_in)
        sol = _kkt_finish(h, g, a_eq, b_eq, a_in, b_in, guess, iters=0)
        if sol is not None:
            return sol

    # equality-constrained optimum and null-space basis
    rank_flag = False
    if m_eq:
        u_svd, s_svd, vt = np.linalg.svd(ae, full_matrices=True)
        tol_rank = max(ae.shape) * np.finfo(float).eps * (s_svd[0] if s_svd.size else 1.0)
        rank = int(np.sum(s_svd > tol_rank))
        rank_flag = rank < m_eq
        x_ls = vt[:rank].T @ ((u_svd[:, :rank].T @ be) / s_svd[:rank])
        if rank_flag:
            res = ae @ x_ls - be
            worst = int(np.argmax(np.abs(res)))
            if abs(res[worst]) > 1e-9:
                return QpSolution(
                    x_ls, _obj(h, g, x_ls), float(np.abs(a_eq @ x_ls - b_eq).max()),
                    _viol(a_in, b_in, x_ls), (), np.zeros(m_eq), np.zeros(m_in),
                    0, INFEASIBLE, most_violated=worst, most_violated_kind="eq",
                    rank_deficient_eq=True,
                )
        z_basis = vt[rank:].T  # n x (n - rank), orthonormal
        if z_basis.shape[1] == 0:
            # fully determined by the equalities
            return _finalize(h, g, a_eq, b_eq, a_in, b_in, x_ls, [],
                             np.zeros(0), 0, rank_flag)
        hr = z_basis.T @ h @ z_basis
        hrf = cho_factor(0.5 * (hr + hr.T), lower=True)
        gr = z_basis.T @ (h @ x_ls + g)
        y = -cho_solve(hrf, gr)
        x0 = x_ls
    else:
        z_basis = np.eye(n)
        hrf = hf
        y = -cho_solve(hf, g)
        x0 = np.zeros(n)

    ar = ai @ z_basis if m_in else np.zeros((0, z_basis.shape[1]))
    br = bi - ai @ x0 if m_in else np.zeros(0)

    # dual active-set iteration on the reduced problem:
    # constraints kept in "c' y >= d" form with c = -ar[p], d = -br[p]
    act: list[int] = []
    nmat: list[np.ndarray] = []  # active normals c_k
    ginv_n: list[np.ndarray] = []  # Hr^-1 c_k
    u = np.zeros(0)
    iters = 0

    while True:
        if iters > max_iter:
            x = x0 + z_basis @ y
            mult = np.zeros(m_in)
            mult[act] = u / sc_in[act] if act else 0.0
            return QpSolution(
                x, _obj(h, g, x), float(np.abs(a_eq @ x - b_eq).max()) if m_eq else 0.0,
                _viol(a_in, b_in, x), tuple(sorted(act)), np.zeros(m_eq), mult,
                iters, MAX_ITER, rank_deficient_eq=rank_flag,
            )
        s = ar @ y - br if m_in else np.zeros(0)
        if m_in:
            s[act] = 0.0  # active rows are satisfied by construction
        if not m_in or s.max() <= _FEAS_TOL:
            return _finalize(h, g, a_eq, b_eq, a_in, b_in,
                             x0 + z_basis @ y, act, u / np.where(sc_in[act] > 0, sc_in[act], 1.0) if act else np.zeros(0),
                             iters, rank_flag)
        p = int(np.argmax(s))
        c_p = -ar[p]
        d_p = -br[p]
        uplus = 0.0

        while True:
            iters += 1
            if iters > max_iter:
                break
            ginv_c = cho_solve(hrf, c_p)
            if act:
                gn = np.column_stack(ginv_n)
                nm = np.column_stack(nmat)
                s_mat = nm.T @ gn
                r = np.linalg.solve(s_mat, nm.T @ ginv_c)
                z = ginv_c - gn @ r
            else:
                r = np.zeros(0)
                z = ginv_c

            t1, k1 = np.inf, -1
            for idx in range(len(act)):
                if r[idx] > _DUAL_TOL:
                    ratio = u[idx] / r[idx]
                    if ratio < t1 - 1e-14:
                        t1, k1 = ratio, idx

            ztc = float(z @ c_p)
            if ztc <= _STEP_TOL * max(1.0, float(ginv_c @ c_p)):
                if k1 < 0:
                    # dual ray: the problem has no feasible point
                    x = x0 + z_basis @ y
                    return QpSolution(
                        x, _obj(h, g, x),
                        float(np.abs(a_eq @ x - b_eq).max()) if m_eq else 0.0,
                        _viol(a_in, b_in, x), tuple(sorted(act)),
                        np.zeros(m_eq), np.zeros(m_in), iters, INFEASIBLE,
                        most_violated=p, most_violated_kind="in",
                        rank_deficient_eq=rank_flag,
                    )
                u = u - t1 * r
                uplus += t1
                _drop(act, nmat, ginv_n, k1)
                u = np.delete(u, k1)
                continue

            slack = float(c_p @ y) - d_p  # negative while violated
            t2 = -slack / ztc
            if t2 <= t1:
                y = y + t2 * z
                if len(act):
                    u = u - t2 * r
                uplus += t2
                act.append(p)
                nmat.append(c_p)
                ginv_n.append(cho_solve(hrf, c_p))
                u = np.append(u, uplus)
                break
            y = y + t1 * z
            u = u - t1 * r
            uplus += t1
            _drop(act, nmat, ginv_n, k1)
            u = np.delete(u, k1)


def _drop(act, nmat, ginv_n, k):
    del act[k], nmat[k], ginv_n[k]


def _obj(h, g, x) -> float:
    return float(0.5 * x @ h @ x + g @ x)


def _viol(a_in, b_in, x) -> float:
    if a_in.shape[0] == 0:
        return 0.0
    return float(np.maximum(a_in @ x - b_in, 0.0).max())


def _kkt_finish(h, g, a_eq, b_eq, a_in, b_in, active, iters):
    """Solve the KKT system for a fixed active set and accept it only if the
    full optimality conditions verify.  Returns None when the guess fails."""
    m_eq, m_in = a_eq.shape[0], a_in.shape[0]
    a_act = np.vstack([a_eq, a_in[active]]) if (m_eq or active) else np.zeros((0, h.shape[0]))
    b_act = np.concatenate([b_eq, b_in[active]])
    x, mult = _kkt_solve(h, g, a_act, b_act)
    if x is None:
        return None
    mu_act = mult[m_eq:]
    if mu_act.size and mu_act.min() < -1e-9:
        return None
    if _viol(a_in, b_in, x) > 1e-9:
        return None
    mult_in = np.zeros(m_in)
    mult_in[list(active)] = mu_act
    eq_res = float(np.abs(a_eq @ x - b_eq).max()) if m_eq else 0.0
    return QpSolution(x, _obj(h, g, x), eq_res, _viol(a_in, b_in, x),
                      tuple(sorted(active)), mult[:m_eq], mult_in, iters, OPTIMAL)


def _kkt_solve(h, g, a_act, b_act):
    """Saddle-point solve with one round of iterative refinement."""
    n, m = h.shape[0], a_act.shape[0]
    k = np.zeros((n + m, n + m))
    k[:n, :n] = h
    if m:
        k[:n, n:] = a_act.T
        k[n:, :n] = a_act
    rhs = np.concatenate([-g, b_act])
    try:
        sol = np.linalg.solve(k, rhs)
        sol += np.linalg.solve(k, rhs - k @ sol)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(k, rhs, rcond=None)
        res = rhs - k @ sol
        if np.abs(res).max() > 1e-8:
            return None, None
        fix, *_ = np.linalg.lstsq(k, res, rcond=None)
        sol = sol + fix
    return sol[:n], sol[n:]


def _finalize(h, g, a_eq, b_eq, a_in, b_in, x_raw, act, u_scaled, iters,
              rank_flag):
    """Polish the converged active set through the full KKT system."""
    m_eq, m_in = a_eq.shape[0], a_in.shape[0]
    active = sorted(act)
    sol = _kkt_finish(h, g, a_eq, b_eq, a_in, b_in, active, iters)
    if sol is not None:
        sol.iterations = iters
        sol.rank_deficient_eq = rank_flag
        return sol
    # rank-deficient or degenerate active set: report the iterate as-is
    mult_in = np.zeros(m_in)
    if act:
        mult_in[np.asarray(act)] = u_scaled
    grad = h @ x_raw + g + a_in.T @ mult_in
    if m_eq:
        mult_eq, *_ = np.linalg.lstsq(a_eq.T, -grad, rcond=None)
    else:
        mult_eq = np.zeros(0)
    eq_res = float(np.abs(a_eq @ x_raw - b_eq).max()) if m_eq else 0.0
    return QpSolution(x_raw, _obj(h, g, x_raw), eq_res, _viol(a_in, b_in, x_raw),
                      tuple(active), mult_eq, mult_in, iters, OPTIMAL,
                      rank_deficient_eq=rank_flag)
