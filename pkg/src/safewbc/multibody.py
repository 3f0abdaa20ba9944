"""Rigid-body models: kinematic trees with optional floating bases and
closed kinematic chains, plus the quantities every other layer consumes
(forward kinematics, geometric Jacobians, drift accelerations, the joint-space
inertia matrix and bias forces, center of mass, loop-closure residuals).

Conventions
-----------
* Generalized coordinates ``q`` stack base coordinates first, then joint
  coordinates, one scalar per primitive joint. Floating bases are expanded
  internally into chains of primitive prismatic/revolute joints through
  massless connector bodies:

  - ``planar-3dof``: translation y, translation z, rotation about x.
    The model lives in the world y-z plane; gravity is along -z.
  - ``spatial-6dof-euler-zyx``: translations x, y, z then rotations about
    z, y, x (yaw, pitch, roll). ``qdot`` holds coordinate rates.

* All positions, axes and Jacobians are expressed in the world frame.
  Frame Jacobians are 6 x n with linear rows on top and angular-velocity
  rows below.

* Models are immutable after construction and every evaluation function is
  pure in ``(model, q, qdot)``, so model instances can be shared freely
  across threads. Numpy arrays stored on the model are marked read-only.

* Loop closures are scalar rod constraints ``|p_a(q) - p_b(q)| - length``;
  the rod itself carries no inertia.

Equations of motion follow the standard Euler-Lagrange form
``M(q) qdd + bias(q, qd) = B u + J(q)^T lambda`` where ``bias`` collects
Coriolis, centrifugal and gravity terms and ``J`` stacks loop-closure rows
first, then contact rows. Nothing in this module ever inverts ``M``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import (
    GimbalLockError,
    ModelError,
    SingularClosureError,
    UnknownFrameError,
)

MODEL_FORMAT = "wbc-model/1"
GRAVITY_DEFAULT = (0.0, 0.0, -9.81)

# Gimbal guard: reject spatial-base pitch within this margin of +-pi/2.
PITCH_MARGIN = 0.1

BASE_FIXED = "fixed"
BASE_PLANAR = "planar-3dof"
BASE_SPATIAL = "spatial-6dof-euler-zyx"

# Expansion of floating joints into primitive (type, axis) stages.
_FLOATING_STAGES = {
    "planar-floating": (
        ("prismatic", (0.0, 1.0, 0.0)),
        ("prismatic", (0.0, 0.0, 1.0)),
        ("revolute", (1.0, 0.0, 0.0)),
    ),
    "spatial-floating": (
        ("prismatic", (1.0, 0.0, 0.0)),
        ("prismatic", (0.0, 1.0, 0.0)),
        ("prismatic", (0.0, 0.0, 1.0)),
        ("revolute", (0.0, 0.0, 1.0)),
        ("revolute", (0.0, 1.0, 0.0)),
        ("revolute", (1.0, 0.0, 0.0)),
    ),
}

_BASE_OF_FLOATING = {"planar-floating": BASE_PLANAR, "spatial-floating": BASE_SPATIAL}


def _ro(a: np.ndarray, dtype=float) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(a, dtype=dtype))
    out.setflags(write=False)
    return out


def hat(v: np.ndarray) -> np.ndarray:
    """Skew matrix such that hat(v) @ w == cross(v, w)."""
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
    )


def _cross(a, b) -> np.ndarray:
    # np.cross has high overhead on single 3-vectors; this path is hot
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


def _cross_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cross product on (..., 3) stacks without np.cross overhead."""
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


def rotation_about(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    c = math.cos(angle)
    s = math.sin(angle)
    x, y, z = axis
    k = 1.0 - c
    return np.array(
        [
            [c + x * x * k, x * y * k - z * s, x * z * k + y * s],
            [y * x * k + z * s, c + y * y * k, y * z * k - x * s],
            [z * x * k - y * s, z * y * k + x * s, c + z * z * k],
        ]
    )


def euler_zyx_to_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """R = Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    cz, sz = math.cos(yaw), math.sin(yaw)
    cy, sy = math.cos(pitch), math.sin(pitch)
    cx, sx = math.cos(roll), math.sin(roll)
    rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    return rz @ ry @ rx


def matrix_to_euler_zyx(r: np.ndarray) -> np.ndarray:
    """Inverse of euler_zyx_to_matrix, valid away from pitch = +-pi/2."""
    pitch = math.asin(max(-1.0, min(1.0, -r[2, 0])))
    yaw = math.atan2(r[1, 0], r[0, 0])
    roll = math.atan2(r[2, 1], r[2, 2])
    return np.array([yaw, pitch, roll])


@dataclass(frozen=True)
class _Node:
    """One primitive joint plus the body rigidly attached to it.

    Synthesized floating-base connector nodes carry zero mass.  ``axis`` and
    ``offset`` are expressed in the parent body frame; ``com`` and
    ``inertia`` (about the com) in this body's frame.
    """

    name: str
    parent: int  # index into model.nodes, -1 for world
    jtype: str  # "revolute" | "prismatic"
    axis: np.ndarray
    offset: np.ndarray
    mass: float
    com: np.ndarray
    inertia: np.ndarray
    actuated: bool
    torque_limit: float
    q_limits: tuple[float, float]
    synthetic: bool = False


@dataclass(frozen=True)
class Frame:
    """Named point (with optional fixed orientation offset) on a body."""

    name: str
    node: int
    offset: np.ndarray
    rotation: np.ndarray


@dataclass(frozen=True)
class LoopClosure:
    """Massless rod of fixed length joining two frames."""

    frame_a: str
    frame_b: str
    length: float


@dataclass
class State:
    """Generalized position/velocity snapshot at time t."""

    q: np.ndarray
    qd: np.ndarray
    t: float = 0.0

    def copy(self) -> "State":
        return State(self.q.copy(), self.qd.copy(), self.t)


@dataclass(frozen=True)
class DynamicsTerms:
    """Dynamics quantities evaluated at one state.

    ``J`` stacks loop-closure rows first, then contact rows; ``jdot_qdot``
    matches row for row.  ``M`` is symmetric positive definite away from
    singular configurations.
    """

    M: np.ndarray
    bias: np.ndarray
    B: np.ndarray
    J: np.ndarray
    jdot_qdot: np.ndarray


class RobotModel:
    """Immutable robot description. Use :func:`load_model` or
    :func:`model_from_dict` to construct one."""

    def __init__(
        self,
        name: str,
        nodes: tuple[_Node, ...],
        frames: dict[str, Frame],
        closures: tuple[LoopClosure, ...],
        base_type: str,
        gravity: np.ndarray,
        q0: np.ndarray,
    ):
        self.name = name
        self.nodes = nodes
        self.frames = frames
        self.closures = closures
        self.base_type = base_type
        self.gravity = _ro(gravity)
        self.nq = len(nodes)
        self.nb = {BASE_FIXED: 0, BASE_PLANAR: 3, BASE_SPATIAL: 6}[base_type]
        self.actuated_idx = _ro(
            np.array([i for i, nd in enumerate(nodes) if nd.actuated], dtype=int),
            dtype=int,
        )
        self.nu = len(self.actuated_idx)
        b = np.zeros((self.nq, self.nu))
        for col, row in enumerate(self.actuated_idx):
            b[row, col] = 1.0
        self.B = _ro(b)
        self.torque_limits = _ro(
            np.array([nodes[i].torque_limit for i in self.actuated_idx])
        )
        self.q_limits = _ro(np.array([nd.q_limits for nd in nodes]))
        self.q0 = _ro(q0)
        # Ancestor index lists: q indices that move each node, ascending.
        anc: list[np.ndarray] = []
        for i in range(self.nq):
            chain = []
            j = i
            while j >= 0:
                chain.append(j)
                j = nodes[j].parent
            anc.append(np.array(sorted(chain), dtype=int))
        self._ancestors = tuple(anc)
        self._massive = tuple(
            i for i, nd in enumerate(nodes) if nd.mass > 0.0
        )
        self.total_mass = float(sum(nodes[i].mass for i in self._massive))
        # Spatial bases park the pitch coordinate at base index 4.
        self._pitch_idx = 4 if base_type == BASE_SPATIAL else -1

        # Precomputed structure for the vectorized aggregate evaluations.
        anc_mask = np.zeros((self.nq, self.nq), dtype=bool)
        for i, chain in enumerate(self._ancestors):
            anc_mask[i, chain] = True
        self._anc_mask = anc_mask
        self._rev = np.array([nd.jtype == "revolute" for nd in nodes])
        self._massive_idx = np.array(self._massive, dtype=int)
        self._masses = np.array([nodes[i].mass for i in self._massive])
        inert = [i for i in self._massive if np.any(nodes[i].inertia)]
        self._inert_idx = np.array(inert, dtype=int)
        self._inert_rows = np.array(
            [self._massive.index(i) for i in inert], dtype=int
        )
        self._inertias = (
            np.stack([nodes[i].inertia for i in inert])
            if inert
            else np.zeros((0, 3, 3))
        )

    # -- queries -------------------------------------------------------

    def frame(self, name: str) -> Frame:
        try:
            return self.frames[name]
        except KeyError:
            raise UnknownFrameError(
                f"model '{self.name}' has no frame '{name}'"
            ) from None

    def node_index(self, name: str) -> int:
        for i, nd in enumerate(self.nodes):
            if nd.name == name:
                return i
        raise ModelError(f"model '{self.name}' has no joint/body '{name}'")

    def check_configuration(self, q: np.ndarray) -> None:
        """Reject states outside the supported charts (gimbal guard)."""
        if self._pitch_idx >= 0:
            pitch = float(q[self._pitch_idx])
            if abs(pitch) > math.pi / 2 - PITCH_MARGIN:
                raise GimbalLockError(
                    f"base pitch {pitch:.4f} rad within {PITCH_MARGIN} of +-pi/2"
                )

    def default_state(self) -> State:
        return State(self.q0.copy(), np.zeros(self.nq), 0.0)


# ---------------------------------------------------------------------------
# Model construction


def _parse_inertia(raw, where: str) -> np.ndarray:
    arr = np.asarray(raw, dtype=float)
    if arr.shape == (3,):
        arr = np.diag(arr)
    if arr.shape != (3, 3):
        raise ModelError(f"{where}: inertia must be a 3-vector (diagonal) or 3x3")
    if not np.allclose(arr, arr.T, atol=1e-12):
        raise ModelError(f"{where}: inertia must be symmetric")
    eigs = np.linalg.eigvalsh(arr)
    if eigs.min() < -1e-12:
        raise ModelError(f"{where}: inertia must be positive semidefinite")
    return arr


def model_from_dict(data: dict, name_hint: str = "<dict>") -> RobotModel:
    """Build a validated model from the declarative dictionary form."""
    if not isinstance(data, dict):
        raise ModelError(f"{name_hint}: model document must be a mapping")
    fmt = data.get("format")
    if fmt != MODEL_FORMAT:
        raise ModelError(
            f"{name_hint}: unsupported model format {fmt!r}, expected {MODEL_FORMAT!r}"
        )
    name = data.get("name", name_hint)
    gravity = np.asarray(data.get("gravity", GRAVITY_DEFAULT), dtype=float)
    if gravity.shape != (3,):
        raise ModelError(f"{name}: gravity must be a 3-vector")

    bodies = data.get("bodies")
    if not bodies:
        raise ModelError(f"{name}: at least one body is required")

    nodes: list[_Node] = []
    body_node: dict[str, int] = {}  # user body name -> terminal node index
    base_type = BASE_FIXED

    for bi, body in enumerate(bodies):
        where = f"{name}: bodies[{bi}]"
        try:
            bname = body["name"]
            joint = body["joint"]
            mass = float(body["mass"])
        except KeyError as exc:
            raise ModelError(f"{where}: missing key {exc}") from None
        if bname in body_node or bname == "world":
            raise ModelError(f"{where}: duplicate body name '{bname}'")
        if mass <= 0.0:
            raise ModelError(f"{where}: mass must be > 0")
        com = np.asarray(body.get("com", (0.0, 0.0, 0.0)), dtype=float)
        inertia = _parse_inertia(body.get("inertia", (0.0, 0.0, 0.0)), where)
        parent_name = body.get("parent", "world")
        if parent_name == "world":
            parent = -1
        else:
            if parent_name not in body_node:
                raise ModelError(
                    f"{where}: parent '{parent_name}' not declared earlier"
                )
            parent = body_node[parent_name]
        jtype = joint.get("type")
        offset = np.asarray(joint.get("offset", (0.0, 0.0, 0.0)), dtype=float)
        if jtype in _FLOATING_STAGES:
            if parent != -1:
                raise ModelError(f"{where}: floating joints must attach to world")
            if bi != 0:
                raise ModelError(f"{where}: the floating base must be the first body")
            base_type = _BASE_OF_FLOATING[jtype]
            stages = _FLOATING_STAGES[jtype]
            for si, (stype, saxis) in enumerate(stages):
                last = si == len(stages) - 1
                nodes.append(
                    _Node(
                        name=bname if last else f"{bname}._base{si}",
                        parent=parent,
                        jtype=stype,
                        axis=_ro(np.asarray(saxis)),
                        offset=_ro(offset if si == 0 else np.zeros(3)),
                        mass=mass if last else 0.0,
                        com=_ro(com if last else np.zeros(3)),
                        inertia=_ro(inertia if last else np.zeros((3, 3))),
                        actuated=False,
                        torque_limit=0.0,
                        q_limits=(-np.inf, np.inf),
                        synthetic=not last,
                    )
                )
                parent = len(nodes) - 1
            body_node[bname] = len(nodes) - 1
        elif jtype in ("revolute", "prismatic"):
            axis = np.asarray(joint.get("axis", (0.0, 0.0, 1.0)), dtype=float)
            nrm = np.linalg.norm(axis)
            if nrm < 1e-12:
                raise ModelError(f"{where}: joint axis must be nonzero")
            axis = axis / nrm
            limits = joint.get("limits", (-np.inf, np.inf))
            nodes.append(
                _Node(
                    name=bname,
                    parent=parent,
                    jtype=jtype,
                    axis=_ro(axis),
                    offset=_ro(offset),
                    mass=mass,
                    com=_ro(com),
                    inertia=_ro(inertia),
                    actuated=bool(joint.get("actuated", False)),
                    torque_limit=float(joint.get("torque_limit", np.inf)),
                    q_limits=(float(limits[0]), float(limits[1])),
                )
            )
            body_node[bname] = len(nodes) - 1
        else:
            raise ModelError(f"{where}: unknown joint type {jtype!r}")

    frames: dict[str, Frame] = {}
    for bname, idx in body_node.items():
        frames[bname] = Frame(bname, idx, _ro(np.zeros(3)), _ro(np.eye(3)))
    for fi, fr in enumerate(data.get("frames", ())):
        where = f"{name}: frames[{fi}]"
        fname = fr.get("name")
        body = fr.get("body")
        if not fname or body not in body_node:
            raise ModelError(f"{where}: needs 'name' and a declared 'body'")
        if fname in frames:
            raise ModelError(f"{where}: duplicate frame name '{fname}'")
        offset = np.asarray(fr.get("offset", (0.0, 0.0, 0.0)), dtype=float)
        rot = np.asarray(fr.get("rotation", np.eye(3)), dtype=float)
        if rot.shape != (3, 3) or not np.allclose(rot @ rot.T, np.eye(3), atol=1e-9):
            raise ModelError(f"{where}: rotation must be a 3x3 rotation matrix")
        frames[fname] = Frame(fname, body_node[body], _ro(offset), _ro(rot))

    closures = []
    for ci, lc in enumerate(data.get("loop_closures", ())):
        where = f"{name}: loop_closures[{ci}]"
        fa, fb = lc.get("frame_a"), lc.get("frame_b")
        if fa not in frames or fb not in frames:
            raise ModelError(f"{where}: frame_a/frame_b must name declared frames")
        length = float(lc.get("length", 0.0))
        if length <= 0.0:
            raise ModelError(f"{where}: length must be > 0")
        closures.append(LoopClosure(fa, fb, length))

    nq = len(nodes)
    q0 = np.asarray(data.get("q0", np.zeros(nq)), dtype=float)
    if q0.shape != (nq,):
        raise ModelError(
            f"{name}: q0 must have {nq} entries (floating bases expand to "
            f"{nq - sum(1 for nd in nodes if not nd.synthetic)} extra coordinates)"
        )

    model = RobotModel(
        name=name,
        nodes=tuple(nodes),
        frames=frames,
        closures=tuple(closures),
        base_type=base_type,
        gravity=gravity,
        q0=q0,
    )
    # A model that is singular at its reference pose is unusable everywhere.
    m0 = KinCache(model, q0).mass_matrix()
    if np.linalg.matrix_rank(m0, tol=1e-10) < nq:
        raise ModelError(f"{name}: inertia matrix singular at q0")
    return model


def load_model(path: str | Path) -> RobotModel:
    """Load a model file (YAML, ``wbc-model/1``)."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ModelError(f"{path}: {exc}") from None
    return model_from_dict(data, name_hint=path.stem)


def builtin_model_dir() -> Path:
    return Path(__file__).parent / "models"


def list_builtin_models() -> list[str]:
    return sorted(p.stem for p in builtin_model_dir().glob("*.yaml"))


def load_builtin_model(name: str) -> RobotModel:
    path = builtin_model_dir() / f"{name}.yaml"
    if not path.exists():
        raise ModelError(
            f"unknown builtin model '{name}' (have: {', '.join(list_builtin_models())})"
        )
    return load_model(path)


# ---------------------------------------------------------------------------
# Evaluation


class KinCache:
    """Position (and optionally velocity/drift) sweep over the tree.

    Building one costs a single forward pass; every query afterwards reuses
    the stored world-frame axes, origins, velocities and drift accelerations.
    The drift quantities are the accelerations obtained with qdd = 0, which
    is exactly the ``Jdot @ qd`` term of every constraint and task row.
    """

    def __init__(self, model: RobotModel, q: np.ndarray, qd: np.ndarray | None = None):
        self.model = model
        n = model.nq
        q = np.asarray(q, dtype=float)
        if q.shape != (n,):
            raise ModelError(f"q must have shape ({n},)")
        self.q = q
        nodes = model.nodes
        self.R = np.empty((n, 3, 3))
        self.o = np.empty((n, 3))
        self.axis_w = np.empty((n, 3))
        for i, nd in enumerate(nodes):
            if nd.parent < 0:
                rp = np.eye(3)
                op = np.zeros(3)
            else:
                rp = self.R[nd.parent]
                op = self.o[nd.parent]
            anchor = op + rp @ nd.offset
            a_w = rp @ nd.axis
            self.axis_w[i] = a_w
            if nd.jtype == "revolute":
                self.R[i] = rp @ rotation_about(nd.axis, q[i])
                self.o[i] = anchor
            else:
                self.R[i] = rp
                self.o[i] = anchor + a_w * q[i]
        self.com_w = np.empty((n, 3))
        for i, nd in enumerate(nodes):
            self.com_w[i] = self.o[i] + self.R[i] @ nd.com

        self.qd = None
        if qd is not None:
            qd = np.asarray(qd, dtype=float)
            if qd.shape != (n,):
                raise ModelError(f"qd must have shape ({n},)")
            self.qd = qd
            self.w = np.zeros((n, 3))  # body angular velocity
            self.vo = np.zeros((n, 3))  # velocity of body frame origin
            self.dw = np.zeros((n, 3))  # drift angular acceleration
            self.ao = np.zeros((n, 3))  # drift linear acceleration of origin
            for i, nd in enumerate(nodes):
                if nd.parent < 0:
                    wp = np.zeros(3)
                    vop = np.zeros(3)
                    dwp = np.zeros(3)
                    aop = np.zeros(3)
                    op = np.zeros(3)
                else:
                    p = nd.parent
                    wp, vop, dwp, aop, op = (
                        self.w[p],
                        self.vo[p],
                        self.dw[p],
                        self.ao[p],
                        self.o[p],
                    )
                d = self.o[i] - op
                v_pt = vop + _cross(wp, d)
                a_pt = aop + _cross(dwp, d) + _cross(wp, _cross(wp, d))
                a_w = self.axis_w[i]
                if nd.jtype == "revolute":
                    self.w[i] = wp + a_w * qd[i]
                    self.vo[i] = v_pt
                    self.dw[i] = dwp + _cross(wp, a_w) * qd[i]
                    self.ao[i] = a_pt
                else:
                    self.w[i] = wp
                    self.vo[i] = v_pt + a_w * qd[i]
                    self.dw[i] = dwp
                    self.ao[i] = a_pt + 2.0 * qd[i] * _cross(wp, a_w)
        self._mass_matrix: np.ndarray | None = None
        self._bias: np.ndarray | None = None
        self._tensors: tuple | None = None

    def _body_tensors(self):
        """Per-massive-body Jacobian tensors and world inertias, all at once.

        Returns (jv, jw, iw) with jv[b, j] the com-velocity column of joint j
        for massive body b (zero when j is not an ancestor), jw likewise for
        angular velocity, and iw the world-frame rotational inertias of the
        bodies listed in model._inert_idx.
        """
        if self._tensors is None:
            m = self.model
            mi = m._massive_idx
            arms = self.com_w[mi][:, None, :] - self.o[None, :, :]
            crossed = _cross_rows(self.axis_w[None, :, :], arms)
            cols = np.where(
                m._rev[None, :, None], crossed, self.axis_w[None, :, :]
            )
            jv = cols * m._anc_mask[mi][:, :, None]
            jw = (
                self.axis_w[None, :, :]
                * (m._anc_mask[mi] & m._rev[None, :])[:, :, None]
            )
            if len(m._inert_idx):
                r = self.R[m._inert_idx]
                iw = r @ m._inertias @ r.transpose(0, 2, 1)
            else:
                iw = np.zeros((0, 3, 3))
            self._tensors = (jv, jw, iw)
        return self._tensors

    def _com_kinematics(self):
        """Velocity and drift acceleration of every massive body's com."""
        self._require_vel()
        m = self.model
        mi = m._massive_idx
        r = self.com_w[mi] - self.o[mi]
        w = self.w[mi]
        v = self.vo[mi] + _cross_rows(w, r)
        a = (
            self.ao[mi]
            + _cross_rows(self.dw[mi], r)
            + _cross_rows(w, _cross_rows(w, r))
        )
        return v, a

    # -- kinematic queries --------------------------------------------

    def _resolve(self, frame: str | Frame) -> Frame:
        if isinstance(frame, Frame):
            return frame
        return self.model.frame(frame)

    def frame_pose(self, frame: str | Frame) -> tuple[np.ndarray, np.ndarray]:
        fr = self._resolve(frame)
        r = self.R[fr.node]
        return self.o[fr.node] + r @ fr.offset, r @ fr.rotation

    def point_jacobian(self, node: int, point_w: np.ndarray) -> np.ndarray:
        """3 x n Jacobian of a world point rigidly attached to a node."""
        n = self.model.nq
        jac = np.zeros((3, n))
        idx = self.model._ancestors[node]
        axes = self.axis_w[idx]
        rev = np.array([self.model.nodes[j].jtype == "revolute" for j in idx])
        arms = point_w[None, :] - self.o[idx]
        cols = np.where(rev[:, None], _cross_rows(axes, arms), axes)
        jac[:, idx] = cols.T
        return jac

    def angular_jacobian(self, node: int) -> np.ndarray:
        n = self.model.nq
        jac = np.zeros((3, n))
        idx = self.model._ancestors[node]
        for j in idx:
            if self.model.nodes[j].jtype == "revolute":
                jac[:, j] = self.axis_w[j]
        return jac

    def frame_jacobian(self, frame: str | Frame) -> np.ndarray:
        """6 x n, linear rows then angular-velocity rows."""
        fr = self._resolve(frame)
        p, _ = self.frame_pose(fr)
        return np.vstack([self.point_jacobian(fr.node, p), self.angular_jacobian(fr.node)])

    def _require_vel(self):
        if self.qd is None:
            raise ModelError("velocity-level query on a position-only cache")

    def point_velocity(self, node: int, point_w: np.ndarray) -> np.ndarray:
        self._require_vel()
        r = point_w - self.o[node]
        return self.vo[node] + _cross(self.w[node], r)

    def point_drift_acc(self, node: int, point_w: np.ndarray) -> np.ndarray:
        """Acceleration of a body-fixed point with qdd = 0 (= Jdot @ qd)."""
        self._require_vel()
        r = point_w - self.o[node]
        return (
            self.ao[node]
            + _cross(self.dw[node], r)
            + _cross(self.w[node], _cross(self.w[node], r))
        )

    def frame_drift(self, frame: str | Frame) -> np.ndarray:
        """6-vector Jdot @ qd for the frame, rows matching frame_jacobian."""
        fr = self._resolve(frame)
        p, _ = self.frame_pose(fr)
        return np.concatenate([self.point_drift_acc(fr.node, p), self.dw[fr.node]])

    def frame_velocity(self, frame: str | Frame) -> np.ndarray:
        fr = self._resolve(frame)
        p, _ = self.frame_pose(fr)
        self._require_vel()
        return np.concatenate([self.point_velocity(fr.node, p), self.w[fr.node]])

    # -- aggregate quantities ------------------------------------------

    def com(self) -> np.ndarray:
        m = self.model
        return m._masses @ self.com_w[m._massive_idx] / m.total_mass

    def com_jacobian(self) -> np.ndarray:
        m = self.model
        jv, _, _ = self._body_tensors()
        return np.einsum("b,bja->aj", m._masses, jv) / m.total_mass

    def com_velocity(self) -> np.ndarray:
        v, _ = self._com_kinematics()
        m = self.model
        return m._masses @ v / m.total_mass

    def com_drift_acc(self) -> np.ndarray:
        _, a = self._com_kinematics()
        m = self.model
        return m._masses @ a / m.total_mass

    def mass_matrix(self) -> np.ndarray:
        if self._mass_matrix is None:
            m = self.model
            jv, jw, iw = self._body_tensors()
            out = np.einsum("b,bja,bka->jk", m._masses, jv, jv)
            if len(m._inert_idx):
                jw_i = jw[m._inert_rows]
                out = out + np.einsum("bja,bac,bkc->jk", jw_i, iw, jw_i)
            self._mass_matrix = 0.5 * (out + out.T)
        return self._mass_matrix

    def bias_forces(self) -> np.ndarray:
        """Coriolis + centrifugal + gravity generalized forces."""
        if self._bias is None:
            m = self.model
            jv, jw, iw = self._body_tensors()
            _, a_com = self._com_kinematics()
            f = m._masses[:, None] * (a_com - m.gravity[None, :])
            out = np.einsum("bja,ba->j", jv, f)
            if len(m._inert_idx):
                rows = m._inert_rows
                w_i = self.w[m._inert_idx]
                iw_w = np.einsum("bac,bc->ba", iw, w_i)
                n_mom = (
                    np.einsum("bac,bc->ba", iw, self.dw[m._inert_idx])
                    + _cross_rows(w_i, iw_w)
                )
                out = out + np.einsum("bja,ba->j", jw[rows], n_mom)
            self._bias = out
        return self._bias

    def kinetic_energy(self) -> float:
        m = self.model
        v, _ = self._com_kinematics()
        ke = 0.5 * float(m._masses @ np.einsum("ba,ba->b", v, v))
        if len(m._inert_idx):
            _, _, iw = self._body_tensors()
            w_i = self.w[m._inert_idx]
            ke += 0.5 * float(np.einsum("ba,bac,bc->", w_i, iw, w_i))
        return ke

    def potential_energy(self) -> float:
        m = self.model
        return -float(
            (m._masses * (self.com_w[m._massive_idx] @ m.gravity)).sum()
        )

    def angular_momentum(self, point) -> np.ndarray:
        """Total angular momentum about a fixed world point."""
        self._require_vel()
        m = self.model
        v, _ = self._com_kinematics()
        r = self.com_w[m._massive_idx] - np.asarray(point, dtype=float)[None, :]
        out = np.einsum("b,ba->a", m._masses, _cross_rows(r, v))
        if len(m._inert_idx):
            _, _, iw = self._body_tensors()
            out = out + np.einsum("bac,bc->a", iw, self.w[m._inert_idx])
        return out

    # -- loop closures --------------------------------------------------

    def _closure_geometry(self, lc: LoopClosure):
        pa, _ = self.frame_pose(lc.frame_a)
        pb, _ = self.frame_pose(lc.frame_b)
        d = pa - pb
        dist = float(np.linalg.norm(d))
        if dist < 1e-9:
            raise SingularClosureError(
                f"closure {lc.frame_a}-{lc.frame_b}: anchors coincide"
            )
        return pa, pb, d, dist

    def loop_residuals(self) -> np.ndarray:
        out = np.empty(len(self.model.closures))
        for k, lc in enumerate(self.model.closures):
            _, _, _, dist = self._closure_geometry(lc)
            out[k] = dist - lc.length
        return out

    def loop_jacobian(self) -> np.ndarray:
        m = self.model
        out = np.zeros((len(m.closures), m.nq))
        for k, lc in enumerate(m.closures):
            pa, pb, d, dist = self._closure_geometry(lc)
            u = d / dist
            fa, fb = m.frame(lc.frame_a), m.frame(lc.frame_b)
            ja = self.point_jacobian(fa.node, pa)
            jb = self.point_jacobian(fb.node, pb)
            out[k] = u @ (ja - jb)
        return out

    def loop_drift(self) -> np.ndarray:
        """Jdot @ qd rows for the closures."""
        self._require_vel()
        m = self.model
        out = np.empty(len(m.closures))
        for k, lc in enumerate(m.closures):
            pa, pb, d, dist = self._closure_geometry(lc)
            u = d / dist
            fa, fb = m.frame(lc.frame_a), m.frame(lc.frame_b)
            wvel = self.point_velocity(fa.node, pa) - self.point_velocity(fb.node, pb)
            bacc = self.point_drift_acc(fa.node, pa) - self.point_drift_acc(fb.node, pb)
            out[k] = float(u @ bacc) + (float(wvel @ wvel) - float(u @ wvel) ** 2) / dist
        return out


# ---------------------------------------------------------------------------
# Functional wrappers (one-shot evaluations; controller and simulator reuse
# KinCache directly to avoid repeated sweeps within a tick).


def forward_kinematics(model: RobotModel, q, frame: str):
    """World pose (position, rotation matrix) of a named frame."""
    return KinCache(model, q).frame_pose(frame)


def frame_jacobian(model: RobotModel, q, frame: str) -> np.ndarray:
    return KinCache(model, q).frame_jacobian(frame)


def jdot_qdot(model: RobotModel, q, qd, frame: str) -> np.ndarray:
    return KinCache(model, q, qd).frame_drift(frame)


def mass_matrix(model: RobotModel, q) -> np.ndarray:
    return KinCache(model, q).mass_matrix()


def bias_forces(model: RobotModel, q, qd) -> np.ndarray:
    return KinCache(model, q, qd).bias_forces()


def com_position(model: RobotModel, q) -> np.ndarray:
    return KinCache(model, q).com()


def com_jacobian(model: RobotModel, q) -> np.ndarray:
    return KinCache(model, q).com_jacobian()


def loop_residual(model: RobotModel, q) -> np.ndarray:
    return KinCache(model, q).loop_residuals()


def loop_jacobian(model: RobotModel, q) -> np.ndarray:
    return KinCache(model, q).loop_jacobian()


def total_energy(model: RobotModel, q, qd) -> float:
    c = KinCache(model, q, qd)
    return c.kinetic_energy() + c.potential_energy()
