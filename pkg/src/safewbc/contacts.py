"""Contact wrench geometry: friction pyramids, wrench aggregation, ZMP polygon.

Contact wrench variables are expressed in world axes (flat ground, normal +z)
and act at the contact frame origin.  The stacked wrench ordering per contact
is WRENCH_BASIS; point contacts carry only the three force components.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContactLossError, ModelError, NoSupportError
from .multibody import KinCache, RobotModel

WRENCH_BASIS = ("fx", "fy", "fz", "mx", "my", "mz")

# minimum normal force (N): keeps the QP strictly inside the friction cone tip
EPS_NORMAL = 1.0
ZMP_SHRINK_DEFAULT = 0.01

POINT_3DOF = "point-3dof"
SURFACE_6DOF = "surface-6dof"

_GEOM_TOL = 1e-9


@dataclass(frozen=True)
class ContactSpec:
    """A contact site: which frame touches the ground and with what geometry."""

    frame: str
    kind: str = POINT_3DOF
    mu: float = 0.6
    gamma: float = 0.0
    half_extents: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in (POINT_3DOF, SURFACE_6DOF):
            raise ModelError(f"unknown contact kind {self.kind!r}")
        if not self.mu > 0:
            raise ModelError("contact friction mu must be positive")
        if self.gamma < 0:
            raise ModelError("torsional friction gamma must be nonnegative")
        if self.kind == SURFACE_6DOF:
            if self.half_extents is None:
                raise ModelError("surface contact needs rectangle half_extents")
            hx, hy = self.half_extents
            if not (hx > 0 and hy > 0):
                raise ModelError("surface half_extents must be positive")

    @property
    def dim(self) -> int:
        return 3 if self.kind == POINT_3DOF else 6


def stack_dim(contacts) -> int:
    return sum(c.dim for c in contacts)


def stack_offsets(contacts) -> list[int]:
    """Starting column of each contact's wrench block in the stacked vector."""
    offs, k = [], 0
    for c in contacts:
        offs.append(k)
        k += c.dim
    return offs


def friction_rows(contact: ContactSpec, eps_normal: float = EPS_NORMAL):
    """Inequality rows A lam_c <= b on one contact's wrench block.

    Pyramid: |fx| <= (mu/sqrt2) fz, |fy| <= (mu/sqrt2) fz; unilateral
    fz >= eps_normal; surface contacts add the soft-finger |mz| <= gamma fz.
    """
    k = contact.mu / math.sqrt(2.0)
    d = contact.dim
    rows = [
        [1.0, 0.0, -k] + [0.0] * (d - 3),
        [-1.0, 0.0, -k] + [0.0] * (d - 3),
        [0.0, 1.0, -k] + [0.0] * (d - 3),
        [0.0, -1.0, -k] + [0.0] * (d - 3),
        [0.0, 0.0, -1.0] + [0.0] * (d - 3),
    ]
    b = [0.0, 0.0, 0.0, 0.0, -eps_normal]
    if contact.kind == SURFACE_6DOF:
        rows.append([0.0, 0.0, -contact.gamma, 0.0, 0.0, 1.0])
        rows.append([0.0, 0.0, -contact.gamma, 0.0, 0.0, -1.0])
        b += [0.0, 0.0]
    return np.array(rows), np.array(b)


def stacked_friction_rows(contacts, eps_normal: float = EPS_NORMAL):
    """Friction rows of every contact, placed in the stacked wrench vector."""
    n = stack_dim(contacts)
    blocks_a, blocks_b = [], []
    for c, off in zip(contacts, stack_offsets(contacts)):
        a_c, b_c = friction_rows(c, eps_normal)
        a = np.zeros((a_c.shape[0], n))
        a[:, off : off + c.dim] = a_c
        blocks_a.append(a)
        blocks_b.append(b_c)
    if not blocks_a:
        return np.zeros((0, n)), np.zeros(0)
    return np.vstack(blocks_a), np.concatenate(blocks_b)


def contact_jacobian(cache: KinCache, contact: ContactSpec) -> np.ndarray:
    """Rows mapping qdot to the contact frame velocity (linear, + angular for
    surface contacts), world axes."""
    j = cache.frame_jacobian(contact.frame)
    return j[:3] if contact.kind == POINT_3DOF else j


def contact_drift(cache: KinCache, contact: ContactSpec) -> np.ndarray:
    d = cache.frame_drift(contact.frame)
    return d[:3] if contact.kind == POINT_3DOF else d


def aggregation_matrix(model: RobotModel, q, contacts) -> np.ndarray:
    """Linear map G with lam_world = G lam_stacked, the net wrench about the
    world origin (force rows 0:3, moment rows 3:6)."""
    cache = q if isinstance(q, KinCache) else KinCache(model, q)
    g = np.zeros((6, stack_dim(contacts)))
    for c, off in zip(contacts, stack_offsets(contacts)):
        p, _ = cache.frame_pose(c.frame)
        phat = np.array(
            [[0.0, -p[2], p[1]], [p[2], 0.0, -p[0]], [-p[1], p[0], 0.0]]
        )
        g[0:3, off : off + 3] = np.eye(3)
        g[3:6, off : off + 3] = phat
        if c.kind == SURFACE_6DOF:
            g[3:6, off + 3 : off + 6] = np.eye(3)
    return g


def aggregate_wrench(model: RobotModel, q, contacts, lam_stacked) -> np.ndarray:
    lam_stacked = np.asarray(lam_stacked, dtype=float)
    g = aggregation_matrix(model, q, contacts)
    if lam_stacked.shape != (g.shape[1],):
        raise ModelError(
            f"stacked wrench has {lam_stacked.shape} entries, expected {g.shape[1]}"
        )
    return g @ lam_stacked


def zmp(lam_world, eps_normal: float = EPS_NORMAL) -> tuple[float, float]:
    """Zero-moment point (p_x, p_y) of a world wrench about the origin:
    p_x = m_y / f_z, p_y = -m_x / f_z."""
    lam_world = np.asarray(lam_world, dtype=float)
    fz = lam_world[2]
    if fz < eps_normal:
        raise ContactLossError(f"normal force {fz:.3g} N below {eps_normal} N")
    return float(lam_world[4] / fz), float(-lam_world[3] / fz)


POLYGON = "polygon"
SEGMENT = "segment"
POINT = "point"


@dataclass(frozen=True)
class SupportPolygon:
    """Convex support region as half-planes a . p <= b with unit normals."""

    kind: str
    halfplanes: np.ndarray  # (k, 3) rows of (a_x, a_y, b)
    vertices: np.ndarray  # (m, 2) hull vertices, counter-clockwise

    @property
    def is_degenerate(self) -> bool:
        return self.kind == POINT

    def margin(self, point, shrink: float = 0.0) -> float:
        """Smallest signed distance to the (shrunken) boundary; > 0 inside."""
        if self.halfplanes.shape[0] == 0:
            return 0.0
        point = np.asarray(point, dtype=float)
        return float(
            np.min(self.halfplanes[:, 2] - shrink - self.halfplanes[:, :2] @ point)
        )


def _hull_ccw(points: np.ndarray) -> np.ndarray:
    """Monotone-chain convex hull, counter-clockwise, no repeated endpoint."""
    pts = sorted(map(tuple, points))
    if len(pts) <= 2:
        return np.array(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= _GEOM_TOL:
            lower.pop()
        lower.append(p)
    upper = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= _GEOM_TOL:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def contact_vertices(cache: KinCache, contact: ContactSpec) -> np.ndarray:
    """Ground-plane projections of a contact's extreme points."""
    p, r = cache.frame_pose(contact.frame)
    if contact.kind == POINT_3DOF:
        return p[:2].reshape(1, 2)
    hx, hy = contact.half_extents
    corners = np.array(
        [[hx, hy, 0.0], [hx, -hy, 0.0], [-hx, -hy, 0.0], [-hx, hy, 0.0]]
    )
    return (p[None, :] + corners @ r.T)[:, :2]


def support_polygon(model: RobotModel, q, contacts) -> SupportPolygon:
    """Convex hull of contact vertices projected onto the ground plane.

    Collinear contact points reduce to a segment (end-cap half-planes only,
    containment along the support line); a single point has no half-planes.
    """
    if not contacts:
        raise NoSupportError("no active contacts")
    cache = q if isinstance(q, KinCache) else KinCache(model, q)
    pts = np.vstack([contact_vertices(cache, c) for c in contacts])

    # collapse duplicates before classifying the region
    uniq: list[np.ndarray] = []
    for p in pts:
        if not any(np.hypot(*(p - u)) < _GEOM_TOL for u in uniq):
            uniq.append(p)
    pts = np.array(uniq)

    if len(pts) == 1:
        return SupportPolygon(POINT, np.zeros((0, 3)), pts)

    centered = pts - pts.mean(axis=0)
    _, sv, vt = np.linalg.svd(centered, full_matrices=False)
    if len(pts) == 2 or sv[-1] < 1e-7:
        u = vt[0]
        s = pts @ u
        lo, hi = s.min(), s.max()
        halfplanes = np.array([[u[0], u[1], hi], [-u[0], -u[1], -lo]])
        ends = np.array([pts[np.argmin(s)], pts[np.argmax(s)]])
        return SupportPolygon(SEGMENT, halfplanes, ends)

    hull = _hull_ccw(pts)
    rows = []
    for i in range(len(hull)):
        v0, v1 = hull[i], hull[(i + 1) % len(hull)]
        e = v1 - v0
        n = np.array([e[1], -e[0]]) / np.hypot(*e)
        rows.append([n[0], n[1], float(n @ v0)])
    return SupportPolygon(POLYGON, np.array(rows), hull)


def zmp_rows(model: RobotModel, q, contacts, polygon: SupportPolygon,
             shrink: float = ZMP_SHRINK_DEFAULT):
    """ZMP-in-polygon as rows on the stacked contact wrench: for each half-plane
    a . p <= b, a_x m_y - a_y m_x - (b - shrink) f_z <= 0 through the
    aggregation map.  Degenerate point support yields no rows."""
    g = aggregation_matrix(model, q, contacts)
    if polygon.is_degenerate:
        return np.zeros((0, g.shape[1])), np.zeros(0)
    rows = []
    for ax, ay, b in polygon.halfplanes:
        rows.append(ax * g[4] - ay * g[3] - (b - shrink) * g[2])
    return np.array(rows), np.zeros(len(rows))
