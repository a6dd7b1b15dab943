"""Two-view geometry: pose parametrization, angular residual, feasibility arcs.

The world frame is anchored to the two cameras: the first camera sits at the
origin and the second camera's center lies on the +z axis at unit distance.
A relative pose (R, t) maps a point ``p`` expressed in the second camera frame
to ``R @ p + t`` in the first camera frame, with ``t`` a unit direction.

Poses are parametrized by a z-axis angle ``phi`` and two planar rotation
vectors ``v1``, ``v2`` inside the closed disk of radius pi:

    R1 = Exp(phi * e3) @ Exp(v1),   R2 = Exp(v2),
    R  = R1.T @ R2,                 t  = R1.T @ e3.

Because a shared z-rotation of both cameras leaves (R, t) unchanged, ``phi``
can be optimized analytically per (v1, v2), which is what the grid search in
:mod:`harmonicpose.search` exploits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

E3 = np.array([0.0, 0.0, 1.0])

TWO_PI = 2.0 * math.pi

# Default bisection tolerance for the angular residual.
RESIDUAL_TOL = 1e-10

# Offset added to the bisection upper bound; the half-width is flat (= pi)
# above theta1, so the bracket must reach slightly past it.
_BISECT_MARGIN = 1e-8

_ORTHO_TOL = 1e-9


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix such that ``hat(v) @ u == cross(v, u)``."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def exp_so3(v: np.ndarray) -> np.ndarray:
    """Rodrigues map from a rotation vector to a rotation matrix."""
    v = np.asarray(v, dtype=float)
    angle = float(np.linalg.norm(v))
    K = hat(v)
    if angle < 1e-8:
        # Second-order series; exact enough well below float precision.
        return np.eye(3) + K + 0.5 * (K @ K)
    a = math.sin(angle) / angle
    b = (1.0 - math.cos(angle)) / (angle * angle)
    return np.eye(3) + a * K + b * (K @ K)


def log_so3(R: np.ndarray) -> np.ndarray:
    """Rotation vector of ``R``; the inverse of :func:`exp_so3` for angle < pi.

    At an angle numerically equal to pi the axis sign is ambiguous; a fixed
    sign convention is applied (callers detect the boundary via
    :func:`rotation_angle`).
    """
    tr = float(np.trace(R))
    c = (tr - 1.0) / 2.0
    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = float(np.linalg.norm(w))  # sin(angle), from the skew part
    angle = math.atan2(s, c)
    if s >= 1e-6:
        return w * (angle / s)
    if c > 0.0:
        # Tiny angle: w equals v up to O(angle^3).
        return w * (1.0 + s * s / 6.0)
    # Near pi the skew part degenerates; the symmetrized matrix
    # ((R + R^T)/2 + I)/2 ~= axis axis^T recovers the axis stably.
    A = 0.25 * (R + R.T) + 0.5 * np.eye(3)
    k = int(np.argmax(np.diag(A)))
    axis = A[:, k] / math.sqrt(max(A[k, k], 1e-18))
    axis = axis / np.linalg.norm(axis)
    dot = float(axis @ w)
    if abs(dot) > 1e-14:
        axis = axis * math.copysign(1.0, dot)
    else:
        # Exactly at pi both signs are valid; pick the first significant
        # component positive so results are reproducible.
        for comp in axis:
            if abs(comp) > 1e-6:
                if comp < 0.0:
                    axis = -axis
                break
    return angle * axis


def rotation_angle(R: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in [0, pi]."""
    c = min(1.0, max(-1.0, (float(np.trace(R)) - 1.0) / 2.0))
    return math.acos(c)


def rotation_geodesic(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Geodesic distance between two rotations.

    Evaluated through the chordal norm (||Ra^T Rb - I||_F = 2*sqrt(2)*
    sin(angle/2)), which stays well conditioned for tiny angles where the
    arccos-of-trace form loses half the significant digits.
    """
    E = Ra.T @ Rb
    chord = float(np.linalg.norm(E - np.eye(3))) / (2.0 * math.sqrt(2.0))
    return 2.0 * math.asin(min(1.0, chord))


def angle_between(u: np.ndarray, v: np.ndarray) -> float:
    """Angle between two nonzero vectors, in [0, pi]."""
    cross = float(np.linalg.norm(np.cross(u, v)))
    dot = float(np.dot(u, v))
    return math.atan2(cross, dot)


def circular_distance(a: float, b: float) -> float:
    """Distance between two angles on the circle, in [0, pi]."""
    return abs((a - b + math.pi) % TWO_PI - math.pi)


@dataclass(frozen=True)
class RelativePose:
    """Rotation plus unit translation direction between two cameras."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-6:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValueError("rotation determinant is not +1")
        nt = float(np.linalg.norm(t))
        if abs(nt - 1.0) > 1e-6:
            raise ValueError("translation is not unit length")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t / nt)


@dataclass(frozen=True)
class PoseParams:
    """(phi, v1, v2) coordinates of a relative pose.

    ``boundary`` marks measure-zero configurations (t antipodal to e3, or
    ``|v2|`` at the disk rim) where the coordinates were fixed by convention
    and the round trip may lose precision.
    """

    phi: float
    v1: np.ndarray
    v2: np.ndarray
    boundary: bool = False

    def __post_init__(self):
        v1 = np.asarray(self.v1, dtype=float).reshape(2)
        v2 = np.asarray(self.v2, dtype=float).reshape(2)
        if np.linalg.norm(v1) > math.pi + 1e-9 or np.linalg.norm(v2) > math.pi + 1e-9:
            raise ValueError("rotation vector outside the radius-pi disk")
        object.__setattr__(self, "v1", v1)
        object.__setattr__(self, "v2", v2)
        object.__setattr__(self, "phi", float(self.phi) % TWO_PI)


@dataclass(frozen=True)
class PolarCoords:
    """Polar angle from +z and azimuth of a unit vector."""

    theta: float
    phi_az: float

    def to_vector(self) -> np.ndarray:
        st = math.sin(self.theta)
        return np.array([
            st * math.cos(self.phi_az),
            st * math.sin(self.phi_az),
            math.cos(self.theta),
        ])


def _embed(v: np.ndarray) -> np.ndarray:
    return np.array([v[0], v[1], 0.0])


def _v1_from_translation(t: np.ndarray) -> tuple[np.ndarray, bool]:
    """Planar rotation vector v1 with Exp(v1).T @ e3 == t.

    Returns the 2D vector and a boundary flag (t numerically antipodal
    to e3, where the axis is chosen by convention).
    """
    sin_a = math.hypot(t[0], t[1])
    alpha = math.atan2(sin_a, t[2])
    if sin_a < 1e-12:
        if t[2] > 0.0:
            return np.zeros(2), False
        return np.array([math.pi, 0.0]), True
    # Axis (t x e3) normalized; alpha * axis rotates e3 onto t through
    # the transpose.
    axis = np.array([t[1], -t[0]]) / sin_a
    return alpha * axis, alpha > math.pi - 1e-9


def params_to_pose(params: PoseParams) -> RelativePose:
    """Compose the (phi, v1, v2) coordinates into a relative pose."""
    Rbar1 = exp_so3(_embed(params.v1))
    R2 = exp_so3(_embed(params.v2))
    Rz = exp_so3(np.array([0.0, 0.0, params.phi]))
    R1 = Rz @ Rbar1
    return RelativePose(R1.T @ R2, Rbar1.T @ E3)


def pose_to_params(pose: RelativePose) -> PoseParams:
    """Recover the (phi, v1, v2) coordinates of a relative pose.

    The decomposition is unique away from a measure-zero boundary set;
    there a convention is applied and ``boundary`` is set on the result.
    """
    v1, boundary = _v1_from_translation(pose.translation)
    Rbar1 = exp_so3(_embed(v1))
    B = Rbar1 @ pose.rotation
    num = B[0, 1] - B[1, 0]
    den = B[0, 0] + B[1, 1]
    if abs(num) < 1e-12 and abs(den) < 1e-12:
        # Any phi keeps v2 planar; the planar angle ends up at pi.
        phi = 0.0
        boundary = True
    else:
        # Of the two roots that keep Log(R2) planar, this one maximizes the
        # in-plane trace and therefore keeps |v2| < pi; the other root lands
        # on the disk rim.
        phi = math.atan2(num, den) % TWO_PI
    R2 = exp_so3(np.array([0.0, 0.0, phi])) @ B
    v2_full = log_so3(R2)
    if np.linalg.norm(v2_full) > math.pi - 1e-9:
        boundary = True
    return PoseParams(phi=phi, v1=v1, v2=v2_full[:2], boundary=boundary)


def polar_coords(R1: np.ndarray, R2: np.ndarray, x: np.ndarray,
                 y: np.ndarray) -> tuple[PolarCoords, PolarCoords]:
    """Polar coordinates of R1 @ x and R2 @ y in the camera-anchored frame.

    The polar angle of R1 @ x does not depend on the z-rotation part of R1,
    which is what allows searching phi analytically.
    """
    return _polar_of(R1 @ x), _polar_of(R2 @ y)


def _polar_of(u: np.ndarray) -> PolarCoords:
    theta = math.acos(min(1.0, max(-1.0, float(u[2]))))
    if math.hypot(u[0], u[1]) < 1e-15:
        return PolarCoords(theta, 0.0)
    return PolarCoords(theta, math.atan2(u[1], u[0]) % TWO_PI)


def omega(epsilon: float, theta1: float, theta2: float) -> float:
    """Half-width of the feasible azimuth gap for one association.

    A pair with polar angles (theta1, theta2) admits the pose (given the
    polar gate ``theta1 - theta2 <= 2 * epsilon``) exactly when the azimuth
    difference is at most this value.  Whenever the closed form is undefined
    the gap is unconstrained and pi is returned.
    """
    if theta1 < theta2:
        s1 = math.sin(theta1)
        s2 = math.sin(theta2)
        se = math.sin(epsilon)
        if s1 <= 0.0 or s2 <= 0.0:
            return math.pi
        a1 = se / s1
        a2 = se / s2
        if a1 > 1.0 or a2 > 1.0:
            return math.pi
        return math.asin(a1) + math.asin(a2)
    denom = math.sin(theta1) * math.sin(theta2)
    if denom <= 0.0:
        return math.pi
    c = (math.cos(2.0 * epsilon) - math.cos(theta1) * math.cos(theta2)) / denom
    if c < -1.0 or c > 1.0:
        return math.pi
    return math.acos(c)


def _anchored_frames(pose: RelativePose) -> tuple[np.ndarray, np.ndarray]:
    """Camera orientations (R1, R2) with phi = 0 realizing the pose."""
    v1, _ = _v1_from_translation(pose.translation)
    R1 = exp_so3(_embed(v1))
    return R1, R1 @ pose.rotation


def angular_residual(pose: RelativePose, x: np.ndarray, y: np.ndarray,
                     tol: float = RESIDUAL_TOL) -> float:
    """Smallest angle by which both bearings must be perturbed to intersect.

    Evaluates ``min_p max(angle(x, p), angle(R y, p - t))``.  For
    ``theta1 >= theta2`` a closed form applies; otherwise the value is
    bisected to within ``tol`` using the monotone feasibility half-width.
    """
    R1, R2 = _anchored_frames(pose)
    u = R1 @ x
    w = R2 @ y
    theta1 = math.acos(min(1.0, max(-1.0, float(u[2]))))
    theta2 = math.acos(min(1.0, max(-1.0, float(w[2]))))
    if theta1 >= theta2:
        c = min(1.0, max(-1.0, float(u @ w)))
        return 0.5 * math.acos(c)
    dphi = circular_distance(math.atan2(u[1], u[0]), math.atan2(w[1], w[0]))
    if dphi == 0.0:
        return 0.0
    lo = 0.0
    hi = theta1 + _BISECT_MARGIN
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if dphi <= omega(mid, theta1, theta2):
            hi = mid
        else:
            lo = mid
    return hi


def is_feasible_association(pose: RelativePose, x: np.ndarray, y: np.ndarray,
                            epsilon: float) -> bool:
    """Polar-gate + azimuth-gap test for ``residual <= epsilon``."""
    R1, R2 = _anchored_frames(pose)
    p1, p2 = polar_coords(R1, R2, x, y)
    if p1.theta - p2.theta > 2.0 * epsilon:
        return False
    gap = circular_distance(p1.phi_az, p2.phi_az)
    return gap <= omega(epsilon, p1.theta, p2.theta)


def feasible_phi_interval(v1: np.ndarray, v2: np.ndarray, x: np.ndarray,
                          y: np.ndarray, epsilon: float) -> list[tuple[float, float]]:
    """Arcs of phi for which the association is feasible at (v1, v2).

    Returns zero, one, or two closed arcs in [0, 2*pi); a wrapping arc is
    split at 0, and an unconstrained azimuth yields the full circle.
    """
    Rbar1 = exp_so3(_embed(np.asarray(v1, dtype=float)))
    R2 = exp_so3(_embed(np.asarray(v2, dtype=float)))
    p1, p2 = polar_coords(Rbar1, R2, x, y)
    if p1.theta - p2.theta > 2.0 * epsilon:
        return []
    om = omega(epsilon, p1.theta, p2.theta)
    if om >= math.pi - 1e-12:
        return [(0.0, TWO_PI)]
    center = (p2.phi_az - p1.phi_az) % TWO_PI
    lo = center - om
    hi = center + om
    if lo < 0.0:
        return [(0.0, hi), (lo + TWO_PI, TWO_PI)]
    if hi > TWO_PI:
        return [(0.0, hi - TWO_PI), (lo, TWO_PI)]
    return [(lo, hi)]
