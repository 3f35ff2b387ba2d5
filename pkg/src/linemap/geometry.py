"""Camera models and line geometry primitives.

3D lines are represented in Plucker coordinates (unit direction plus moment
vector), with a minimal 4-DoF orthonormal parameterization available for
optimization.  Infinite 2D lines use homogeneous coefficients ``(a, b, c)``
with ``a*x + b*y + c = 0``.  Camera rotations map world coordinates into the
camera frame: ``X_cam = R @ X_world + t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

FloatArray = NDArray[np.float64]

EPS = 1e-12


def _as_vec(x, n: int) -> FloatArray:
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (n,):
        raise ValueError(f"expected shape ({n},), got {v.shape}")
    return v


def normalized(v: FloatArray) -> FloatArray:
    """Return ``v`` scaled to unit norm.  Raises on (near-)zero input."""
    n = np.linalg.norm(v)
    if n < EPS:
        raise ValueError("cannot normalize near-zero vector")
    return v / n


def skew(v: FloatArray) -> FloatArray:
    """Cross-product matrix: ``skew(a) @ b == cross(a, b)``."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def acute_angle(u: FloatArray, v: FloatArray) -> float:
    """Acute angle in radians between two directions, ignoring orientation."""
    c = abs(float(np.dot(u, v))) / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(np.arccos(min(1.0, c)))


# ---------------------------------------------------------------------------
# quaternion helpers (unit quaternions, scalar-first convention)
# ---------------------------------------------------------------------------


def quat_to_rotmat(q: FloatArray) -> FloatArray:
    """Rotation matrix of a unit quaternion ``(w, x, y, z)``."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotmat_to_quat(R: FloatArray) -> FloatArray:
    """Unit quaternion ``(w, x, y, z)`` of a rotation matrix (w >= 0)."""
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(EPS, 1.0 + R[i, i] - R[j, j] - R[k, k])) * 2
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_mul(a: FloatArray, b: FloatArray) -> FloatArray:
    """Hamilton product of two quaternions (scalar-first)."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_exp(delta: FloatArray) -> FloatArray:
    """Unit quaternion for a rotation-vector increment ``delta`` (3-vector)."""
    theta = np.linalg.norm(delta)
    if theta < EPS:
        q = np.array([1.0, 0.5 * delta[0], 0.5 * delta[1], 0.5 * delta[2]])
        return q / np.linalg.norm(q)
    axis = delta / theta
    return np.concatenate([[np.cos(0.5 * theta)], np.sin(0.5 * theta) * axis])


# ---------------------------------------------------------------------------
# cameras
# ---------------------------------------------------------------------------


def intrinsics_matrix(focal: float, cx: float, cy: float) -> FloatArray:
    """Square-pixel pinhole intrinsic matrix."""
    return np.array([[focal, 0.0, cx], [0.0, focal, cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class CameraView:
    """A calibrated, posed pinhole camera.

    Attributes:
        K: 3x3 intrinsic matrix.
        R: 3x3 rotation mapping world coordinates into the camera frame.
        t: translation of the same map, ``X_cam = R @ X_world + t``.
        width: image width in pixels.
        height: image height in pixels.
    """

    K: FloatArray
    R: FloatArray
    t: FloatArray
    width: int = 0
    height: int = 0

    def __post_init__(self):
        object.__setattr__(self, "K", np.asarray(self.K, dtype=np.float64))
        object.__setattr__(self, "R", np.asarray(self.R, dtype=np.float64))
        object.__setattr__(self, "t", _as_vec(self.t, 3))

    @property
    def focal(self) -> float:
        """Mean of the two focal lengths."""
        return 0.5 * float(self.K[0, 0] + self.K[1, 1])

    def camera_center(self) -> FloatArray:
        cached = self.__dict__.get("_center")
        if cached is None:
            cached = self.__dict__["_center"] = -self.R.T @ self.t
        return cached

    def projection_matrix(self) -> FloatArray:
        return self.K @ np.hstack([self.R, self.t[:, None]])

    def _kr_kt(self):
        cached = self.__dict__.get("_krkt")
        if cached is None:
            cached = self.__dict__["_krkt"] = (self.K @ self.R, self.K @ self.t)
        return cached

    def depth(self, p_world: FloatArray) -> float:
        """Z coordinate of a world point in the camera frame."""
        return float(self.R[2] @ p_world + self.t[2])

    def project_point(self, p_world: FloatArray) -> FloatArray:
        """Project a world point to pixel coordinates.

        Raises:
            ValueError: if the point is at or behind the camera plane.
        """
        KR, Kt = self._kr_kt()
        uvw = KR @ p_world + Kt
        # the last K row is (0, 0, 1), so uvw[2] is the camera-frame depth
        if uvw[2] <= EPS:
            raise ValueError("point does not lie in front of the camera")
        return uvw[:2] / uvw[2]

    def pixel_to_normalized(self, pixel: FloatArray) -> FloatArray:
        """Homogeneous normalized image coordinates ``K^-1 (u, v, 1)``."""
        return np.linalg.solve(self.K, np.array([pixel[0], pixel[1], 1.0]))

    def ray_direction(self, pixel: FloatArray) -> FloatArray:
        """Unit viewing-ray direction of a pixel, in the camera frame."""
        return normalized(self.pixel_to_normalized(pixel))

    def ray_direction_world(self, pixel: FloatArray) -> FloatArray:
        """Unit viewing-ray direction of a pixel, in the world frame."""
        return self.R.T @ self.ray_direction(pixel)


def relative_pose(ref: CameraView, match: CameraView) -> tuple[FloatArray, FloatArray]:
    """Pose mapping reference-camera coordinates into match-camera coordinates.

    Returns ``(R, t)`` with ``X_match = R @ X_ref + t``.
    """
    R = match.R @ ref.R.T
    t = match.t - R @ ref.t
    return R, t


# ---------------------------------------------------------------------------
# segments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Segment2D:
    """A finite 2D line segment in pixel coordinates.

    Derived quantities are memoized on first access; instances are
    immutable so the cache can never go stale.
    """

    start: FloatArray
    end: FloatArray

    def __post_init__(self):
        object.__setattr__(self, "start", _as_vec(self.start, 2))
        object.__setattr__(self, "end", _as_vec(self.end, 2))

    @property
    def length(self) -> float:
        cached = self.__dict__.get("_length")
        if cached is None:
            d = self.end - self.start
            cached = self.__dict__["_length"] = math.hypot(d[0], d[1])
        return cached

    @property
    def midpoint(self) -> FloatArray:
        return 0.5 * (self.start + self.end)

    @property
    def direction(self) -> FloatArray:
        cached = self.__dict__.get("_direction")
        if cached is None:
            cached = self.__dict__["_direction"] = normalized(self.end - self.start)
        return cached

    def infinite_line(self) -> FloatArray:
        """Homogeneous coefficients of the supporting line, ``|(a, b)| = 1``."""
        cached = self.__dict__.get("_line")
        if cached is None:
            x1, y1 = float(self.start[0]), float(self.start[1])
            x2, y2 = float(self.end[0]), float(self.end[1])
            a, b, c = y1 - y2, x2 - x1, x1 * y2 - x2 * y1
            n = math.hypot(a, b)
            cached = self.__dict__["_line"] = np.array([a / n, b / n, c / n])
        return cached

    def endpoints(self) -> FloatArray:
        return np.stack([self.start, self.end])


@dataclass(frozen=True)
class Segment3D:
    """A finite 3D line segment."""

    start: FloatArray
    end: FloatArray

    def __post_init__(self):
        object.__setattr__(self, "start", _as_vec(self.start, 3))
        object.__setattr__(self, "end", _as_vec(self.end, 3))

    @property
    def length(self) -> float:
        cached = self.__dict__.get("_length")
        if cached is None:
            d = self.end - self.start
            cached = self.__dict__["_length"] = math.sqrt(float(d @ d))
        return cached

    @property
    def midpoint(self) -> FloatArray:
        return 0.5 * (self.start + self.end)

    @property
    def direction(self) -> FloatArray:
        cached = self.__dict__.get("_direction")
        if cached is None:
            cached = self.__dict__["_direction"] = normalized(self.end - self.start)
        return cached

    def endpoints(self) -> FloatArray:
        return np.stack([self.start, self.end])


def project_segment(seg: Segment3D, view: CameraView) -> Segment2D:
    """Project both endpoints of a 3D segment into a view."""
    return Segment2D(view.project_point(seg.start), view.project_point(seg.end))


# ---------------------------------------------------------------------------
# Plucker lines
# ---------------------------------------------------------------------------


def _canonical_sign(d: FloatArray, m: FloatArray) -> tuple[FloatArray, FloatArray]:
    # (d, m) and (-d, -m) denote the same line; fix the sign so that the
    # first non-negligible component of d is positive.
    for c in d:
        if abs(c) > EPS:
            if c < 0:
                return -d, -m
            break
    return d, m


@dataclass(frozen=True)
class PluckerLine:
    """An infinite 3D line: unit direction ``d`` and moment ``m = p x d``.

    The moment is independent of the choice of point ``p`` on the line.
    The stored sign is canonical (first nonzero component of ``d`` positive),
    so equal lines compare equal regardless of construction order.
    """

    d: FloatArray
    m: FloatArray

    def __post_init__(self):
        d = _as_vec(self.d, 3)
        m = _as_vec(self.m, 3)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-9:
            if n < EPS:
                raise ValueError("line direction must be nonzero")
            d = d / n
            m = m / n
        d, m = _canonical_sign(d, m)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "m", m)

    @classmethod
    def from_two_points(cls, p: FloatArray, q: FloatArray) -> "PluckerLine":
        p = _as_vec(p, 3)
        d = normalized(_as_vec(q, 3) - p)
        return cls(d, np.cross(p, d))

    @classmethod
    def from_point_direction(cls, p: FloatArray, d: FloatArray) -> "PluckerLine":
        d = normalized(_as_vec(d, 3))
        return cls(d, np.cross(_as_vec(p, 3), d))

    def closest_point_to_origin(self) -> FloatArray:
        return np.cross(self.d, self.m)

    def point_at(self, s: float) -> FloatArray:
        return self.closest_point_to_origin() + s * self.d


def plucker_from_segment(seg: Segment3D) -> PluckerLine:
    """Plucker coordinates of the supporting line of a segment."""
    return PluckerLine.from_two_points(seg.start, seg.end)


def project_point_to_line3d(p: FloatArray, line: PluckerLine) -> FloatArray:
    """Orthogonal projection of a 3D point onto an infinite 3D line.

    Uses the moment shift ``m_p = m + d x p`` of the line as seen from ``p``;
    the foot point is then ``p + d x m_p``.
    """
    m_p = line.m + np.cross(line.d, p)
    return p + np.cross(line.d, m_p)


def point_line_distance_3d(p: FloatArray, line: PluckerLine) -> float:
    """Euclidean distance from a 3D point to an infinite 3D line."""
    return float(np.linalg.norm(p - project_point_to_line3d(p, line)))


def closest_point_line_to_line(line1: PluckerLine, line2: PluckerLine) -> FloatArray:
    """Point on ``line1`` closest to ``line2``.

    Raises:
        ValueError: if the lines are parallel (no unique closest point).
    """
    d1, m1 = line1.d, line1.m
    d2, m2 = line2.d, line2.m
    c = np.cross(d1, d2)
    denom = float(c @ c)
    if denom < EPS:
        raise ValueError("lines are parallel; closest point is not unique")
    return (-np.cross(m1, np.cross(d2, c)) + (m2 @ c) * d1) / denom


def project_line(line: PluckerLine, view: CameraView) -> FloatArray:
    """Project an infinite 3D line into a view.

    Transforms the Plucker pair into the camera frame (``d_c = R d``,
    ``m_c = R m + t x d_c``) and maps the camera-frame moment through the
    inverse-transpose intrinsics; this equals conjugating the 4x4 Plucker
    matrix with the projection matrix.  Returns homogeneous coefficients
    scaled so ``|(a, b)| = 1``.

    Raises:
        ValueError: if the line passes (numerically) through the camera
            center, where the projection degenerates to a point.
    """
    d_c = view.R @ line.d
    m_c = view.R @ line.m + np.cross(view.t, d_c)
    l = np.linalg.solve(view.K.T, m_c)
    n = np.linalg.norm(l[:2])
    if n < EPS:
        raise ValueError("line projects to a point (passes through camera center)")
    return l / n


# ---------------------------------------------------------------------------
# minimal orthonormal parameterization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MinimalLineParam:
    """Orthonormal 4-DoF parameterization of an infinite 3D line.

    ``q`` is a unit quaternion encoding the SO(3) frame whose columns are
    ``(d, m/|m|, d x m / |d x m|)``; ``w`` is a unit 2-vector encoding the
    SO(2) factor ``(1, |m|) / sqrt(1 + |m|^2)``.  The ratio ``w[1]/w[0]``
    recovers the line's distance from the origin.
    """

    q: FloatArray
    w: FloatArray

    def __post_init__(self):
        q = _as_vec(self.q, 4)
        w = _as_vec(self.w, 2)
        object.__setattr__(self, "q", q / np.linalg.norm(q))
        object.__setattr__(self, "w", w / np.linalg.norm(w))

    def rotation(self) -> FloatArray:
        return quat_to_rotmat(self.q)


def plucker_to_minimal(line: PluckerLine) -> MinimalLineParam:
    """Convert Plucker coordinates to the orthonormal representation.

    For lines through the origin (``|m| = 0``) the second frame axis is not
    determined by the line; an arbitrary unit vector orthogonal to ``d``
    completes the frame and ``w = (1, 0)`` marks zero origin distance.
    """
    d = line.d
    m = line.m
    mn = np.linalg.norm(m)
    if mn < EPS:
        # Gram-Schmidt completion: any vector not parallel to d works.
        seed = np.eye(3)[int(np.argmin(np.abs(d)))]
        u2 = normalized(seed - (seed @ d) * d)
        w = np.array([1.0, 0.0])
    else:
        u2 = m / mn
        w = np.array([1.0, mn]) / np.sqrt(1.0 + mn * mn)
    u3 = np.cross(d, u2)
    U = np.column_stack([d, u2, u3])
    return MinimalLineParam(rotmat_to_quat(U), w)


def minimal_to_plucker(param: MinimalLineParam) -> PluckerLine:
    """Recover Plucker coordinates from the orthonormal representation.

    Raises:
        ValueError: for lines at infinity (``w[0] = 0``).
    """
    U = param.rotation()
    w1, w2 = param.w
    if abs(w1) < EPS:
        raise ValueError("line at infinity has no Plucker representation")
    d = U[:, 0]
    m = (w2 / w1) * U[:, 1]
    return PluckerLine(d, m)


# ---------------------------------------------------------------------------
# 2D helpers
# ---------------------------------------------------------------------------


def point_to_infinite_line_2d(p: FloatArray, line: FloatArray) -> float:
    """Unsigned distance from a 2D point to a homogeneous 2D line."""
    return abs(float(line[0] * p[0] + line[1] * p[1] + line[2])) / np.linalg.norm(line[:2])


def point_to_segment_distance_2d(p: FloatArray, seg: Segment2D) -> float:
    """Distance from a 2D point to a finite segment."""
    v = seg.end - seg.start
    ln2 = float(v @ v)
    if ln2 < EPS:
        return float(np.linalg.norm(p - seg.start))
    s = float(np.clip((p - seg.start) @ v / ln2, 0.0, 1.0))
    return float(np.linalg.norm(p - (seg.start + s * v)))


def intersect_lines_2d(l1: FloatArray, l2: FloatArray) -> FloatArray:
    """Homogeneous intersection point of two 2D lines (may be at infinity)."""
    return np.cross(l1, l2)
