"""Planar similarity transforms, gravity alignment, and Sim(2) solvers.

Planar points are (x, z) pairs; the vertical axis is y. A ``Sim2`` maps
p -> s * R(theta) @ p + t with s > 0 and theta in (-pi, pi]. Rotations here
are plain 3x3 / 2x2 numpy arrays; camera poses store the camera-to-world
rotation (columns are the camera axes expressed in world coordinates) and
the camera center in world coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSample, EmptyInput, NotUnit

# Minimum point spread accepted by the two-point and least-squares solvers.
EPS_DEG = 1e-6

Y_AXIS = np.array([0.0, 1.0, 0.0])


def make_rng(seed):
    """Seeded counter-based PRNG (Philox) used everywhere randomness appears."""
    return np.random.Generator(np.random.Philox(seed))


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    theta = math.remainder(float(theta), math.tau)
    if theta <= -math.pi:
        theta += math.tau
    return theta


@dataclass(frozen=True)
class Sim2:
    """Planar similarity: scale, rotation angle (radians), translation."""

    s: float
    theta: float
    t: tuple[float, float]

    def __post_init__(self):
        if not (self.s > 0.0 and math.isfinite(self.s)):
            raise ValueError(f"scale must be positive and finite, got {self.s}")
        object.__setattr__(self, "theta", wrap_angle(self.theta))
        object.__setattr__(self, "t", (float(self.t[0]), float(self.t[1])))

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    @property
    def matrix(self) -> np.ndarray:
        """3x3 homogeneous form."""
        m = np.eye(3)
        m[:2, :2] = self.s * self.rotation
        m[:2, 2] = self.t
        return m

    def to_json_dict(self) -> dict:
        return {"s": self.s, "theta_rad": self.theta, "t": [self.t[0], self.t[1]]}

    @classmethod
    def from_json_dict(cls, d: dict) -> "Sim2":
        return cls(s=float(d["s"]), theta=float(d["theta_rad"]), t=tuple(d["t"]))

    @classmethod
    def identity(cls) -> "Sim2":
        return cls(1.0, 0.0, (0.0, 0.0))


@dataclass
class CameraPose:
    """Camera-to-world rotation plus world-space center."""

    rotation: np.ndarray  # (3, 3)
    center: np.ndarray  # (3,)
    image_id: int | str = 0

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.center = np.asarray(self.center, dtype=float)
        check_rotation(self.rotation)


def check_rotation(r: np.ndarray, tol: float = 1e-9) -> None:
    """Validate orthonormality and det=+1 within ``tol``."""
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {r.shape}")
    if not np.all(np.isfinite(r)):
        raise ValueError("rotation contains non-finite entries")
    err = np.abs(r.T @ r - np.eye(3)).max()
    if err > tol:
        raise ValueError(f"matrix is not orthonormal (|R^T R - I| = {err:.3g})")
    if abs(np.linalg.det(r) - 1.0) > tol:
        raise ValueError("matrix has det != +1 (reflection or scaling)")


def medoid_direction(votes) -> np.ndarray:
    """Pick the vote minimizing total angular distance to all votes.

    Ties resolve to the lowest input index. Inputs must be unit vectors
    (within 1e-6).
    """
    votes = np.asarray(votes, dtype=float)
    if votes.size == 0:
        raise EmptyInput("no gravity votes supplied")
    votes = np.atleast_2d(votes)
    norms = np.linalg.norm(votes, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise NotUnit("gravity votes must be unit vectors")
    unit = votes / norms[:, None]
    cosines = np.clip(unit @ unit.T, -1.0, 1.0)
    totals = np.arccos(cosines).sum(axis=1)
    return votes[int(np.argmin(totals))].copy()


def gravity_rotation(g) -> np.ndarray:
    """Rotation taking the gravity-up direction ``g`` onto the +y axis.

    The horizontal basis is completed by Gram-Schmidt from the world x axis,
    switching to the z axis when ``g`` is nearly parallel to x.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != (3,) or abs(np.linalg.norm(g) - 1.0) > 1e-6:
        raise NotUnit("gravity direction must be a unit 3-vector")
    g = g / np.linalg.norm(g)
    seed = np.array([1.0, 0.0, 0.0])
    if abs(g @ seed) > 0.9:
        seed = np.array([0.0, 0.0, 1.0])
    r1 = seed - (seed @ g) * g
    r1 /= np.linalg.norm(r1)
    r3 = np.cross(r1, g)
    return np.stack([r1, g, r3])


def yaw_rotation(theta: float) -> np.ndarray:
    """3D rotation about y whose (x, z) action equals the Sim2 rotation R(theta)."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


def camera_yaw(pose: CameraPose) -> float:
    """Heading angle of the camera forward axis (+z of the camera frame)
    projected to the horizontal plane: atan2(f_z, f_x)."""
    fwd = pose.rotation @ np.array([0.0, 0.0, 1.0])
    return math.atan2(fwd[2], fwd[0])


def sim2_apply(m: Sim2, p) -> np.ndarray:
    """Apply ``m`` to one (2,) point or an (N, 2) array of points."""
    p = np.asarray(p, dtype=float)
    out = m.s * (p @ m.rotation.T) + np.asarray(m.t)
    return out


def sim2_compose(m2: Sim2, m1: Sim2) -> Sim2:
    """Transform equal to applying ``m1`` first, then ``m2``."""
    t1 = np.asarray(m1.t)
    t = m2.s * (m2.rotation @ t1) + np.asarray(m2.t)
    return Sim2(m2.s * m1.s, m2.theta + m1.theta, (t[0], t[1]))


def sim2_inverse(m: Sim2) -> Sim2:
    rinv = m.rotation.T
    t = -(rinv @ np.asarray(m.t)) / m.s
    return Sim2(1.0 / m.s, -m.theta, (t[0], t[1]))


def _as_complex(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p[..., 0] + 1j * p[..., 1]


def sim2_from_two_pairs(a1, a2, b1, b2) -> Sim2:
    """Exact Sim2 mapping a1->b1 and a2->b2, via the complex ratio
    (b2-b1)/(a2-a1)."""
    za1, za2 = _as_complex(a1), _as_complex(a2)
    zb1, zb2 = _as_complex(b1), _as_complex(b2)
    da, db = za2 - za1, zb2 - zb1
    if abs(da) <= EPS_DEG or abs(db) <= EPS_DEG:
        raise DegenerateSample("coincident points in a minimal Sim2 sample")
    c = db / da
    t = zb1 - c * za1
    return Sim2(abs(c), math.atan2(c.imag, c.real), (t.real, t.imag))


def sim2_umeyama(src, dst, weights=None) -> Sim2:
    """Weighted least-squares similarity minimizing sum w_i |M(src_i)-dst_i|^2.

    The 2D problem is solved in closed form over the complex plane: with
    centered points the optimal s*R is the complex coefficient
    sum(w * conj(a) * b) / sum(w * |a|^2), which excludes reflections by
    construction.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.ndim != 2 or src.shape != dst.shape or src.shape[1] != 2:
        raise ValueError("src and dst must be matching (N, 2) arrays")
    n = src.shape[0]
    if n < 2:
        raise DegenerateSample("at least two correspondences are required")
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,) or np.any(w < 0):
            raise ValueError("weights must be nonnegative with one entry per pair")
    wsum = w.sum()
    if wsum <= 0:
        raise DegenerateSample("all weights are zero")
    a = _as_complex(src)
    b = _as_complex(dst)
    mu_a = (w * a).sum() / wsum
    mu_b = (w * b).sum() / wsum
    ac = a - mu_a
    bc = b - mu_b
    var_a = (w * (ac.real**2 + ac.imag**2)).sum() / wsum
    if var_a <= EPS_DEG**2:
        raise DegenerateSample("source points have no spread")
    c = (w * np.conj(ac) * bc).sum() / (wsum * var_a)
    if abs(c) <= EPS_DEG:
        raise DegenerateSample("optimal scale collapsed to zero")
    t = mu_b - c * mu_a
    return Sim2(abs(c), math.atan2(c.imag, c.real), (t.real, t.imag))


def align_scene(points, poses, m: Sim2):
    """Map a gravity-aligned scene by ``m``: (x, z) through the planar
    transform, y scaled by s, and camera headings advanced by theta.

    Returns (points, poses) as new arrays/objects; inputs are untouched.
    """
    points = np.asarray(points, dtype=float)
    out_pts = points.copy()
    if points.size:
        out_pts[:, [0, 2]] = sim2_apply(m, points[:, [0, 2]])
        out_pts[:, 1] = m.s * points[:, 1]
    yaw = yaw_rotation(m.theta)
    out_poses = []
    for pose in poses:
        center = pose.center.copy()
        xz = sim2_apply(m, center[[0, 2]])
        center[0], center[2] = xz
        center[1] = m.s * center[1]
        out_poses.append(
            CameraPose(rotation=yaw @ pose.rotation, center=center, image_id=pose.image_id)
        )
    return out_pts, out_poses
