"""Rigid-body pose algebra on SE(3).

Quaternions are stored scalar-first ``(w, x, y, z)`` and kept unit-norm and
sign-canonical (``w >= 0``) after every constructing operation, so ``q`` and
``-q`` always collapse to the same stored value.

Most functions accept batched arrays with leading dimensions; the :class:`Pose`
wrapper is the single-pose convenience used at API boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Pose",
    "canonical_quat",
    "compose",
    "compose_arrays",
    "geodesic_angle",
    "inverse",
    "inverse_arrays",
    "matrix_to_quat",
    "pose_distance",
    "quat_conj",
    "quat_from_axis_angle",
    "quat_mul",
    "quat_rotate",
    "quat_to_matrix",
    "relative_pose",
]


def canonical_quat(q):
    """Normalize and fold the sign so that ``w >= 0`` (ties broken on x, y, z)."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    # first non-negligible component decides the sign
    lead = np.zeros(q.shape[:-1])
    for c in range(4):
        comp = q[..., c]
        undecided = lead == 0
        lead = np.where(undecided & (np.abs(comp) > 1e-15), np.sign(comp), lead)
    lead = np.where(lead == 0, 1.0, lead)
    return q * lead[..., None]


def quat_mul(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_rotate(q, v):
    """Rotate vector(s) ``v`` by unit quaternion(s) ``q``."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_to_matrix(q):
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return m.reshape(q.shape[:-1] + (3, 3))


def matrix_to_quat(m):
    """Rotation matrix (..., 3, 3) to canonical quaternion (..., 4).

    Uses the largest-pivot branch per element for numerical stability.
    """
    m = np.asarray(m, dtype=float)
    shape = m.shape[:-2]
    m = m.reshape(-1, 3, 3)
    tr = np.trace(m, axis1=1, axis2=2)
    diag = np.stack([tr, m[:, 0, 0], m[:, 1, 1], m[:, 2, 2]], axis=1)
    branch = np.argmax(diag, axis=1)
    q = np.empty((m.shape[0], 4))
    for b in range(4):
        sel = branch == b
        if not np.any(sel):
            continue
        r = m[sel]
        if b == 0:
            s = 2.0 * np.sqrt(1.0 + tr[sel])
            q[sel] = np.stack(
                [0.25 * s, (r[:, 2, 1] - r[:, 1, 2]) / s,
                 (r[:, 0, 2] - r[:, 2, 0]) / s, (r[:, 1, 0] - r[:, 0, 1]) / s], axis=1)
        elif b == 1:
            s = 2.0 * np.sqrt(1.0 + r[:, 0, 0] - r[:, 1, 1] - r[:, 2, 2])
            q[sel] = np.stack(
                [(r[:, 2, 1] - r[:, 1, 2]) / s, 0.25 * s,
                 (r[:, 0, 1] + r[:, 1, 0]) / s, (r[:, 0, 2] + r[:, 2, 0]) / s], axis=1)
        elif b == 2:
            s = 2.0 * np.sqrt(1.0 + r[:, 1, 1] - r[:, 0, 0] - r[:, 2, 2])
            q[sel] = np.stack(
                [(r[:, 0, 2] - r[:, 2, 0]) / s, (r[:, 0, 1] + r[:, 1, 0]) / s,
                 0.25 * s, (r[:, 1, 2] + r[:, 2, 1]) / s], axis=1)
        else:
            s = 2.0 * np.sqrt(1.0 + r[:, 2, 2] - r[:, 0, 0] - r[:, 1, 1])
            q[sel] = np.stack(
                [(r[:, 1, 0] - r[:, 0, 1]) / s, (r[:, 0, 2] + r[:, 2, 0]) / s,
                 (r[:, 1, 2] + r[:, 2, 1]) / s, 0.25 * s], axis=1)
    return canonical_quat(q).reshape(shape + (4,))


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = 0.5 * np.asarray(angle, dtype=float)[..., None]
    return canonical_quat(np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1))


def geodesic_angle(qa, qb):
    """Rotation angle (radians, in [0, pi]) between two orientations."""
    qa = np.asarray(qa, dtype=float)
    qb = np.asarray(qb, dtype=float)
    s = np.where(np.sum(qa * qb, axis=-1) < 0, -1.0, 1.0)[..., None]
    # chord form stays accurate near zero, where arccos of the dot product does not
    return 4.0 * np.arctan2(np.linalg.norm(qa - s * qb, axis=-1), np.linalg.norm(qa + s * qb, axis=-1))


def compose_arrays(pa, qa, pb, qb):
    """Batched ``a o b``: translation ``pa + R(qa) pb``, rotation ``qa * qb``."""
    return np.asarray(pa, dtype=float) + quat_rotate(qa, pb), canonical_quat(quat_mul(qa, qb))


def inverse_arrays(p, q):
    qi = quat_conj(q)
    return -quat_rotate(qi, p), canonical_quat(qi)


@dataclass(frozen=True, eq=False)
class Pose:
    """A rigid transform: position ``p`` (meters) and unit quaternion ``q`` (w, x, y, z)."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float).reshape(3)
        q = np.array(self.q, dtype=float).reshape(4)
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValueError("pose components must be finite")
        if np.linalg.norm(q) < 1e-12:
            raise ValueError("quaternion must be non-zero")
        q = canonical_quat(q)
        p.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(np.array_equal(self.p, other.p) and np.array_equal(self.q, other.q))

    def __hash__(self):
        return hash((self.p.tobytes(), self.q.tobytes()))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_array(cls, a) -> "Pose":
        """From 7 reals ``px py pz qw qx qy qz``."""
        a = np.asarray(a, dtype=float).reshape(7)
        return cls(a[:3], a[3:])

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, 3], matrix_to_quat(m[:3, :3]))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.p, self.q])

    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation()
        m[:3, 3] = self.p
        return m

    def apply(self, v):
        """Map point(s) from this pose's frame into the parent frame."""
        return self.p + quat_rotate(self.q, v)

    def isclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        dq = abs(float(np.dot(self.q, other.q)))
        return bool(np.allclose(self.p, other.p, atol=atol, rtol=0.0) and 1.0 - dq <= atol)

    def __repr__(self):
        p = ", ".join(f"{v:.6g}" for v in self.p)
        q = ", ".join(f"{v:.6g}" for v in self.q)
        return f"Pose(p=[{p}], q=[{q}])"


def compose(a: Pose, b: Pose) -> Pose:
    p, q = compose_arrays(a.p, a.q, b.p, b.q)
    return Pose(p, q)


def inverse(a: Pose) -> Pose:
    p, q = inverse_arrays(a.p, a.q)
    return Pose(p, q)


def relative_pose(frame: Pose, target: Pose) -> Pose:
    """``target`` expressed in ``frame``: ``inverse(frame) o target``."""
    return compose(inverse(frame), target)


def pose_distance(a: Pose, b: Pose, rot_weight: float = 1.0) -> float:
    """Translation distance plus ``rot_weight`` (m/rad) times the geodesic angle."""
    if rot_weight < 0:
        raise ValueError("rot_weight must be non-negative")
    return float(np.linalg.norm(a.p - b.p) + rot_weight * geodesic_angle(a.q, b.q))
