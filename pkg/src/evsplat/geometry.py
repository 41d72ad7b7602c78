"""SE(3) poses, quaternion utilities and the pinhole camera model.

Conventions used throughout the package:

- Quaternions are stored as ``(w, x, y, z)`` and kept unit-norm.
- :class:`PoseSE3` is a camera-to-world transform: a world point is
  ``X_w = R @ X_c + t`` and a camera-frame point is ``X_c = R.T @ (X_w - t)``.
- Pose tangents are 6-vectors ``(omega, nu)``: ``omega`` is a world-frame
  rotation perturbation applied on the left (``R <- exp(omega^) R``) and
  ``nu`` is an additive translation perturbation (``t <- t + nu``).
- Pixel coordinates are ``(x, y)`` with ``x`` the column index; pixel centers
  sit at integer coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_UNIT_TOL = 1e-9


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero quaternion")
    return q / n


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
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


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns a unit quaternion with non-negative w."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        if i == 0:
            s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
            q = np.array(
                [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
            )
        elif i == 1:
            s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
            q = np.array(
                [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
            )
        else:
            s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
            q = np.array(
                [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
            )
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


def quat_rotation_derivatives(q: np.ndarray) -> np.ndarray:
    """dR/dq_i for a unit quaternion, stacked as shape (4, 3, 3).

    Does NOT include the normalization Jacobian; combine with
    ``(I4 - q q^T)`` when the stored quaternion may be perturbed off the
    unit sphere.
    """
    w, x, y, z = q
    dRdw = 2 * np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    dRdx = 2 * np.array([[0.0, y, z], [y, -2 * x, -w], [z, w, -2 * x]])
    dRdy = 2 * np.array([[-2 * y, x, w], [x, 0.0, z], [-w, z, -2 * y]])
    dRdz = 2 * np.array([[-2 * z, -w, x], [w, -2 * z, y], [x, y, 0.0]])
    return np.stack([dRdw, dRdx, dRdy, dRdz])


def quat_slerp(q0: np.ndarray, q1: np.ndarray, alpha: float) -> np.ndarray:
    """Spherical linear interpolation along the shortest arc; endpoint-exact."""
    if alpha == 0.0:
        return np.array(q0, dtype=np.float64)
    if alpha == 1.0:
        return np.array(q1, dtype=np.float64)
    q0 = quat_normalize(q0)
    q1 = quat_normalize(q1)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    dot = min(dot, 1.0)
    theta = np.arccos(dot)
    if theta < 1e-12:
        return quat_normalize((1.0 - alpha) * q0 + alpha * q1)
    s = np.sin(theta)
    return quat_normalize(
        (np.sin((1.0 - alpha) * theta) / s) * q0 + (np.sin(alpha * theta) / s) * q1
    )


def skew(v: np.ndarray) -> np.ndarray:
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
    )


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Rotation matrix exp(omega^) via Rodrigues."""
    omega = np.asarray(omega, dtype=np.float64)
    theta = np.linalg.norm(omega)
    W = skew(omega)
    if theta < 1e-10:
        return np.eye(3) + W + 0.5 * (W @ W)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * W + b * (W @ W)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix (angle in [0, pi])."""
    cos = (np.trace(R) - 1.0) / 2.0
    cos = np.clip(cos, -1.0, 1.0)
    theta = np.arccos(cos)
    if theta < 1e-10:
        return np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    if np.pi - theta < 1e-6:
        # near pi: extract axis from the symmetric part
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        # fix signs from off-diagonals
        i = int(np.argmax(axis))
        axis = A[:, i] / axis[i]
        axis = axis / np.linalg.norm(axis)
        return theta * axis
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return theta / (2.0 * np.sin(theta)) * v


def so3_left_jacobian(omega: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(omega)
    W = skew(omega)
    if theta < 1e-8:
        return np.eye(3) + 0.5 * W + (W @ W) / 6.0
    a = (1.0 - np.cos(theta)) / theta**2
    b = (theta - np.sin(theta)) / theta**3
    return np.eye(3) + a * W + b * (W @ W)


def so3_left_jacobian_inv(omega: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(omega)
    W = skew(omega)
    if theta < 1e-8:
        return np.eye(3) - 0.5 * W + (W @ W) / 12.0
    half = theta / 2.0
    cot = half / np.tan(half)
    return np.eye(3) - 0.5 * W + ((1.0 - cot) / theta**2) * (W @ W)


@dataclass(frozen=True)
class PoseSE3:
    """Camera-to-world rigid transform with unit-quaternion rotation."""

    quat: np.ndarray  # (w, x, y, z), unit norm
    trans: np.ndarray  # (3,) meters

    def __post_init__(self):
        q = np.asarray(self.quat, dtype=np.float64)
        t = np.asarray(self.trans, dtype=np.float64)
        if q.shape != (4,) or t.shape != (3,):
            raise ValueError("quat must be (4,), trans must be (3,)")
        if abs(np.linalg.norm(q) - 1.0) > _UNIT_TOL:
            raise ValueError("quaternion not unit-norm")
        object.__setattr__(self, "quat", q)
        object.__setattr__(self, "trans", t)

    @staticmethod
    def identity() -> "PoseSE3":
        return PoseSE3(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @staticmethod
    def from_matrix(R: np.ndarray, t: np.ndarray) -> "PoseSE3":
        return PoseSE3(matrix_to_quat(R), np.asarray(t, dtype=np.float64))

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.quat)

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """self ∘ other (apply `other` first, then `self`)."""
        q = quat_normalize(quat_multiply(self.quat, other.quat))
        t = self.rotation @ other.trans + self.trans
        return PoseSE3(q, t)

    def inverse(self) -> "PoseSE3":
        qc = quat_conjugate(self.quat)
        Rt = self.rotation.T
        return PoseSE3(quat_normalize(qc), -(Rt @ self.trans))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Camera-frame points -> world frame. `points` is (..., 3)."""
        R = self.rotation
        return np.asarray(points) @ R.T + self.trans

    def apply_inverse(self, points: np.ndarray) -> np.ndarray:
        """World-frame points -> camera frame."""
        R = self.rotation
        return (np.asarray(points) - self.trans) @ R

    def retract(self, xi: np.ndarray) -> "PoseSE3":
        """Apply a 6-tangent (omega, nu): left rotation perturbation plus
        additive translation."""
        xi = np.asarray(xi, dtype=np.float64)
        omega, nu = xi[:3], xi[3:]
        R = so3_exp(omega) @ self.rotation
        return PoseSE3(matrix_to_quat(R), self.trans + nu)

    def local_delta(self, other: "PoseSE3") -> np.ndarray:
        """Tangent xi with ``other ≈ self.retract(xi)``."""
        omega = so3_log(other.rotation @ self.rotation.T)
        return np.concatenate([omega, other.trans - self.trans])


def interpolate_se3(start: PoseSE3, end: PoseSE3, alpha: float) -> PoseSE3:
    """Slerp rotation, lerp translation; bit-exact at the endpoints."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    if alpha == 0.0:
        return start
    if alpha == 1.0:
        return end
    q = quat_slerp(start.quat, end.quat, alpha)
    t = (1.0 - alpha) * start.trans + alpha * end.trans
    return PoseSE3(q, t)


def interpolation_chain(start: PoseSE3, end: PoseSE3, alpha: float):
    """Jacobians of the interpolated pose tangent w.r.t. the endpoint tangents.

    Returns ``(J_start, J_end)``, each 6x6, mapping endpoint tangent
    perturbations to the tangent perturbation of ``interpolate_se3(start,
    end, alpha)``, in the (omega, nu) convention of :meth:`PoseSE3.retract`.

    Rotation block: with R(alpha) = R0 exp(alpha*theta^) and
    theta = Log(R0^T R1), a left perturbation eps of either endpoint maps to
    eta = (I - alpha*A) eps  (start)  or  eta = alpha*A eps  (end),
    where A = R0 Jl(alpha*theta) Jl(theta)^{-1} R0^T.
    Translation block: lerp weights (1-alpha) and alpha.
    """
    R0 = start.rotation
    theta = so3_log(R0.T @ end.rotation)
    A = R0 @ so3_left_jacobian(alpha * theta) @ so3_left_jacobian_inv(theta) @ R0.T
    J_start = np.zeros((6, 6))
    J_end = np.zeros((6, 6))
    J_start[:3, :3] = np.eye(3) - alpha * A
    J_end[:3, :3] = alpha * A
    J_start[3:, 3:] = (1.0 - alpha) * np.eye(3)
    J_end[3:, 3:] = alpha * np.eye(3)
    return J_start, J_end


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; fx/fy in pixels, (cx, cy) principal point."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width) or not (0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def ray(self, pixel: np.ndarray) -> np.ndarray:
        """K^{-1} [x, 1]: camera-frame ray with unit z. `pixel` is (..., 2)."""
        pixel = np.asarray(pixel, dtype=np.float64)
        rx = (pixel[..., 0] - self.cx) / self.fx
        ry = (pixel[..., 1] - self.cy) / self.fy
        return np.stack([rx, ry, np.ones_like(rx)], axis=-1)

    def project(self, points_cam: np.ndarray) -> np.ndarray:
        """Camera-frame points (..., 3) -> pixel coordinates (..., 2)."""
        points_cam = np.asarray(points_cam, dtype=np.float64)
        z = points_cam[..., 2]
        px = self.fx * points_cam[..., 0] / z + self.cx
        py = self.fy * points_cam[..., 1] / z + self.cy
        return np.stack([px, py], axis=-1)


def backproject(pixel, depth: float, K: CameraIntrinsics, pose: PoseSE3) -> np.ndarray:
    """Lift a pixel at camera-frame depth `depth` to a world point.

    The ray has unit z, so the camera-frame z of the result equals `depth`.
    """
    if depth <= 0:
        raise ValueError("depth must be positive")
    ray = K.ray(np.asarray(pixel, dtype=np.float64))
    return pose.apply(depth * ray)
