"""SO(3)/SE(3) 연산. 모든 함수는 (..., 3) / (..., 3, 3) 배치 입력을 그대로 받는다."""
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation as ScipyRotation

from .errors import InvalidArgumentError, NumericalError

SMALL_ANGLE = 1e-8
NEAR_PI = 1e-6
ROTATION_TOL = 1e-6
ORTHONORMAL_EPS = 1e-12

_EYE = np.eye(3)


def _swap(m):
    return np.swapaxes(m, -1, -2)


def hat(w):
    w = np.asarray(w, dtype=np.float64)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def vee(m):
    m = np.asarray(m, dtype=np.float64)
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def validate_rotation(m, tol=ROTATION_TOL):
    m = np.asarray(m, dtype=np.float64)
    if m.shape[-2:] != (3, 3):
        raise InvalidArgumentError(f"rotation must have trailing shape (3, 3), got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidArgumentError("rotation has non-finite entries")
    gram_err = np.abs(_swap(m) @ m - _EYE).max(initial=0.0)
    det_err = np.abs(np.linalg.det(m) - 1.0).max(initial=0.0)
    if gram_err > tol or det_err > tol:
        raise InvalidArgumentError(
            f"not a rotation: |m^T m - I| = {gram_err:.3g}, |det - 1| = {det_err:.3g}"
        )
    return m


def so3_exp(w):
    w = np.asarray(w, dtype=np.float64)
    if w.shape[-1:] != (3,):
        raise InvalidArgumentError(f"axis-angle must have trailing shape (3,), got {w.shape}")
    if not np.all(np.isfinite(w)):
        raise InvalidArgumentError("axis-angle has non-finite entries")
    theta = np.linalg.norm(w, axis=-1)[..., None, None]
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    theta2 = theta * theta
    # 2 sin^2(θ/2) / θ^2 == (1 - cos θ) / θ^2, 작은 각에서 상쇄 오차가 없다
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta2 / 24.0, 2.0 * np.sin(0.5 * safe) ** 2 / (safe * safe))
    k = hat(w)
    return _EYE + a * k + b * (k @ k)


def _log_near_pi(r, theta, skew):
    # (r + r^T)/2 의 대칭부로 축을 읽는다. skew 부분은 부호만 정한다.
    sym = 0.5 * (r + _swap(r))
    b = 0.5 * (sym + _EYE)
    diag = np.diagonal(b, axis1=-2, axis2=-1)
    rows = np.arange(r.shape[0])
    i = np.argmax(diag, axis=-1)
    axis = b[rows, :, i] / np.sqrt(np.maximum(diag[rows, i], 1e-300))[:, None]
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    j = np.argmax(np.abs(skew), axis=-1)
    sign = np.sign(skew[rows, j] * axis[rows, j])
    sign = np.where(sign == 0.0, 1.0, sign)
    return (theta * sign)[:, None] * axis


def so3_log(r):
    r = validate_rotation(r)
    skew = vee(r - _swap(r))  # 2 sin θ · axis
    sin_theta = 0.5 * np.linalg.norm(skew, axis=-1)
    cos_theta = 0.5 * (np.trace(r, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(sin_theta, cos_theta)
    small = theta < SMALL_ANGLE
    near_pi = (np.pi - theta) < NEAR_PI
    denom = np.where(small | near_pi, 1.0, 2.0 * sin_theta)
    scale = np.where(small, 0.5 * (1.0 + theta * theta / 6.0), theta / denom)
    w = scale[..., None] * skew
    if np.any(near_pi):
        w[near_pi] = _log_near_pi(r[near_pi], theta[near_pi], skew[near_pi])
    return w


def rotation_angle(r):
    return np.linalg.norm(so3_log(r), axis=-1)


def random_z_rotation(angle):
    angle = np.asarray(angle, dtype=np.float64)
    w = np.zeros(angle.shape + (3,))
    w[..., 2] = angle
    return so3_exp(w)


def geodesic_interp(r0, r1, t):
    t = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t)) or np.any((t < 0.0) | (t > 1.0)):
        raise InvalidArgumentError(f"interpolation time must lie in [0, 1], got {t}")
    r0 = np.asarray(r0, dtype=np.float64)
    r1 = np.asarray(r1, dtype=np.float64)
    delta = so3_log(_swap(r0) @ r1)
    out = r0 @ so3_exp(t[..., None] * delta)
    # 양 끝점은 정확히 돌려준다
    out = np.where((t == 0.0)[..., None, None], r0, out)
    out = np.where((t == 1.0)[..., None, None], r1, out)
    return out


def nearest_rotation(m):
    m = np.asarray(m, dtype=np.float64)
    if m.shape[-2:] != (3, 3):
        raise InvalidArgumentError(f"matrix must have trailing shape (3, 3), got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericalError("cannot project a non-finite matrix onto SO(3)")
    u, s, vt = np.linalg.svd(m)
    if np.any(s[..., -1] <= 1e-12 * np.maximum(s[..., 0], 1.0)):
        raise NumericalError("cannot project a singular matrix onto SO(3)")
    polar = u @ vt
    if np.any(np.linalg.det(polar) < 0.0):
        raise NumericalError("polar factor is a reflection, matrix has negative determinant")
    # 이미 직교인 행렬은 그대로 (Euler 체인에서 영벡터 갱신이 비트 단위로 보존되도록)
    drift = np.abs(_swap(m) @ m - _EYE).max(axis=(-2, -1))
    return np.where((drift <= ORTHONORMAL_EPS)[..., None, None], m, polar)


def sample_uniform_rotation(rng, size=()):
    shape = (size,) if isinstance(size, int) else tuple(size)
    q = rng.standard_normal(shape + (4,))
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    mats = ScipyRotation.from_quat(q.reshape(-1, 4)).as_matrix()
    return mats.reshape(shape + (3, 3))


def sample_gaussian_translation(rng, scale, size=()):
    if not scale > 0.0:
        raise InvalidArgumentError(f"translation scale must be positive, got {scale}")
    shape = (size,) if isinstance(size, int) else tuple(size)
    return scale * rng.standard_normal(shape + (3,))


@dataclass(frozen=True, eq=False)
class Pose:
    """회전 r (..., 3, 3) 과 이동 p (..., 3). 앞쪽 축은 여러 포즈를 쌓은 것."""

    r: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64)
        p = np.asarray(self.p, dtype=np.float64)
        if r.shape[-2:] != (3, 3) or p.shape[-1:] != (3,) or r.shape[:-2] != p.shape[:-1]:
            raise InvalidArgumentError(f"inconsistent pose shapes r={r.shape} p={p.shape}")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "p", p)

    @classmethod
    def identity(cls, shape=()):
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        return cls(np.broadcast_to(_EYE, shape + (3, 3)).copy(), np.zeros(shape + (3,)))

    @property
    def shape(self):
        return self.p.shape[:-1]

    def __len__(self):
        return self.shape[0]

    def __getitem__(self, index):
        return Pose(self.r[index], self.p[index])

    def expand(self, axis=-1):
        # 배치 포즈를 토큰 축에 브로드캐스트할 때 쓴다
        return Pose(np.expand_dims(self.r, axis - 2), np.expand_dims(self.p, axis - 1))


def stack_poses(poses, axis=0):
    return Pose(np.stack([x.r for x in poses], axis=axis), np.stack([x.p for x in poses], axis=axis))


def concat_poses(poses, axis=-1):
    return Pose(
        np.concatenate([x.r for x in poses], axis=axis - 2 if axis < 0 else axis),
        np.concatenate([x.p for x in poses], axis=axis - 1 if axis < 0 else axis),
    )


def pose_compose(a, b):
    return Pose(a.r @ b.r, (a.r @ b.p[..., None])[..., 0] + a.p)


def pose_inverse(a):
    rt = _swap(a.r)
    return Pose(rt, -(rt @ a.p[..., None])[..., 0])


def pose_to_array12(pose):
    lead = pose.shape
    return np.concatenate([pose.r.reshape(lead + (9,)), pose.p], axis=-1)


def pose_from_array12(values, tol=ROTATION_TOL):
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1:] != (12,):
        raise InvalidArgumentError(f"serialized pose needs 12 values, got shape {values.shape}")
    lead = values.shape[:-1]
    r = validate_rotation(values[..., :9].reshape(lead + (3, 3)), tol)
    return Pose(r, values[..., 9:])


def pose_to_bytes(pose):
    return pose_to_array12(pose).astype("<f8").tobytes()


def pose_from_bytes(blob):
    values = np.frombuffer(blob, dtype="<f8")
    if values.size % 12:
        raise InvalidArgumentError(f"pose payload of {len(blob)} bytes is not a multiple of 96")
    values = values.astype(np.float64)
    return pose_from_array12(values.reshape(-1, 12) if values.size > 12 else values)
