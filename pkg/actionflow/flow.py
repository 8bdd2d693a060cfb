"""직선(rectified) 조건부 흐름: 보간점, 목표 속도, 손실, Euler 적분, 추론 스케줄.

SE(3) 에서는 이동을 선형 보간하고 회전은 측지선으로 보간한다. 목표 속도는
보간 시점 t 의 회전 프레임(body frame) 기준이다.
"""
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .autodiff import Tensor, reduce_sum, scale, square, sub
from .errors import InvalidArgumentError, ShapeError
from .lie import (
    Pose, geodesic_interp, nearest_rotation, sample_gaussian_translation, sample_uniform_rotation,
    so3_exp, so3_log,
)

DEFAULT_EXP_RATIO = 4.0


def _check_time(t, upper_open=False):
    t = np.asarray(t, dtype=np.float64)
    bad = (t < 0.0) | (t >= 1.0 if upper_open else t > 1.0)
    if not np.all(np.isfinite(t)) or np.any(bad):
        interval = "[0, 1)" if upper_open else "[0, 1]"
        raise InvalidArgumentError(f"flow time must lie in {interval}, got {t}")
    return t


def _same_shape(a, b, what):
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"{what}: shapes {np.shape(a)} and {np.shape(b)} differ")


# --- 유클리드 -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EuclidFlowSample:
    t: np.ndarray
    a0: np.ndarray
    a1: np.ndarray
    a_t: np.ndarray
    u: np.ndarray


def euclid_flow_point(a0, a1, t):
    a0 = np.asarray(a0, dtype=np.float64)
    a1 = np.asarray(a1, dtype=np.float64)
    _same_shape(a0, a1, "flow endpoints")
    t = _check_time(t)[..., None] if np.ndim(t) else _check_time(t)
    return t * a1 + (1.0 - t) * a0


def euclid_target(a0, a1):
    a0 = np.asarray(a0, dtype=np.float64)
    a1 = np.asarray(a1, dtype=np.float64)
    _same_shape(a0, a1, "flow endpoints")
    return a1 - a0


def euler_step_euclid(a, v, dt):
    a = np.asarray(a, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _same_shape(a, v, "euler step")
    return a + v * dt


def minibatch_ot_pairing(a0, a1):
    """제곱 거리 합이 최소인 a0 순열. a1[i] 는 a0[perm[i]] 와 짝지어진다."""
    a0 = np.asarray(a0, dtype=np.float64)
    a1 = np.asarray(a1, dtype=np.float64)
    _same_shape(a0, a1, "coupling endpoints")
    if a0.ndim != 2:
        raise ShapeError(f"coupling needs [B, d] batches, got {a0.shape}")
    rows, cols = linear_sum_assignment(cdist(a1, a0, "sqeuclidean"))
    perm = np.empty(len(a1), dtype=np.intp)
    perm[rows] = cols
    return perm


def make_euclid_sample(a1, rng, t=None, coupling="independent"):
    """배치 a1 [B, d] 에 대해 노이즈 a0 와 t 를 뽑아 학습 샘플을 만든다.

    coupling="minibatch-ot" 이면 배치 안에서 a0 를 재배열해 운송 비용이 최소인 짝을 쓴다.
    """
    a1 = np.asarray(a1, dtype=np.float64)
    a0 = rng.standard_normal(a1.shape)
    if coupling == "minibatch-ot":
        a0 = a0[minibatch_ot_pairing(a0, a1)]
    elif coupling != "independent":
        raise InvalidArgumentError(f"unknown coupling '{coupling}'")
    if t is None:
        t = rng.uniform(0.0, 1.0, size=a1.shape[:-1])
    t = _check_time(t, upper_open=True)
    return EuclidFlowSample(t=t, a0=a0, a1=a1, a_t=euclid_flow_point(a0, a1, t), u=euclid_target(a0, a1))


def euclid_cfm_loss(pred, target):
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    _same_shape(pred.data, target, "euclidean flow loss")
    batch = pred.shape[0] if pred.ndim > 1 else 1
    return scale(reduce_sum(square(sub(pred, target))), 1.0 / batch)


# --- SE(3) ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Se3FlowSample:
    t: np.ndarray
    T0: Pose
    T1: Pose
    T_t: Pose
    v_p_target: np.ndarray
    v_r_target: np.ndarray


def _pose_time(t, shape, upper_open=False):
    t = _check_time(t, upper_open)
    try:
        return np.broadcast_to(t, shape)
    except ValueError as exc:
        raise ShapeError(f"flow time of shape {t.shape} does not broadcast to poses {shape}") from exc


def se3_flow_point(T0, T1, t):
    if T0.shape != T1.shape:
        raise ShapeError(f"flow endpoints have shapes {T0.shape} and {T1.shape}")
    t = _pose_time(t, T0.shape)
    p = t[..., None] * T1.p + (1.0 - t[..., None]) * T0.p
    return Pose(geodesic_interp(T0.r, T1.r, t), p)


def se3_target(T0, T1, t):
    """보간점 T_t 의 body frame 속도 (v_p, v_r). 1/(1-t) 없이 상수형으로 계산한다."""
    if T0.shape != T1.shape:
        raise ShapeError(f"flow endpoints have shapes {T0.shape} and {T1.shape}")
    t = _pose_time(t, T0.shape, upper_open=True)
    r0t = np.swapaxes(T0.r, -1, -2)
    v_r = so3_log(r0t @ T1.r)
    r_t = geodesic_interp(T0.r, T1.r, t)
    v_p = (np.swapaxes(r_t, -1, -2) @ (T1.p - T0.p)[..., None])[..., 0]
    return v_p, v_r


def se3_conditional_velocity(T, T1, t):
    """현재 포즈 T 에서 T1 로 남은 시간 1-t 동안 가는 속도. 검증용 나눗셈 형태."""
    t = _pose_time(t, T.shape, upper_open=True)
    remaining = (1.0 - t)[..., None]
    rt = np.swapaxes(T.r, -1, -2)
    v_p = (rt @ (T1.p - T.p)[..., None])[..., 0] / remaining
    v_r = so3_log(rt @ T1.r) / remaining
    return v_p, v_r


def make_se3_sample(T0, T1, t):
    v_p, v_r = se3_target(T0, T1, t)
    return Se3FlowSample(
        t=np.asarray(t, dtype=np.float64), T0=T0, T1=T1,
        T_t=se3_flow_point(T0, T1, t), v_p_target=v_p, v_r_target=v_r,
    )


def euler_step_se3(T, v_p, v_r, dt, frame="body"):
    """p ← p + r·v_p·dt, r ← r·Exp(dt·v_r) 후 SO(3) 로 재투영.

    frame="world" 는 r 을 곱하지 않고 속도를 월드 좌표로 그대로 쓰는 변형(등변성 깨짐).
    """
    dt_arr = np.asarray(dt, dtype=np.float64)
    if not np.all(np.isfinite(dt_arr)) or np.any(dt_arr <= 0.0):
        raise InvalidArgumentError(f"euler step size must be positive, got {dt}")
    v_p = np.asarray(v_p, dtype=np.float64)
    v_r = np.asarray(v_r, dtype=np.float64)
    if v_p.shape != T.p.shape or v_r.shape != T.p.shape:
        raise ShapeError(f"velocities {v_p.shape}, {v_r.shape} do not match poses {T.shape}")
    dt_arr = dt_arr[..., None] if dt_arr.ndim else dt_arr
    step = so3_exp(dt_arr * v_r)
    if frame == "body":
        p = T.p + (T.r @ v_p[..., None])[..., 0] * dt_arr
        r = T.r @ step
    elif frame == "world":
        p = T.p + v_p * dt_arr
        r = step @ T.r
    else:
        raise InvalidArgumentError(f"unknown velocity frame '{frame}'")
    return Pose(nearest_rotation(r), p)


def cfm_loss(pred_vp, pred_vr, target_vp, target_vr):
    """‖v_p - ṗ‖² + ‖v_r - ṙ‖² 를 행동 토큰에 대해 합하고 배치 평균."""
    pred_vp = pred_vp if isinstance(pred_vp, Tensor) else Tensor(pred_vp)
    pred_vr = pred_vr if isinstance(pred_vr, Tensor) else Tensor(pred_vr)
    _same_shape(pred_vp.data, target_vp, "translation velocity loss")
    _same_shape(pred_vr.data, target_vr, "rotation velocity loss")
    _same_shape(pred_vp.data, pred_vr.data, "velocity loss")
    batch = pred_vp.shape[0] if pred_vp.ndim > 2 else 1
    total = reduce_sum(square(sub(pred_vp, target_vp))) + reduce_sum(square(sub(pred_vr, target_vr)))
    return scale(total, 1.0 / batch)


def sample_prior_pose(rng, translation_scale=1.0, size=()):
    r = sample_uniform_rotation(rng, size)
    return Pose(r, sample_gaussian_translation(rng, translation_scale, size))


# --- 스케줄 ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Schedule:
    timesteps: np.ndarray
    kind: str

    @property
    def steps(self):
        return self.timesteps.size - 1

    def intervals(self):
        """(t_k, dt_k) 쌍."""
        ts = self.timesteps
        return [(float(ts[k]), float(ts[k + 1] - ts[k])) for k in range(self.steps)]


def make_schedule(K, kind="linear", ratio=DEFAULT_EXP_RATIO):
    if isinstance(K, bool) or not isinstance(K, (int, np.integer)) or K < 1:
        raise InvalidArgumentError(f"step count must be a positive integer, got {K!r}")
    k = np.arange(K + 1, dtype=np.float64)
    if kind == "linear" or K == 1:
        ts = k / K
    elif kind == "exponential":
        if not ratio > 1.0:
            raise InvalidArgumentError(f"exponential schedule ratio must exceed 1, got {ratio}")
        # 첫 스텝이 마지막 스텝의 ratio 배, t=1 근처가 촘촘하다
        gamma = ratio ** (-1.0 / (K - 1))
        ts = (gamma ** k - 1.0) / (gamma ** K - 1.0)
    else:
        raise InvalidArgumentError(f"unknown schedule kind '{kind}'")
    ts[0], ts[-1] = 0.0, 1.0
    if np.any(np.diff(ts) <= 0.0):
        raise InvalidArgumentError(f"schedule with K={K} is not strictly increasing")
    return Schedule(timesteps=ts, kind=kind)
