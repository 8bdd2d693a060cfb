"""합성 데이터셋 생성기와 평가 지표."""
import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, ShapeError
from .ipa import TokenSet
from .lie import (
    Pose, geodesic_interp, pose_compose, random_z_rotation, so3_exp, so3_log, validate_rotation,
)

logger = logging.getLogger(__name__)

AGENT = "agent"
OBJECT = "object"
N_MODES = 8
MODE_RADIUS = 4.0
MODE_STD = 0.1


@dataclass(frozen=True, eq=False)
class Demonstration:
    """관측 토큰과 목표 행동 포즈 N 개. actions 의 i 번째가 i+1 시점 행동."""

    observation: TokenSet
    actions: Pose

    def __post_init__(self):
        if self.observation.action_indices:
            raise InvalidArgumentError("demonstration observation must not contain action tokens")
        if not self.actions.shape or self.actions.shape[-1] < 1:
            raise InvalidArgumentError("demonstration needs at least one action pose")
        validate_rotation(self.actions.r)
        validate_rotation(self.observation.poses.r)

    @property
    def n_actions(self):
        return self.actions.shape[-1]


# --- 유클리드 -------------------------------------------------------------

def eight_gaussian_modes(radius=MODE_RADIUS):
    angles = 2.0 * np.pi * np.arange(N_MODES) / N_MODES
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=-1)


def gen_eight_gaussians(n, seed, radius=MODE_RADIUS, std=MODE_STD):
    if n < N_MODES:
        raise InvalidArgumentError(f"eight-gaussians needs at least {N_MODES} points, got {n}")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % N_MODES
    return eight_gaussian_modes(radius)[labels] + std * rng.standard_normal((n, 2))


def gen_two_moons(n, seed, noise=0.05):
    if n < 2:
        raise InvalidArgumentError(f"two-moons needs at least 2 points, got {n}")
    rng = np.random.default_rng(seed)
    n_upper = n // 2
    theta = np.pi * rng.uniform(size=n)
    upper = np.stack([np.cos(theta[:n_upper]), np.sin(theta[:n_upper])], axis=-1)
    lower = np.stack([1.0 - np.cos(theta[n_upper:]), 0.5 - np.sin(theta[n_upper:])], axis=-1)
    return np.concatenate([upper, lower]) + noise * rng.standard_normal((n, 2))


def gen_points(spec):
    if spec.kind == "eight-gaussians":
        return gen_eight_gaussians(spec.n_demos, spec.seed, std=MODE_STD if spec.noise is None else spec.noise)
    if spec.kind == "two-moons":
        return gen_two_moons(spec.n_demos, spec.seed, noise=0.05 if spec.noise is None else spec.noise)
    raise InvalidArgumentError(f"task '{spec.kind}' is not a point dataset")


# --- se3-reach -------------------------------------------------------------

def grasp_offset(spec):
    return Pose(so3_exp(np.asarray(spec.grasp_rotation)), np.asarray(spec.grasp_translation, dtype=np.float64))


def expert_actions(agent, target, n):
    """agent 에서 target 까지 이동은 선형, 회전은 측지선으로 N 등분. 마지막은 target 그대로."""
    s = np.arange(1, n + 1) / n
    p = s[:, None] * target.p + (1.0 - s[:, None]) * agent.p
    r = geodesic_interp(np.broadcast_to(agent.r, (n, 3, 3)), np.broadcast_to(target.r, (n, 3, 3)), s)
    return Pose(r, p)


def reach_observation(agent, obj, obs_history):
    """과거 agent 포즈 obs_history 개(모두 agent) + 물체 하나. 특징은 [is_agent, is_object, lag]."""
    lags = (obs_history - 1 - np.arange(obs_history)) / obs_history
    features = np.zeros((obs_history + 1, 3))
    features[:obs_history, 0] = 1.0
    features[:obs_history, 2] = lags
    features[obs_history, 1] = 1.0
    poses = Pose(
        np.concatenate([np.broadcast_to(agent.r, (obs_history, 3, 3)), obj.r[None]]),
        np.concatenate([np.broadcast_to(agent.p, (obs_history, 3)), obj.p[None]]),
    )
    return TokenSet(poses, features, (AGENT,) * obs_history + (OBJECT,))


def reach_scene(agent, obj, spec, rng=None):
    actions = expert_actions(agent, pose_compose(obj, grasp_offset(spec)), spec.n_actions)
    if spec.noise:
        if rng is None:
            raise InvalidArgumentError("noisy expert actions need an rng")
        n = spec.n_actions
        jitter = Pose(so3_exp(spec.noise * rng.standard_normal((n, 3))), spec.noise * rng.standard_normal((n, 3)))
        actions = Pose(actions.r @ jitter.r, actions.p + jitter.p)
    return Demonstration(reach_observation(agent, obj, spec.obs_history), actions)


def sample_object_pose(spec, rng):
    p = rng.uniform(spec.object_low, spec.object_high)
    yaw = rng.uniform(spec.yaw_low, spec.yaw_high)
    return Pose(random_z_rotation(yaw), p)


def gen_se3_reach(spec):
    if spec.kind != "se3-reach":
        raise InvalidArgumentError(f"task '{spec.kind}' is not a pose dataset")
    rng = np.random.default_rng(spec.seed)
    agent = Pose.identity()
    scenes = [reach_scene(agent, sample_object_pose(spec, rng), spec, rng) for _ in range(spec.n_demos)]
    logger.debug("generated %d se3-reach scenes (seed %d)", len(scenes), spec.seed)
    return scenes


# --- 지표 ------------------------------------------------------------------

def pose_error(pred, target):
    """(이동 오차, 회전 측지 오차[도])."""
    translation = np.linalg.norm(pred.p - target.p, axis=-1)
    rt = np.swapaxes(pred.r, -1, -2) @ target.r
    rotation = np.degrees(np.linalg.norm(so3_log(rt), axis=-1))
    return translation, rotation


@dataclass(frozen=True)
class ModeCoverage:
    covered: int
    fraction: float
    counts: tuple


def mode_coverage(samples, modes, radius):
    if not radius > 0.0:
        raise InvalidArgumentError(f"coverage radius must be positive, got {radius}")
    samples = np.asarray(samples, dtype=np.float64)
    modes = np.asarray(modes, dtype=np.float64)
    if samples.ndim != 2 or modes.ndim != 2 or samples.shape[-1] != modes.shape[-1]:
        raise ShapeError(f"samples {samples.shape} and modes {modes.shape} are incompatible")
    dist = np.linalg.norm(samples[:, None, :] - modes[None, :, :], axis=-1)
    nearest = dist.argmin(axis=-1)
    inside = dist[np.arange(len(samples)), nearest] <= radius
    counts = np.bincount(nearest[inside], minlength=len(modes))
    return ModeCoverage(
        covered=int(np.count_nonzero(counts)),
        fraction=float(inside.mean()) if len(samples) else 0.0,
        counts=tuple(int(c) for c in counts),
    )


def nearest_data_distance(samples, data):
    """각 샘플에서 가장 가까운 데이터 점까지 거리의 평균."""
    samples = np.asarray(samples, dtype=np.float64)
    data = np.asarray(data, dtype=np.float64)
    dist = np.linalg.norm(samples[:, None, :] - data[None, :, :], axis=-1)
    return float(dist.min(axis=-1).mean())
