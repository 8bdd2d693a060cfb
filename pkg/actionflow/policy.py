import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from time import perf_counter

import numpy as np

from .autodiff import Tape, Tensor, reshape, split, take
from .errors import CheckpointError, InvalidArgumentError, NumericalError, ShapeError
from .flow import (
    DEFAULT_EXP_RATIO, cfm_loss, euclid_cfm_loss, euler_step_euclid, euler_step_se3, make_euclid_sample,
    make_schedule, sample_prior_pose, se3_flow_point, se3_target,
)
from .ipa import ACTION, IpaWeights, TokenSet, adaptation_normalize, invariant_transformer_forward, stack_token_sets
from .lie import Pose, pose_compose, rotation_angle, stack_poses
from .net import LinearLayer, TimeEmbedding
from .tasks import AGENT, Demonstration, eight_gaussian_modes, mode_coverage, pose_error

logger = logging.getLogger(__name__)

__all__ = [
    "Adam", "Demonstration", "EquivarianceReport", "EvalMetrics", "PolicyWeights", "SceneResult",
    "anchor_index", "check_equivariance", "draw_initial_poses", "draw_training_targets",
    "evaluate", "evaluate_points", "generate_actions", "generate_points", "init_policy_weights",
    "learning_rate_at", "timed_generation", "train", "train_step", "train_step_euclid",
]


@dataclass(eq=False)
class PolicyWeights:
    obs_encoder: LinearLayer | None
    action_features: Tensor  # [N, width]
    time: TimeEmbedding
    ipa: IpaWeights
    state_encoder: LinearLayer | None = None

    @property
    def n_actions(self):
        return self.action_features.shape[0]

    @property
    def obs_dim(self):
        return self.obs_encoder.in_features if self.obs_encoder is not None else 0

    @property
    def state_dim(self):
        return self.state_encoder.in_features if self.state_encoder is not None else None

    def named_parameters(self):
        if self.obs_encoder is not None:
            yield from self.obs_encoder.named_parameters("obs_encoder.")
        yield "action_features", self.action_features
        yield from self.time.named_parameters("time.")
        yield from self.ipa.named_parameters()
        if self.state_encoder is not None:
            yield from self.state_encoder.named_parameters("state_encoder.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, arrays):
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(arrays))
        extra = sorted(set(arrays) - set(params))
        if missing or extra:
            raise CheckpointError(f"parameter names differ: missing {missing}, unexpected {extra}")
        for name, p in params.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {value.shape}, model shape {p.shape}")
            p.data[...] = value


def init_policy_weights(ipa_config, obs_dim, n_actions, rng, state_dim=None, zero_head=True):
    width = ipa_config.width
    if n_actions < 1:
        raise InvalidArgumentError(f"policy needs at least one action token, got {n_actions}")
    obs_encoder = LinearLayer.initialize(obs_dim, width, rng) if obs_dim else None
    action_features = Tensor(rng.standard_normal((n_actions, width)))
    time = TimeEmbedding.initialize(width, rng)
    ipa = IpaWeights.initialize(ipa_config, rng, zero_head=zero_head)
    state_encoder = LinearLayer.initialize(state_dim, width, rng) if state_dim else None
    return PolicyWeights(obs_encoder, action_features, time, ipa, state_encoder)


class Adam:
    def __init__(self, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, named_params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in named_params:
            g = grads.of(p)
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# --- 포즈 초기화 ------------------------------------------------------------

def anchor_index(observation, override=None):
    n = len(observation)
    if override is not None:
        if not 0 <= override < n or observation.kinds[override] == ACTION:
            raise InvalidArgumentError(f"anchor index {override} is not an observation token")
        return override
    agents = [i for i, kind in enumerate(observation.kinds) if kind == AGENT]
    if not agents:
        raise InvalidArgumentError("observation has no agent token; set anchor_index")
    return agents[-1]


def anchor_pose(observation, override=None):
    i = anchor_index(observation, override)
    return Pose(observation.poses.r[..., i, :, :], observation.poses.p[..., i, :])


def draw_initial_poses(rng, anchor, n_actions, translation_scale):
    """anchor 프레임에서 뽑은 사전분포 포즈를 월드 좌표로 옮긴다."""
    local = sample_prior_pose(rng, translation_scale, size=anchor.shape + (n_actions,))
    return pose_compose(anchor.expand(), local)


# --- 학습 ------------------------------------------------------------------

@dataclass(eq=False)
class TrainingDraw:
    tokens: TokenSet  # 정규화된 관측 + 행동 토큰, [B, n+N]
    t: np.ndarray
    target_vp: np.ndarray
    target_vr: np.ndarray


def _draw_times(rng, size, k_train):
    if k_train:
        return rng.integers(0, k_train, size=size) / k_train
    return rng.uniform(0.0, 1.0, size=size)


def draw_training_targets(batch, rng, config):
    if not batch:
        raise InvalidArgumentError("training batch is empty")
    obs = stack_token_sets([demo.observation for demo in batch])
    actions = stack_poses([demo.actions for demo in batch])
    anchor = anchor_pose(obs, config.anchor_index)
    t = _draw_times(rng, len(batch), config.k_train)
    initial = draw_initial_poses(rng, anchor, actions.shape[-1], config.prior_translation_scale)
    current = se3_flow_point(initial, actions, t[:, None])
    v_p, v_r = se3_target(initial, actions, t[:, None])
    tokens = adaptation_normalize(obs.append(current), anchor, config.adaptation_scale)
    return TrainingDraw(tokens=tokens, t=t, target_vp=v_p, target_vr=v_r)


def _parameter_norms(weights):
    return {name: float(np.linalg.norm(p.data)) for name, p in weights.named_parameters()}


def _optimize(weights, optimizer, loss_fn, what):
    params = list(weights.named_parameters())
    with Tape() as tape:
        tape.watch(*[p for _, p in params])
        try:
            loss = loss_fn()
        except NumericalError as exc:
            norms = _parameter_norms(weights)
            worst = max(norms, key=norms.get)
            logger.warning("%s diverged: lr=%g, largest parameter %s norm %.3g", what, optimizer.lr, worst, norms[worst])
            raise NumericalError(f"non-finite {what} loss (lr={optimizer.lr}, largest parameter {worst}={norms[worst]:.3g}): {exc}") from exc
        grads = tape.backward(loss)
        optimizer.step(params, grads)
    return loss.item()


def train_step(weights, batch, rng, config, optimizer=None):
    """한 번의 Adam 갱신. (loss, weights) 를 돌려준다."""
    draw = draw_training_targets(batch, rng, config)
    optimizer = optimizer or Adam(config.learning_rate)

    def loss_fn():
        v = invariant_transformer_forward(draw.tokens, draw.t, config.ipa, weights)
        v_p, v_r = split(v, [3, 3], axis=-1)
        return cfm_loss(v_p, v_r, draw.target_vp, draw.target_vr)

    return _optimize(weights, optimizer, loss_fn, "flow matching"), weights


def point_tokens(batch_size):
    # 유클리드 경로: 항등 포즈의 행동 토큰 하나
    return TokenSet(Pose.identity((batch_size, 1)), np.zeros((batch_size, 1, 1)), (ACTION,))


def _point_velocity(weights, tokens, t, config, state):
    dim = state.shape[-1]
    v = invariant_transformer_forward(tokens, t, config.ipa, weights, action_state=reshape(state, (state.shape[0], 1, dim)))
    return reshape(take(v, np.arange(dim), axis=-1), state.shape)


def train_step_euclid(weights, points, rng, config, optimizer=None):
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or not len(points):
        raise InvalidArgumentError(f"point batch must be a non-empty [B, d] array, got {points.shape}")
    t = _draw_times(rng, len(points), config.k_train)
    sample = make_euclid_sample(points, rng, t, coupling=config.coupling)
    optimizer = optimizer or Adam(config.learning_rate)
    tokens = point_tokens(len(points))

    def loss_fn():
        pred = _point_velocity(weights, tokens, sample.t, config, Tensor(sample.a_t))
        return euclid_cfm_loss(pred, sample.u)

    return _optimize(weights, optimizer, loss_fn, "euclidean flow matching"), weights


def learning_rate_at(config, step, total_steps):
    """step 번째(0부터) 갱신의 학습률. cosine 은 learning_rate 에서 final_lr_ratio 배까지 줄인다."""
    if config.lr_schedule == "constant" or total_steps <= 1:
        return config.learning_rate
    progress = min(step, total_steps - 1) / (total_steps - 1)
    floor = config.final_lr_ratio
    return config.learning_rate * (floor + (1.0 - floor) * 0.5 * (1.0 + np.cos(np.pi * progress)))


def train(weights, data, config, rng, optimizer=None, on_step=None):
    """config.epochs 동안 섞은 미니배치로 학습. [(epoch, step, loss)] 기록을 돌려준다."""
    euclid = isinstance(data, np.ndarray)
    n = len(data)
    if not n:
        raise InvalidArgumentError("training data is empty")
    optimizer = optimizer or Adam(config.learning_rate)
    total_steps = config.epochs * -(-n // config.batch_size)
    records = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            optimizer.lr = learning_rate_at(config, step, total_steps)
            if euclid:
                loss, _ = train_step_euclid(weights, data[idx], rng, config, optimizer)
            else:
                loss, _ = train_step(weights, [data[i] for i in idx], rng, config, optimizer)
            records.append((epoch, step, loss))
            losses.append(loss)
            step += 1
            if on_step is not None:
                on_step(epoch, step, loss)
        logger.info("epoch %d: mean loss %.6g over %d steps", epoch, float(np.mean(losses)), len(losses))
    return records


# --- 생성 ------------------------------------------------------------------

def generate_actions(weights, observation, K, schedule_kind, config, exp_ratio=DEFAULT_EXP_RATIO,
                     rng=None, initial=None, frame="body"):
    """Euler 적분으로 행동 포즈 N 개를 월드 좌표로 만든다. 매 스텝 anchor 기준으로 정규화한다."""
    anchor = anchor_pose(observation, config.anchor_index)
    if initial is None:
        if rng is None:
            raise InvalidArgumentError("either rng or initial poses are required")
        initial = draw_initial_poses(rng, anchor, weights.n_actions, config.prior_translation_scale)
    if initial.shape != anchor.shape + (weights.n_actions,):
        raise ShapeError(f"initial poses {initial.shape} do not match {weights.n_actions} action tokens")
    poses = initial
    for t, dt in make_schedule(K, schedule_kind, exp_ratio).intervals():
        tokens = adaptation_normalize(observation.append(poses), anchor, config.adaptation_scale)
        v = invariant_transformer_forward(tokens, t, config.ipa, weights).data
        poses = euler_step_se3(poses, v[..., :3], v[..., 3:], dt, frame=frame)
    return poses


def timed_generation(weights, observations, K, schedule_kind, config, exp_ratio=DEFAULT_EXP_RATIO, seed=0):
    """장면을 하나씩 순서대로 생성한다. (행동 포즈 목록, 장면별 지연시간[s] 목록)."""
    streams = np.random.SeedSequence(seed).spawn(len(observations))
    results, latencies = [], []
    for observation, stream in zip(observations, streams):
        start = perf_counter()
        results.append(generate_actions(weights, observation, K, schedule_kind, config, exp_ratio,
                                        rng=np.random.default_rng(stream)))
        latencies.append(perf_counter() - start)
    return results, latencies


def generate_points(weights, n, K, schedule_kind, config, exp_ratio=DEFAULT_EXP_RATIO, rng=None, initial=None):
    if weights.state_encoder is None:
        raise InvalidArgumentError("policy was not built for point data")
    if initial is None:
        if rng is None:
            raise InvalidArgumentError("either rng or initial points are required")
        initial = rng.standard_normal((n, weights.state_dim))
    points = np.asarray(initial, dtype=np.float64)
    tokens = point_tokens(len(points))
    for t, dt in make_schedule(K, schedule_kind, exp_ratio).intervals():
        v = _point_velocity(weights, tokens, t, config, Tensor(points)).data
        points = euler_step_euclid(points, v, dt)
    return points


# --- 등변성 / 평가 -----------------------------------------------------------

@dataclass(frozen=True)
class EquivarianceReport:
    max_translation: float
    max_rotation: float

    @property
    def max_deviation(self):
        return max(self.max_translation, self.max_rotation)

    def passed(self, tol):
        return self.max_deviation < tol


def pose_deviation(a, b):
    translation = np.linalg.norm(a.p - b.p, axis=-1)
    same = np.all(a.r == b.r, axis=(-2, -1))
    rel = np.swapaxes(a.r, -1, -2) @ b.r
    rotation = np.where(same, 0.0, rotation_angle(rel))
    return translation, rotation


def check_equivariance(weights, observation, delta, seed, K, config, schedule_kind="linear",
                       exp_ratio=DEFAULT_EXP_RATIO, frame="body"):
    rng = np.random.default_rng(seed)
    anchor = anchor_pose(observation, config.anchor_index)
    initial = draw_initial_poses(rng, anchor, weights.n_actions, config.prior_translation_scale)
    base = generate_actions(weights, observation, K, schedule_kind, config, exp_ratio, initial=initial, frame=frame)
    moved = generate_actions(
        weights, observation.transformed(delta), K, schedule_kind, config, exp_ratio,
        initial=pose_compose(delta, initial), frame=frame,
    )
    translation, rotation = pose_deviation(pose_compose(delta, base), moved)
    return EquivarianceReport(float(translation.max()), float(rotation.max()))


@dataclass(frozen=True)
class SceneResult:
    index: int
    translation: float
    rotation_deg: float


@dataclass(frozen=True)
class EvalMetrics:
    mean_translation: float
    max_translation: float
    mean_rotation_deg: float
    max_rotation_deg: float
    scenes: list = field(default_factory=list)


def evaluate(weights, demos, K, schedule_kind, config, seed=0, workers=None, delta=None,
             exp_ratio=DEFAULT_EXP_RATIO):
    """장면별 마지막 행동 포즈 오차. 장면마다 seed 에서 갈라진 독립 난수열을 쓴다."""
    if not demos:
        raise InvalidArgumentError("no scenes to evaluate")
    streams = np.random.SeedSequence(seed).spawn(len(demos))

    def run(i):
        demo = demos[i]
        rng = np.random.default_rng(streams[i])
        observation, target = demo.observation, demo.actions
        initial = draw_initial_poses(rng, anchor_pose(observation, config.anchor_index), weights.n_actions,
                                     config.prior_translation_scale)
        if delta is not None:
            observation = observation.transformed(delta)
            initial = pose_compose(delta, initial)
            target = pose_compose(delta, target)
        pred = generate_actions(weights, observation, K, schedule_kind, config, exp_ratio, initial=initial)
        translation, rotation = pose_error(pred[-1], target[-1])
        logger.debug("scene %d: translation %.4g, rotation %.4g deg", i, translation, rotation)
        return SceneResult(i, float(translation), float(rotation))

    with ThreadPoolExecutor(max_workers=workers) as executor:
        scenes = list(executor.map(run, range(len(demos))))

    t_err = np.array([s.translation for s in scenes])
    r_err = np.array([s.rotation_deg for s in scenes])
    metrics = EvalMetrics(
        mean_translation=float(t_err.mean()), max_translation=float(t_err.max()),
        mean_rotation_deg=float(r_err.mean()), max_rotation_deg=float(r_err.max()), scenes=scenes,
    )
    logger.info("evaluated %d scenes at K=%d (%s): translation %.4g, rotation %.4g deg",
                len(scenes), K, schedule_kind, metrics.mean_translation, metrics.mean_rotation_deg)
    return metrics


def evaluate_points(weights, n_samples, K, schedule_kind, config, seed=0, modes=None, radius=0.3,
                    exp_ratio=DEFAULT_EXP_RATIO):
    rng = np.random.default_rng(seed)
    samples = generate_points(weights, n_samples, K, schedule_kind, config, exp_ratio, rng=rng)
    coverage = mode_coverage(samples, eight_gaussian_modes() if modes is None else modes, radius)
    logger.info("K=%d (%s): %d modes covered, %.3f within %.3g", K, schedule_kind, coverage.covered, coverage.fraction, radius)
    return coverage
