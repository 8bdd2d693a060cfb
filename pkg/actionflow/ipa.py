"""포즈를 인식하는 어텐션(IPA)과 그 위에 쌓은 SE(3) 불변 트랜스포머.

전역 강체 변환을 토큰 포즈 전체에 걸어도 출력이 바뀌지 않는다. 점 쿼리/키/값은
각 토큰의 로컬 프레임에서 만들어 전역 좌표로 옮긴 뒤 비교하고, 모인 점 값은 다시
질의 토큰의 로컬 프레임으로 되돌린다.
"""
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor, add, broadcast_to, concat, layernorm, matmul, reduce_sum, reshape, scale, softmax,
    sqrt, square, sub, swapaxes, take,
)
from .errors import InvalidArgumentError, ShapeError
from .lie import Pose, concat_poses, pose_compose, pose_inverse, validate_rotation
from .net import (
    LAYERNORM_EPS, EncoderBlock, LinearLayer, encoder_forward, linear_forward, merge_heads,
    split_heads, time_embed,
)

ACTION = "action"
POINT_NORM_EPS = 1e-8


@dataclass(eq=False)
class IpaLayerWeights:
    q: LinearLayer
    k: LinearLayer
    v: LinearLayer
    q_points: LinearLayer
    k_points: LinearLayer
    v_points: LinearLayer
    out: LinearLayer
    norm_gain: Tensor
    norm_bias: Tensor
    encoder: EncoderBlock

    @classmethod
    def initialize(cls, config, rng):
        w, h = config.width, config.n_head
        merged = h * (config.c + 4 * config.n_point_values)
        return cls(
            q=LinearLayer.initialize(w, h * config.c, rng),
            k=LinearLayer.initialize(w, h * config.c, rng),
            v=LinearLayer.initialize(w, h * config.c, rng),
            q_points=LinearLayer.initialize(w, h * 3 * config.n_query_points, rng),
            k_points=LinearLayer.initialize(w, h * 3 * config.n_query_points, rng),
            v_points=LinearLayer.initialize(w, h * 3 * config.n_point_values, rng),
            out=LinearLayer.initialize(merged, w, rng),
            norm_gain=Tensor(np.ones(w)),
            norm_bias=Tensor(np.zeros(w)),
            encoder=EncoderBlock.initialize(w, h, config.ff_width, rng),
        )

    def named_parameters(self, prefix=""):
        for name in ("q", "k", "v", "q_points", "k_points", "v_points", "out"):
            yield from getattr(self, name).named_parameters(f"{prefix}ipa.{name}.")
        yield f"{prefix}ipa.norm_gain", self.norm_gain
        yield f"{prefix}ipa.norm_bias", self.norm_bias
        yield from self.encoder.named_parameters(f"{prefix}encoder.")


@dataclass(eq=False)
class IpaWeights:
    layers: list
    head: LinearLayer  # width -> 6

    @classmethod
    def initialize(cls, config, rng, zero_head=True):
        layers = [IpaLayerWeights.initialize(config, rng) for _ in range(config.n_ipa_layers)]
        return cls(layers=layers, head=LinearLayer.initialize(config.width, 6, rng, zero=zero_head))

    def named_parameters(self, prefix=""):
        for i, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}layers.{i}.")
        yield from self.head.named_parameters(f"{prefix}head.")


@dataclass(frozen=True, eq=False)
class TokenSet:
    """포즈 (..., n) 와 원시 특징 (..., n, d). kinds 는 토큰별 종류 문자열."""

    poses: Pose
    features: np.ndarray
    kinds: tuple

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        kinds = tuple(self.kinds)
        n = self.poses.shape[-1] if self.poses.shape else None
        if n is None or features.ndim < 2 or features.shape[:-1] != self.poses.shape or len(kinds) != n:
            raise ShapeError(
                f"token set needs matching token axes: poses {self.poses.shape}, "
                f"features {features.shape}, kinds {len(kinds)}"
            )
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "kinds", kinds)

    def __len__(self):
        return len(self.kinds)

    @property
    def batch_shape(self):
        return self.poses.shape[:-1]

    @property
    def action_indices(self):
        return [i for i, kind in enumerate(self.kinds) if kind == ACTION]

    @property
    def observation_indices(self):
        return [i for i, kind in enumerate(self.kinds) if kind != ACTION]

    def with_poses(self, poses):
        return TokenSet(poses, self.features, self.kinds)

    def transformed(self, delta):
        """delta 를 왼쪽에서 모든 포즈에 곱한다."""
        if delta.shape:
            delta = delta.expand()
        return self.with_poses(pose_compose(delta, self.poses))

    def append(self, poses, kind=ACTION):
        """같은 종류의 토큰을 뒤에 붙인다. 특징은 0 으로 채운다."""
        n_new = poses.shape[-1]
        pad = np.zeros(poses.shape + (self.features.shape[-1],))
        return TokenSet(
            concat_poses([self.poses, poses]),
            np.concatenate([self.features, pad], axis=-2),
            self.kinds + (kind,) * n_new,
        )

    def take(self, indices):
        indices = list(indices)
        return TokenSet(
            Pose(self.poses.r[..., indices, :, :], self.poses.p[..., indices, :]),
            self.features[..., indices, :],
            tuple(self.kinds[i] for i in indices),
        )


def stack_token_sets(token_sets):
    token_sets = list(token_sets)
    kinds = token_sets[0].kinds
    if any(ts.kinds != kinds for ts in token_sets):
        raise ShapeError("token sets to stack must share the same token kinds")
    return TokenSet(
        Pose(np.stack([ts.poses.r for ts in token_sets]), np.stack([ts.poses.p for ts in token_sets])),
        np.stack([ts.features for ts in token_sets]),
        kinds,
    )


def ipa_constants(config):
    for name in ("c", "n_query_points"):
        value = getattr(config, name)
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
            raise InvalidArgumentError(f"{name} must be a positive integer, got {value!r}")
    w_l = 1.0 / math.sqrt(3.0 * config.c)
    w_c = 0.5 * math.sqrt(2.0 / (27.0 * config.n_query_points))
    return w_l, w_c


def _to_global(points, r, p):
    # points [..., n, m, 3] 로컬 -> r·x + p
    return add(matmul(points, np.swapaxes(r, -1, -2)), p[..., None, :])


def _to_local(points, r, p):
    # r^T (x - p), 행벡터로는 (x - p) r
    return matmul(sub(points, p[..., None, :]), r)


def _point_heads(x, n_head, n_points):
    # [..., n, H*P*3] -> [..., n, H*P, 3]
    *lead, n, _ = x.shape
    return reshape(x, (*lead, n, n_head * n_points, 3))


def _points_by_head(points, n_head):
    # [..., n, H*P, 3] -> [..., H, n, P*3]
    *lead, n, hp, _ = points.shape
    return split_heads(reshape(points, (*lead, n, hp * 3)), n_head)


def ipa_logits(x, r, p, config, layer):
    """softmax 전 헤드별 점수 [..., H, n, n]: w_l·q·k - w_c·Σ_p ‖q_i - k_j‖²."""
    h = config.n_head
    w_l, w_c = ipa_constants(config)
    q = split_heads(linear_forward(layer.q, x), h)
    k = split_heads(linear_forward(layer.k, x), h)
    q_glob = _points_by_head(_to_global(_point_heads(linear_forward(layer.q_points, x), h, config.n_query_points), r, p), h)
    k_glob = _points_by_head(_to_global(_point_heads(linear_forward(layer.k_points, x), h, config.n_query_points), r, p), h)

    # Σ_p ‖q_i - k_j‖² = ‖q_i‖² + ‖k_j‖² - 2 q_i·k_j
    q_sq = reduce_sum(square(q_glob), axis=-1, keepdims=True)
    k_sq = swapaxes(reduce_sum(square(k_glob), axis=-1, keepdims=True))
    cross = matmul(q_glob, swapaxes(k_glob))
    dist = sub(add(q_sq, k_sq), scale(cross, 2.0))

    return sub(scale(matmul(q, swapaxes(k)), w_l), scale(dist, w_c))


def ipa_attention(x, r, p, config, layer):
    """헤드별 어텐션 가중치 [..., H, n, n]."""
    return softmax(ipa_logits(x, r, p, config, layer), axis=-1)


def ipa_layer_forward(x, poses, config, layer, return_weights=False):
    """x: [..., n, width] 특징, poses: (..., n) 포즈. residual + layernorm 까지 적용한 새 특징."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.shape[-1] != config.width:
        raise ShapeError(f"features have width {x.shape[-1]}, layer expects {config.width}")
    if x.shape[:-1] != poses.shape:
        raise ShapeError(f"features {x.shape} do not match poses {poses.shape}")
    r = validate_rotation(poses.r)
    p = poses.p
    h = config.n_head

    weights = ipa_attention(x, r, p, config, layer)
    o = merge_heads(matmul(weights, split_heads(linear_forward(layer.v, x), h)))

    v_glob = _points_by_head(_to_global(_point_heads(linear_forward(layer.v_points, x), h, config.n_point_values), r, p), h)
    gathered = merge_heads(matmul(weights, v_glob))  # [..., n, H*Pv*3]
    *lead, n, _ = gathered.shape
    o_points = _to_local(reshape(gathered, (*lead, n, h * config.n_point_values, 3)), r, p)
    o_norm = sqrt(add(reduce_sum(square(o_points), axis=-1), POINT_NORM_EPS))

    merged = concat([o, reshape(o_points, (*lead, n, h * config.n_point_values * 3)), o_norm], axis=-1)
    out = layernorm(add(x, linear_forward(layer.out, merged)), layer.norm_gain, layer.norm_bias, LAYERNORM_EPS)
    return (out, weights) if return_weights else out


def adaptation_normalize(tokens, anchor, scale):
    """모든 포즈를 anchor 프레임으로 옮기고 이동 성분을 tanh(scale·p) 로 (-1, 1) 에 가둔다."""
    if not scale > 0.0:
        raise InvalidArgumentError(f"adaptation scale must be positive, got {scale}")
    inv = pose_inverse(anchor)
    if inv.shape:
        inv = inv.expand()
    rel = pose_compose(inv, tokens.poses)
    return tokens.with_poses(Pose(rel.r, np.tanh(scale * rel.p)))


def _embed_tokens(tokens, weights, action_state):
    obs_idx, act_idx = tokens.observation_indices, tokens.action_indices
    n_act = weights.action_features.shape[0]
    if len(act_idx) != n_act:
        raise ShapeError(f"policy has {n_act} action slots, token set has {len(act_idx)} action tokens")
    lead = tokens.batch_shape
    width = weights.action_features.shape[-1]

    action = broadcast_to(weights.action_features, lead + (n_act, width))
    if action_state is not None:
        if weights.state_encoder is None:
            raise InvalidArgumentError("action state given but the policy has no state encoder")
        action = add(action, linear_forward(weights.state_encoder, action_state))
    if not obs_idx:
        return action
    if weights.obs_encoder is None:
        raise InvalidArgumentError("observation tokens given but the policy has no observation encoder")
    obs = linear_forward(weights.obs_encoder, Tensor(tokens.features[..., obs_idx, :]))
    return concat([obs, action], axis=-2)


def invariant_transformer_forward(tokens, t, config, weights, action_state=None):
    """행동 토큰마다 6-벡터 (v_p, v_r) 를 [..., N, 6] 로 돌려준다.

    weights 는 obs_encoder / action_features / time / ipa / state_encoder 를 가진 정책 가중치.
    """
    act_idx = tokens.action_indices
    if not act_idx:
        raise InvalidArgumentError("token set has no action tokens")
    order = tokens.observation_indices + act_idx
    if order != list(range(len(tokens))):
        tokens = tokens.take(order)

    x = _embed_tokens(tokens, weights, action_state)
    emb = time_embed(weights.time, t)
    if emb.ndim > 1:
        emb = reshape(emb, emb.shape[:-1] + (1, emb.shape[-1]))
    x = add(x, emb)

    for layer in weights.ipa.layers:
        x = ipa_layer_forward(x, tokens.poses, config, layer)
        x = encoder_forward(layer.encoder, x)

    n_act = len(act_idx)
    *lead, n, width = x.shape
    action_x = take(x, np.arange(n - n_act, n), axis=-2)
    return linear_forward(weights.ipa.head, action_x)
