"""층 종류별 기울기 검사 모음. grad_check 명령과 테스트가 함께 쓴다."""
import numpy as np

from .autodiff import Tensor, grad_check, reduce_sum, mul, split
from .flow import cfm_loss
from .ipa import IpaLayerWeights, adaptation_normalize, invariant_transformer_forward, ipa_layer_forward
from .lie import Pose, sample_uniform_rotation
from .net import EncoderBlock, LinearLayer, MultiHeadAttention, TimeEmbedding, encoder_forward, linear_forward, mha_forward, time_embed
from .policy import anchor_pose, init_policy_weights
from .schemas import IpaConfig, TaskSpec
from .tasks import gen_se3_reach

SMALL_IPA = IpaConfig(n_head=2, c=4, n_query_points=2, n_point_values=2, n_ipa_layers=2, width=8, ff_width=16)


def _projected(out, proj):
    # 무작위 고정 가중치로 투영한 스칼라
    return reduce_sum(mul(out, proj))


def _linear_case(rng):
    layer = LinearLayer.initialize(5, 4, rng)
    x = Tensor(rng.standard_normal((3, 5)))
    proj = rng.standard_normal((3, 4))
    return (lambda: _projected(linear_forward(layer, x), proj)), [layer.weight, layer.bias, x]


def _attention_case(rng):
    attn = MultiHeadAttention.initialize(8, 2, rng)
    x = Tensor(rng.standard_normal((4, 8)))
    proj = rng.standard_normal((4, 8))
    params = [p for _, p in attn.named_parameters()] + [x]
    return (lambda: _projected(mha_forward(attn, x), proj)), params


def _encoder_case(rng):
    block = EncoderBlock.initialize(8, 2, 16, rng)
    block.ln1_gain.data += 0.1 * rng.standard_normal(8)
    block.ln2_bias.data += 0.1 * rng.standard_normal(8)
    x = Tensor(rng.standard_normal((4, 8)))
    proj = rng.standard_normal((4, 8))
    params = [p for _, p in block.named_parameters()] + [x]
    return (lambda: _projected(encoder_forward(block, x), proj)), params


def _time_case(rng):
    emb = TimeEmbedding.initialize(8, rng)
    t = np.array([0.0, 0.37, 1.0])
    proj = rng.standard_normal((3, 8))
    params = [p for _, p in emb.named_parameters()]
    return (lambda: _projected(time_embed(emb, t), proj)), params


def _ipa_case(rng):
    layer = IpaLayerWeights.initialize(SMALL_IPA, rng)
    n = 4
    poses = Pose(sample_uniform_rotation(rng, n), rng.uniform(-1.0, 1.0, (n, 3)))
    x = Tensor(rng.standard_normal((n, SMALL_IPA.width)))
    proj = rng.standard_normal((n, SMALL_IPA.width))
    params = [p for name, p in layer.named_parameters() if name.startswith("ipa.")] + [x]
    return (lambda: _projected(ipa_layer_forward(x, poses, SMALL_IPA, layer), proj)), params


def _model_case(rng):
    spec = TaskSpec(n_demos=2, n_actions=2, obs_history=2, seed=int(rng.integers(1 << 31)))
    demos = gen_se3_reach(spec)
    weights = init_policy_weights(SMALL_IPA, 3, spec.n_actions, rng, zero_head=False)
    obs = demos[0].observation
    anchor = anchor_pose(obs)
    actions = Pose(demos[0].actions.r @ sample_uniform_rotation(rng, spec.n_actions), demos[0].actions.p)
    tokens = adaptation_normalize(obs.append(actions), anchor, 2.0)
    target_vp = rng.standard_normal((spec.n_actions, 3))
    target_vr = rng.standard_normal((spec.n_actions, 3))

    def f():
        v = invariant_transformer_forward(tokens, 0.4, SMALL_IPA, weights)
        v_p, v_r = split(v, [3, 3], axis=-1)
        return cfm_loss(v_p, v_r, target_vp, target_vr)

    return f, weights.parameters()


CASES = {
    "linear": _linear_case,
    "attention": _attention_case,
    "encoder": _encoder_case,
    "time_embedding": _time_case,
    "ipa_layer": _ipa_case,
    "model": _model_case,
}


def run_grad_checks(seed=0, probes=250, tol=1e-4, names=None):
    """[(이름, GradCheckReport)]"""
    reports = []
    for i, name in enumerate(names or CASES):
        rng = np.random.default_rng([seed, i])
        f, params = CASES[name](rng)
        reports.append((name, grad_check(f, params, tol=tol, max_probes=probes, rng=rng)))
    return reports
