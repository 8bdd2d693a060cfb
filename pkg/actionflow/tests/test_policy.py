import logging

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from actionflow.checks import SMALL_IPA
from actionflow.errors import CheckpointError, InvalidArgumentError, NumericalError, ShapeError
from actionflow.ipa import TokenSet
from actionflow.lie import Pose, pose_compose, sample_uniform_rotation
from actionflow.policy import (
    Adam, EquivarianceReport, anchor_index, check_equivariance, draw_initial_poses, draw_training_targets,
    evaluate, evaluate_points, generate_actions, generate_points, init_policy_weights, learning_rate_at,
    timed_generation, train, train_step, train_step_euclid,
)
from actionflow.schemas import TaskSpec, TrainConfig
from actionflow.tasks import AGENT, OBJECT, gen_eight_gaussians, gen_se3_reach, pose_error

CONFIG = TrainConfig(ipa=SMALL_IPA, learning_rate=1e-3, batch_size=4, adaptation_scale=2.0)
SPEC = TaskSpec(n_demos=6, n_actions=3, obs_history=2, seed=7)


def random_delta(rng):
    return Pose(sample_uniform_rotation(rng), rng.uniform(-5.0, 5.0, 3))


def make_weights(seed=0, zero_head=True, n_actions=SPEC.n_actions):
    return init_policy_weights(SMALL_IPA, 3, n_actions, np.random.default_rng(seed), zero_head=zero_head)


def snapshot(weights):
    return {name: value.copy() for name, value in weights.state_dict().items()}


class WeightsTests(SimpleTestCase):
    def test_parameter_names(self):
        names = [name for name, _ in make_weights().named_parameters()]
        self.assertEqual(names[:3], ["obs_encoder.weight", "obs_encoder.bias", "action_features"])
        self.assertIn("layers.0.ipa.q.weight", names)
        self.assertIn("layers.1.encoder.ff2.bias", names)
        self.assertEqual(names[-2:], ["head.weight", "head.bias"])
        self.assertEqual(len(names), len(set(names)))

    def test_state_dict_roundtrip(self):
        a, b = make_weights(0, zero_head=False), make_weights(1, zero_head=False)
        b.load_state_dict(a.state_dict())
        for name, value in a.state_dict().items():
            assert_array_equal(b.state_dict()[name], value)

    def test_load_state_dict_errors(self):
        weights = make_weights()
        state = weights.state_dict()
        del state["head.bias"]
        with self.assertRaises(CheckpointError):
            weights.load_state_dict(state)
        state = weights.state_dict()
        state["head.bias"] = np.zeros(7)
        with self.assertRaises(ShapeError):
            weights.load_state_dict(state)

    def test_point_policy_dims(self):
        weights = init_policy_weights(SMALL_IPA, 0, 1, np.random.default_rng(0), state_dim=2)
        self.assertIsNone(weights.obs_encoder)
        self.assertEqual((weights.obs_dim, weights.state_dim, weights.n_actions), (0, 2, 1))


class AnchorTests(SimpleTestCase):
    def test_last_agent_token(self):
        obs = gen_se3_reach(SPEC)[0].observation
        self.assertEqual(anchor_index(obs), SPEC.obs_history - 1)
        self.assertEqual(anchor_index(obs, 0), 0)

    def test_missing_agent(self):
        obs = TokenSet(Pose.identity(1), np.zeros((1, 3)), (OBJECT,))
        with self.assertRaises(InvalidArgumentError):
            anchor_index(obs)
        with self.assertRaises(InvalidArgumentError):
            anchor_index(gen_se3_reach(SPEC)[0].observation, 10)

    def test_initial_poses_follow_anchor(self):
        anchor = Pose(sample_uniform_rotation(np.random.default_rng(1)), [1.0, 2.0, 3.0])
        world = draw_initial_poses(np.random.default_rng(2), anchor, 4, 1.0)
        local = draw_initial_poses(np.random.default_rng(2), Pose.identity(), 4, 1.0)
        expected = pose_compose(anchor, local)
        assert_allclose(world.r, expected.r, atol=1e-15)
        assert_allclose(world.p, expected.p, atol=1e-15)


class TrainStepTests(SimpleTestCase):
    def setUp(self):
        self.demos = gen_se3_reach(SPEC)

    def test_zero_learning_rate_keeps_weights(self):
        weights = make_weights(zero_head=False)
        before = snapshot(weights)
        loss, same = train_step(weights, self.demos[:4], np.random.default_rng(0), CONFIG.model_copy(update={"learning_rate": 0.0}))
        self.assertIs(same, weights)
        self.assertTrue(np.isfinite(loss))
        for name, value in weights.state_dict().items():
            assert_array_equal(value, before[name])

    def test_zero_head_loss_is_target_energy(self):
        batch = self.demos[:4]
        draw = draw_training_targets(batch, np.random.default_rng(3), CONFIG)
        expected = (np.sum(draw.target_vp ** 2) + np.sum(draw.target_vr ** 2)) / len(batch)
        loss, _ = train_step(make_weights(), batch, np.random.default_rng(3), CONFIG)
        self.assertAlmostEqual(loss, expected, delta=1e-9 * expected)

    def test_shared_time_per_demonstration(self):
        draw = draw_training_targets(self.demos[:4], np.random.default_rng(4), CONFIG)
        self.assertEqual(draw.t.shape, (4,))
        self.assertEqual(draw.target_vp.shape, (4, SPEC.n_actions, 3))
        self.assertTrue(np.all((draw.t >= 0.0) & (draw.t < 1.0)))
        self.assertLess(np.abs(draw.tokens.poses.p).max(), 1.0)

    def test_discrete_training_times(self):
        config = CONFIG.model_copy(update={"k_train": 4})
        draw = draw_training_targets(self.demos, np.random.default_rng(5), config)
        self.assertTrue(set(draw.t.tolist()) <= {0.0, 0.25, 0.5, 0.75})

    def test_step_is_deterministic(self):
        a, b = make_weights(zero_head=False), make_weights(zero_head=False)
        loss_a, _ = train_step(a, self.demos[:4], np.random.default_rng(6), CONFIG)
        loss_b, _ = train_step(b, self.demos[:4], np.random.default_rng(6), CONFIG)
        self.assertEqual(loss_a, loss_b)
        for name, value in a.state_dict().items():
            assert_array_equal(b.state_dict()[name], value)

    def test_step_changes_weights(self):
        weights = make_weights()
        before = snapshot(weights)
        train_step(weights, self.demos[:4], np.random.default_rng(7), CONFIG)
        self.assertGreater(np.abs(weights.state_dict()["head.weight"] - before["head.weight"]).max(), 0.0)

    def test_empty_batch(self):
        with self.assertRaises(InvalidArgumentError):
            train_step(make_weights(), [], np.random.default_rng(0), CONFIG)

    def test_divergence_is_reported(self):
        weights = make_weights(zero_head=False)
        weights.ipa.head.weight.data[...] = 1e300
        with self.assertLogs("actionflow.policy", logging.WARNING):
            with self.assertRaises(NumericalError):
                train_step(weights, self.demos[:2], np.random.default_rng(0), CONFIG)

    def test_train_records(self):
        config = CONFIG.model_copy(update={"epochs": 2})
        seen = []
        records = train(make_weights(), self.demos, config, np.random.default_rng(8),
                        on_step=lambda epoch, step, loss: seen.append(step))
        # 6 장면, 배치 4 -> 에폭당 2 스텝
        self.assertEqual([(e, s) for e, s, _ in records], [(0, 0), (0, 1), (1, 2), (1, 3)])
        self.assertEqual(seen, [1, 2, 3, 4])
        self.assertTrue(all(np.isfinite(loss) for _, _, loss in records))

    def test_cosine_learning_rate(self):
        config = CONFIG.model_copy(update={"epochs": 2, "lr_schedule": "cosine", "final_lr_ratio": 0.1})
        self.assertAlmostEqual(learning_rate_at(config, 0, 5), 1e-3)
        self.assertAlmostEqual(learning_rate_at(config, 2, 5), 1e-3 * 0.55)
        self.assertAlmostEqual(learning_rate_at(config, 4, 5), 1e-4)
        self.assertAlmostEqual(learning_rate_at(config, 9, 5), 1e-4)
        self.assertEqual(learning_rate_at(CONFIG, 3, 5), 1e-3)

        optimizer = Adam()
        seen = []
        train(make_weights(), self.demos, config, np.random.default_rng(8), optimizer=optimizer,
              on_step=lambda epoch, step, loss: seen.append(optimizer.lr))
        assert_allclose(seen, [learning_rate_at(config, s, 4) for s in range(4)], rtol=1e-15)
        self.assertAlmostEqual(seen[-1], 1e-4)

    def test_train_points(self):
        weights = init_policy_weights(SMALL_IPA, 0, 1, np.random.default_rng(0), state_dim=2)
        points = gen_eight_gaussians(16, seed=0)
        loss, _ = train_step_euclid(weights, points[:8], np.random.default_rng(1), CONFIG)
        self.assertTrue(np.isfinite(loss))
        records = train(weights, points, CONFIG.model_copy(update={"epochs": 1}), np.random.default_rng(2))
        self.assertEqual(len(records), 4)
        coupled = CONFIG.model_copy(update={"epochs": 1, "coupling": "minibatch-ot"})
        records = train(weights, points, coupled, np.random.default_rng(3))
        self.assertTrue(all(np.isfinite(loss) for _, _, loss in records))


class GenerationTests(SimpleTestCase):
    def setUp(self):
        self.demos = gen_se3_reach(SPEC)
        self.observation = self.demos[0].observation

    def test_zero_field_keeps_initial_poses(self):
        weights = make_weights()
        initial = draw_initial_poses(np.random.default_rng(0), self.demos[0].observation.poses[1], SPEC.n_actions, 1.0)
        for kind in ("linear", "exponential"):
            for K in (1, 3):
                out = generate_actions(weights, self.observation, K, kind, CONFIG, initial=initial)
                assert_array_equal(out.r, initial.r)
                assert_array_equal(out.p, initial.p)

    def test_deterministic(self):
        weights = make_weights(zero_head=False)
        a = generate_actions(weights, self.observation, 4, "linear", CONFIG, rng=np.random.default_rng(9))
        b = generate_actions(weights, self.observation, 4, "linear", CONFIG, rng=np.random.default_rng(9))
        self.assertEqual(a.r.tobytes(), b.r.tobytes())
        self.assertEqual(a.p.tobytes(), b.p.tobytes())
        self.assertEqual(a.shape, (SPEC.n_actions,))

    def test_timed_generation(self):
        weights = make_weights(zero_head=False)
        observations = [demo.observation for demo in self.demos[:3]]
        results, latencies = timed_generation(weights, observations, 2, "linear", CONFIG, seed=4)
        self.assertEqual(len(latencies), 3)
        self.assertTrue(all(latency > 0.0 for latency in latencies))
        streams = np.random.SeedSequence(4).spawn(3)
        for obs, stream, poses in zip(observations, streams, results):
            expected = generate_actions(weights, obs, 2, "linear", CONFIG, rng=np.random.default_rng(stream))
            assert_array_equal(poses.p, expected.p)
            assert_array_equal(poses.r, expected.r)

    def test_needs_rng_or_initial(self):
        with self.assertRaises(InvalidArgumentError):
            generate_actions(make_weights(), self.observation, 2, "linear", CONFIG)
        with self.assertRaises(ShapeError):
            generate_actions(make_weights(), self.observation, 2, "linear", CONFIG, initial=Pose.identity(2))

    def test_points(self):
        weights = init_policy_weights(SMALL_IPA, 0, 1, np.random.default_rng(0), state_dim=2)
        initial = np.random.default_rng(1).standard_normal((5, 2))
        assert_array_equal(generate_points(weights, 5, 3, "linear", CONFIG, initial=initial), initial)
        a = generate_points(weights, 5, 3, "exponential", CONFIG, rng=np.random.default_rng(2))
        b = generate_points(weights, 5, 3, "exponential", CONFIG, rng=np.random.default_rng(2))
        assert_array_equal(a, b)
        with self.assertRaises(InvalidArgumentError):
            generate_points(make_weights(), 5, 3, "linear", CONFIG, rng=np.random.default_rng(0))


class EquivarianceTests(SimpleTestCase):
    def setUp(self):
        self.weights = make_weights(zero_head=False)
        self.observation = gen_se3_reach(SPEC)[1].observation

    def test_identity_delta_is_exact(self):
        report = check_equivariance(self.weights, self.observation, Pose.identity(), 0, 3, CONFIG)
        self.assertEqual(report.max_translation, 0.0)
        self.assertEqual(report.max_rotation, 0.0)

    def test_random_delta(self):
        rng = np.random.default_rng(10)
        for K, kind in ((2, "linear"), (5, "exponential")):
            report = check_equivariance(self.weights, self.observation, random_delta(rng), 1, K, CONFIG, kind)
            self.assertLess(report.max_translation, 1e-5)
            self.assertLess(report.max_rotation, 1e-5)
            self.assertTrue(report.passed(1e-5))

    def test_world_frame_control(self):
        weights = make_weights(zero_head=False)
        weights.ipa.head.weight.data *= 3.0
        rng = np.random.default_rng(11)
        worst = max(
            check_equivariance(weights, self.observation, random_delta(rng), i, 5, CONFIG, frame="world").max_deviation
            for i in range(3)
        )
        self.assertGreater(worst, 0.1)

    def test_report(self):
        report = EquivarianceReport(1e-7, 3e-6)
        self.assertEqual(report.max_deviation, 3e-6)
        self.assertTrue(report.passed(1e-5))
        self.assertFalse(report.passed(1e-6))


class EvaluateTests(SimpleTestCase):
    def setUp(self):
        self.demos = gen_se3_reach(SPEC)

    def test_deterministic_across_runs_and_workers(self):
        weights = make_weights(zero_head=False)
        a = evaluate(weights, self.demos, 3, "linear", CONFIG, seed=4, workers=1)
        b = evaluate(weights, self.demos, 3, "linear", CONFIG, seed=4, workers=3)
        self.assertEqual(a, b)
        self.assertEqual(len(a.scenes), len(self.demos))

    def test_zero_field_errors_are_prior_distances(self):
        metrics = evaluate(make_weights(), self.demos, 2, "linear", CONFIG, seed=5)
        streams = np.random.SeedSequence(5).spawn(len(self.demos))
        for i, demo in enumerate(self.demos):
            anchor = demo.observation.poses[SPEC.obs_history - 1]
            initial = draw_initial_poses(np.random.default_rng(streams[i]), anchor, SPEC.n_actions, 1.0)
            translation, rotation = pose_error(initial[-1], demo.actions[-1])
            self.assertAlmostEqual(metrics.scenes[i].translation, float(translation), places=12)
            self.assertAlmostEqual(metrics.scenes[i].rotation_deg, float(rotation), places=9)
        self.assertAlmostEqual(metrics.mean_translation, np.mean([s.translation for s in metrics.scenes]))

    def test_transformed_scenes_give_same_errors(self):
        weights = make_weights(zero_head=False)
        base = evaluate(weights, self.demos, 3, "linear", CONFIG, seed=6)
        moved = evaluate(weights, self.demos, 3, "linear", CONFIG, seed=6, delta=random_delta(np.random.default_rng(12)))
        for a, b in zip(base.scenes, moved.scenes):
            self.assertAlmostEqual(a.translation, b.translation, delta=1e-5)
            self.assertAlmostEqual(a.rotation_deg, b.rotation_deg, delta=1e-5)

    def test_points(self):
        weights = init_policy_weights(SMALL_IPA, 0, 1, np.random.default_rng(0), state_dim=2)
        coverage = evaluate_points(weights, 50, 2, "linear", CONFIG, seed=1)
        self.assertEqual(len(coverage.counts), 8)
        self.assertEqual(coverage, evaluate_points(weights, 50, 2, "linear", CONFIG, seed=1))

    def test_empty(self):
        with self.assertRaises(InvalidArgumentError):
            evaluate(make_weights(), [], 2, "linear", CONFIG)
