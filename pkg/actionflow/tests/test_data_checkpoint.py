import json
import struct
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_array_equal

from actionflow.checkpoint import (
    MAGIC, decode_checkpoint, encode_checkpoint, load_policy, read_checkpoint, save_policy, write_checkpoint,
)
from actionflow.checks import SMALL_IPA
from actionflow.data import (
    read_dataset, read_observation, scene_from_record, scene_to_record, write_generated_actions,
    write_generated_points, write_points, write_scenes,
)
from actionflow.errors import CheckpointError, InvalidArgumentError
from actionflow.lie import Pose
from actionflow.policy import init_policy_weights
from actionflow.schemas import RunConfig, TaskSpec, TrainConfig
from actionflow.tasks import gen_eight_gaussians, gen_se3_reach


class TempDirMixin:
    def setUp(self):
        super().setUp()
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()
        super().tearDown()


class DatasetTests(TempDirMixin, SimpleTestCase):
    def test_scene_file_roundtrip(self):
        demos = gen_se3_reach(TaskSpec(n_demos=3, n_actions=4, obs_history=2, seed=1))
        path = self.tmp / "scenes.jsonl"
        self.assertEqual(write_scenes(path, demos), 3)
        back = read_dataset(path)
        self.assertEqual(len(back), 3)
        for a, b in zip(demos, back):
            assert_array_equal(a.actions.r, b.actions.r)
            assert_array_equal(a.actions.p, b.actions.p)
            assert_array_equal(a.observation.features, b.observation.features)
            self.assertEqual(a.observation.kinds, b.observation.kinds)

    def test_scene_record_layout(self):
        demo = gen_se3_reach(TaskSpec(n_demos=1, n_actions=2, obs_history=1))[0]
        record = scene_to_record(demo)
        self.assertEqual(sorted(record), ["actions", "obs"])
        self.assertEqual(len(record["actions"]), 2)
        self.assertEqual(len(record["actions"][0]), 12)
        self.assertEqual(record["obs"][0]["kind"], "agent")
        self.assertEqual(record["obs"][0]["pose"], [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])

    def test_points_roundtrip(self):
        points = gen_eight_gaussians(16, seed=0)
        path = self.tmp / "points.jsonl"
        self.assertEqual(write_points(path, points), 16)
        assert_array_equal(read_dataset(path), points)
        first = json.loads(path.read_text(encoding="utf-8").splitlines()[0])
        self.assertEqual(first, {"points": [points[0].tolist()]})

    def test_malformed_input(self):
        path = self.tmp / "bad.jsonl"
        path.write_text('{"obs": []}\n', encoding="utf-8")
        with self.assertRaises(InvalidArgumentError):
            read_dataset(path)
        path.write_text("not json\n", encoding="utf-8")
        with self.assertRaises(InvalidArgumentError):
            read_dataset(path)
        path.write_text("", encoding="utf-8")
        with self.assertRaises(InvalidArgumentError):
            read_dataset(path)
        with self.assertRaises(InvalidArgumentError):
            read_dataset(self.tmp / "missing.jsonl")

    def test_bad_rotation_rejected(self):
        record = scene_to_record(gen_se3_reach(TaskSpec(n_demos=1, n_actions=1, obs_history=1))[0])
        record["actions"][0][0] = 2.0
        with self.assertRaises(InvalidArgumentError):
            scene_from_record(record)

    def test_scene_observation_file(self):
        demo = gen_se3_reach(TaskSpec(n_demos=1, n_actions=2, obs_history=2))[0]
        path = self.tmp / "scene.json"
        path.write_text(json.dumps(scene_to_record(demo)), encoding="utf-8")
        obs = read_observation(path)
        assert_array_equal(obs.poses.p, demo.observation.poses.p)
        path.write_text("{}", encoding="utf-8")
        with self.assertRaises(InvalidArgumentError):
            read_observation(path)

    def test_generated_outputs(self):
        path = self.tmp / "out.jsonl"
        write_generated_actions(path, [Pose.identity(2), Pose.identity(2)])
        lines = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
        self.assertEqual([line["scene"] for line in lines], [0, 1])
        self.assertEqual(len(lines[1]["actions"]), 2)
        write_generated_points(path, np.zeros((3, 2)))
        self.assertEqual(json.loads(path.read_text(encoding="utf-8")), {"points": [[0.0, 0.0]] * 3})


class CheckpointTests(TempDirMixin, SimpleTestCase):
    def setUp(self):
        super().setUp()
        self.run_config = RunConfig(train=TrainConfig(ipa=SMALL_IPA), task=TaskSpec(n_actions=3, obs_history=2))
        self.weights = init_policy_weights(SMALL_IPA, 3, 3, np.random.default_rng(0), zero_head=False)

    def test_encoding_layout(self):
        blob = encode_checkpoint({"a": 1}, {"w": np.arange(6.0).reshape(2, 3)})
        self.assertEqual(blob[:4], MAGIC)
        self.assertEqual(struct.unpack("<I", blob[4:8])[0], 1)
        self.assertEqual(struct.unpack("<I", blob[8:12])[0], len(b'{"a":1}'))
        self.assertEqual(blob[12:19], b'{"a":1}')
        config, tensors = decode_checkpoint(blob)
        self.assertEqual(config, {"a": 1})
        assert_array_equal(tensors["w"], np.arange(6.0).reshape(2, 3))

    def test_policy_roundtrip_is_byte_identical(self):
        first = self.tmp / "a.ckpt"
        second = self.tmp / "b.ckpt"
        save_policy(first, self.weights, self.run_config)
        weights, run_config = load_policy(first)
        self.assertEqual(run_config, self.run_config)
        save_policy(second, weights, run_config)
        self.assertEqual(first.read_bytes(), second.read_bytes())
        for name, value in self.weights.state_dict().items():
            assert_array_equal(weights.state_dict()[name], value)

    def test_point_policy_roundtrip(self):
        weights = init_policy_weights(SMALL_IPA, 0, 1, np.random.default_rng(1), state_dim=2)
        path = self.tmp / "p.ckpt"
        save_policy(path, weights, self.run_config)
        back, _ = load_policy(path)
        self.assertEqual(back.state_dim, 2)
        self.assertIsNone(back.obs_encoder)

    def test_version_mismatch(self):
        blob = bytearray(encode_checkpoint({}, {}))
        blob[4:8] = struct.pack("<I", 2)
        with self.assertRaisesMessage(CheckpointError, "version 2"):
            decode_checkpoint(bytes(blob))

    def test_corrupt_files(self):
        blob = encode_checkpoint({}, {"w": np.ones(4)})
        with self.assertRaises(CheckpointError):
            decode_checkpoint(b"XXXX" + blob[4:])
        with self.assertRaises(CheckpointError):
            decode_checkpoint(blob[:-3])
        with self.assertRaises(CheckpointError):
            decode_checkpoint(blob + b"\x00")
        with self.assertRaises(CheckpointError):
            read_checkpoint(self.tmp / "missing.ckpt")

    def test_tensor_mismatch(self):
        path = self.tmp / "c.ckpt"
        save_policy(path, self.weights, self.run_config)
        config, tensors = read_checkpoint(path)
        tensors["head.bias"] = np.zeros(5)
        write_checkpoint(path, config, tensors)
        with self.assertRaises(CheckpointError):
            load_policy(path)
        del tensors["head.bias"]
        write_checkpoint(path, config, tensors)
        with self.assertRaises(CheckpointError):
            load_policy(path)
