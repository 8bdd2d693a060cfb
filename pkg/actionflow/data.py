"""JSONL 데이터셋 입출력. 포즈는 12 개 float (회전 행 우선 9 + 이동 3)."""
import json
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError
from .ipa import TokenSet
from .lie import pose_from_array12, pose_to_array12
from .tasks import Demonstration


def _dumps(record):
    return json.dumps(record, separators=(",", ":"), allow_nan=False)


def observation_to_records(observation):
    poses = pose_to_array12(observation.poses)
    return [
        {"pose": poses[i].tolist(), "feat": observation.features[i].tolist(), "kind": kind}
        for i, kind in enumerate(observation.kinds)
    ]


def observation_from_records(tokens):
    if not isinstance(tokens, list) or not tokens:
        raise InvalidArgumentError("'obs' must be a non-empty list of tokens")
    try:
        poses = pose_from_array12(np.array([tok["pose"] for tok in tokens], dtype=np.float64))
        features = np.array([tok["feat"] for tok in tokens], dtype=np.float64)
        kinds = tuple(str(tok["kind"]) for tok in tokens)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidArgumentError(f"malformed observation token: {exc}") from exc
    if features.ndim != 2:
        raise InvalidArgumentError("observation features must share one width")
    return TokenSet(poses, features, kinds)


def scene_to_record(demo):
    return {
        "obs": observation_to_records(demo.observation),
        "actions": pose_to_array12(demo.actions).tolist(),
    }


def scene_from_record(record):
    if not isinstance(record, dict) or "obs" not in record or "actions" not in record:
        raise InvalidArgumentError("scene record needs 'obs' and 'actions'")
    actions = np.array(record["actions"], dtype=np.float64)
    if actions.ndim != 2:
        raise InvalidArgumentError("'actions' must be a list of 12-value poses")
    return Demonstration(observation_from_records(record["obs"]), pose_from_array12(actions))


def _read_lines(path):
    path = Path(path)
    if not path.exists():
        raise InvalidArgumentError(f"dataset file {path} does not exist")
    records = []
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise InvalidArgumentError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
    if not records:
        raise InvalidArgumentError(f"dataset file {path} is empty")
    return records


def write_scenes(path, demos):
    with Path(path).open("w", encoding="utf-8") as f:
        for demo in demos:
            f.write(_dumps(scene_to_record(demo)) + "\n")
    return len(demos)


def write_points(path, points):
    points = np.asarray(points, dtype=np.float64)
    with Path(path).open("w", encoding="utf-8") as f:
        for point in points:
            f.write(_dumps({"points": [point.tolist()]}) + "\n")
    return len(points)


def read_dataset(path):
    """장면 목록(list[Demonstration]) 또는 점 배열 [n, d] 를 돌려준다."""
    records = _read_lines(path)
    if all(isinstance(r, dict) and "points" in r for r in records):
        try:
            points = np.array([p for r in records for p in r["points"]], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise InvalidArgumentError(f"malformed points in {path}: {exc}") from exc
        if points.ndim != 2:
            raise InvalidArgumentError(f"points in {path} must share one dimension")
        return points
    scenes = []
    for lineno, record in enumerate(records, 1):
        try:
            scenes.append(scene_from_record(record))
        except (InvalidArgumentError, ValueError) as exc:
            raise InvalidArgumentError(f"{path}: scene {lineno}: {exc}") from exc
    return scenes


def read_observation(path):
    """--scene 용 단일 JSON 객체. 'obs' 만 있으면 된다."""
    try:
        record = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidArgumentError(f"cannot read scene {path}: {exc}") from exc
    if not isinstance(record, dict) or "obs" not in record:
        raise InvalidArgumentError(f"scene {path} needs an 'obs' list")
    return observation_from_records(record["obs"])


def write_generated_actions(path, results):
    with Path(path).open("w", encoding="utf-8") as f:
        for i, poses in enumerate(results):
            f.write(_dumps({"scene": i, "actions": pose_to_array12(poses).tolist()}) + "\n")


def write_generated_points(path, points):
    with Path(path).open("w", encoding="utf-8") as f:
        f.write(_dumps({"points": np.asarray(points, dtype=np.float64).tolist()}) + "\n")