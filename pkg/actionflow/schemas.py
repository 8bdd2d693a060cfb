import math
from pathlib import Path
from typing import Annotated, Literal

from pydantic import BaseModel, ConfigDict, Field, NonNegativeFloat, NonNegativeInt, PositiveFloat, PositiveInt, model_validator

Vec3 = tuple[float, float, float]


class IpaConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_head: PositiveInt = 4
    c: PositiveInt = 16
    n_query_points: PositiveInt = 4
    n_point_values: PositiveInt = 8
    n_ipa_layers: PositiveInt = 4
    width: PositiveInt = 64
    ff_width: PositiveInt = 128

    @model_validator(mode="after")
    def check_widths(self):
        if self.c * self.n_head > self.width:
            raise ValueError(f"c * n_head = {self.c * self.n_head} exceeds model width {self.width}")
        if self.width % self.n_head:
            raise ValueError(f"n_head = {self.n_head} must divide model width {self.width}")
        if self.width % 2:
            raise ValueError("model width must be even for the time embedding")
        return self


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    epochs: NonNegativeInt = 100
    batch_size: PositiveInt = 64
    learning_rate: NonNegativeFloat = 1e-4
    k_train: PositiveInt | None = None
    coupling: Literal["independent", "minibatch-ot"] = "independent"
    lr_schedule: Literal["constant", "cosine"] = "constant"
    final_lr_ratio: Annotated[float, Field(ge=0.0, le=1.0)] = 0.05
    seed: NonNegativeInt = 0
    adaptation_scale: PositiveFloat = 10.0
    prior_translation_scale: PositiveFloat = 1.0
    anchor_index: NonNegativeInt | None = None
    ipa: IpaConfig = IpaConfig()


class TaskSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["eight-gaussians", "two-moons", "se3-reach"] = "se3-reach"
    n_demos: PositiveInt = 200
    seed: NonNegativeInt = 0
    noise: NonNegativeFloat | None = None  # None 이면 과제별 기본값
    # se3-reach 전용
    n_actions: PositiveInt = 16
    obs_history: PositiveInt = 5
    object_low: Vec3 = (0.3, -0.3, 0.0)
    object_high: Vec3 = (0.6, 0.3, 0.2)
    yaw_low: float = -math.pi / 2
    yaw_high: float = math.pi / 2
    grasp_translation: Vec3 = (0.0, 0.0, 0.05)
    grasp_rotation: Vec3 = (math.pi / 2, 0.0, 0.0)

    @model_validator(mode="after")
    def check_ranges(self):
        if any(lo > hi for lo, hi in zip(self.object_low, self.object_high)):
            raise ValueError(f"object_low {self.object_low} exceeds object_high {self.object_high}")
        if self.yaw_low > self.yaw_high:
            raise ValueError(f"yaw_low {self.yaw_low} exceeds yaw_high {self.yaw_high}")
        return self

    @property
    def euclidean(self):
        return self.kind != "se3-reach"


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    train: TrainConfig = TrainConfig()
    task: TaskSpec = TaskSpec()
    schedule: Literal["linear", "exponential"] = "linear"
    k_sample: PositiveInt = 100
    k_values: Annotated[list[PositiveInt], Field(min_length=1)] = [2, 5, 10, 20, 100]
    exp_ratio: Annotated[float, Field(gt=1.0)] = 4.0


def load_run_config(path):
    return RunConfig.model_validate_json(Path(path).read_text(encoding="utf-8"))


def schedule_kind(name):
    # CLI 는 exp 약칭도 받는다
    return "exponential" if name in ("exp", "exponential") else name
