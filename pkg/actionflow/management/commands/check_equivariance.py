import numpy as np
from django.core.management.base import BaseCommand, CommandError

from actionflow.checkpoint import load_policy
from actionflow.lie import Pose, sample_uniform_rotation
from actionflow.management.utils import EXIT_RUNTIME, exit_codes, require, usage_error
from actionflow.policy import check_equivariance
from actionflow.schemas import schedule_kind
from actionflow.tasks import gen_se3_reach

TRANSLATION_RANGE = 5.0


def random_delta(rng):
    return Pose(sample_uniform_rotation(rng), rng.uniform(-TRANSLATION_RANGE, TRANSLATION_RANGE, 3))


class Command(BaseCommand):
    help = "관측과 초기 노이즈를 같이 변환했을 때 생성 행동도 똑같이 변환되는지 확인한다."

    def add_arguments(self, parser):
        parser.add_argument("--ckpt")
        parser.add_argument("--trials", type=int, default=10)
        parser.add_argument("--tol", type=float, default=1e-5)
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument("--steps", type=int, default=10)
        parser.add_argument("--schedule", choices=("linear", "exp"), default="linear")
        parser.add_argument("--world-frame", action="store_true",
                            help="속도를 r 없이 월드 좌표로 적용하는 잘못된 적분기 (대조군)")

    def handle(self, *args, **options):
        require(options, "ckpt")
        if options["trials"] < 1:
            raise usage_error(f"--trials must be at least 1, got {options['trials']}")
        if options["steps"] < 1:
            raise usage_error(f"--steps must be positive, got {options['steps']}")
        frame = "world" if options["world_frame"] else "body"
        kind = schedule_kind(options["schedule"])

        with exit_codes():
            weights, run_config = load_policy(options["ckpt"])
            if weights.state_encoder is not None:
                raise usage_error("equivariance is defined for pose policies only")
            rng = np.random.default_rng(options["seed"])
            spec = run_config.task.model_copy(update={
                "n_demos": options["trials"], "seed": options["seed"], "n_actions": weights.n_actions,
            })
            scenes = gen_se3_reach(spec)
            worst_t = worst_r = 0.0
            for i, scene in enumerate(scenes):
                report = check_equivariance(
                    weights, scene.observation, random_delta(rng), options["seed"] + i, options["steps"],
                    run_config.train, kind, run_config.exp_ratio, frame=frame,
                )
                worst_t = max(worst_t, report.max_translation)
                worst_r = max(worst_r, report.max_rotation)
                self.stdout.write(f"trial {i}: translation {report.max_translation:.3e}, rotation {report.max_rotation:.3e} rad")

        worst = max(worst_t, worst_r)
        summary = f"max deviation {worst:.3e} over {len(scenes)} trials (tol {options['tol']:g})"
        if not worst < options["tol"]:
            raise CommandError(f"equivariance check failed: {summary}", returncode=EXIT_RUNTIME)
        self.stdout.write(self.style.SUCCESS(f"equivariance check passed: {summary}"))
