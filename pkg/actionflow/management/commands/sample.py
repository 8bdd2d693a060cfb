import logging
import time

import numpy as np
from django.core.management.base import BaseCommand

from actionflow.checkpoint import load_policy
from actionflow.data import read_dataset, read_observation, write_generated_actions, write_generated_points
from actionflow.management.utils import exit_codes, require, usage_error
from actionflow.policy import generate_points, timed_generation
from actionflow.schemas import schedule_kind

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = "체크포인트로 행동 포즈(또는 점)를 생성한다."

    def add_arguments(self, parser):
        parser.add_argument("--ckpt")
        source = parser.add_mutually_exclusive_group()
        source.add_argument("--data", help="관측을 읽을 JSONL 데이터셋")
        source.add_argument("--scene", help="'obs' 하나만 담은 JSON 파일")
        parser.add_argument("--steps", type=int, default=100)
        parser.add_argument("--schedule", choices=("linear", "exp"), default="linear")
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument("--out")
        parser.add_argument("--n", type=int, default=1000, help="점 데이터 정책에서 뽑을 샘플 수")

    def handle(self, *args, **options):
        require(options, "ckpt", "out")
        if options["steps"] < 1:
            raise usage_error(f"--steps must be positive, got {options['steps']}")
        kind = schedule_kind(options["schedule"])
        with exit_codes():
            weights, run_config = load_policy(options["ckpt"])
            config = run_config.train
            if weights.state_encoder is not None:
                rng = np.random.default_rng(options["seed"])
                start = time.perf_counter()
                points = generate_points(weights, options["n"], options["steps"], kind, config,
                                         run_config.exp_ratio, rng=rng)
                elapsed = time.perf_counter() - start
                write_generated_points(options["out"], points)
                self.stdout.write(f"{len(points)} points written to {options['out']}, latency {elapsed * 1e3:.2f} ms per batch")
                return

            if options["scene"]:
                observations = [read_observation(options["scene"])]
            elif options["data"]:
                data = read_dataset(options["data"])
                if isinstance(data, np.ndarray):
                    raise usage_error(f"{options['data']} holds points, the checkpoint is a pose policy")
                observations = [demo.observation for demo in data]
            else:
                raise usage_error("one of --data or --scene is required")

            results, latencies = timed_generation(weights, observations, options["steps"], kind, config,
                                                  run_config.exp_ratio, seed=options["seed"])
            write_generated_actions(options["out"], results)

        logger.debug("per-scene latency: %s", latencies)
        self.stdout.write(
            f"{len(results)} action sequences written to {options['out']}, "
            f"mean latency {np.mean(latencies) * 1e3:.2f} ms ({1.0 / np.mean(latencies):.1f} Hz)"
        )
