import time

import numpy as np
from django.conf import settings
from django.core.management.base import BaseCommand

from actionflow.checkpoint import load_policy
from actionflow.data import read_dataset
from actionflow.management.utils import exit_codes, parse_steps, require, usage_error, write_csv
from actionflow.policy import evaluate, generate_points, timed_generation
from actionflow.tasks import eight_gaussian_modes, mode_coverage, nearest_data_distance

BENCH_HEADER = ("steps", "schedule", "metric", "latency")
COVERAGE_RADIUS = 0.3
LATENCY_SCENES = 10


class Command(BaseCommand):
    help = "추론 스텝 수(K)별 과제 지표와 시퀀스당 지연시간을 CSV 로 남긴다."

    def add_arguments(self, parser):
        parser.add_argument("--ckpt")
        parser.add_argument("--data")
        parser.add_argument("--steps", default="2,5,10,20,100")
        parser.add_argument("--schedule", choices=("linear", "exp", "both"), default="both")
        parser.add_argument("--out")
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument("--n", type=int, default=1000, help="점 데이터 정책에서 뽑을 샘플 수")
        parser.add_argument("--workers", type=int, help="장면 병렬 평가 스레드 수")

    def _point_metric(self, weights, run_config, data, steps, kind, n, seed):
        rng = np.random.default_rng(seed)
        start = time.perf_counter()
        samples = generate_points(weights, n, steps, kind, run_config.train, run_config.exp_ratio, rng=rng)
        latency = time.perf_counter() - start
        if run_config.task.kind == "eight-gaussians":
            metric = mode_coverage(samples, eight_gaussian_modes(), COVERAGE_RADIUS).fraction
        else:
            metric = nearest_data_distance(samples, data)
        return metric, latency

    def _pose_metric(self, weights, run_config, demos, steps, kind, seed, workers):
        metrics = evaluate(weights, demos, steps, kind, run_config.train, seed=seed, workers=workers,
                           exp_ratio=run_config.exp_ratio)
        # 지연시간은 스레드 없이 앞쪽 장면 몇 개를 하나씩 돌려 잰다
        _, latencies = timed_generation(weights, [demo.observation for demo in demos[:LATENCY_SCENES]], steps, kind,
                                        run_config.train, run_config.exp_ratio, seed=seed)
        latency = float(np.mean(latencies))
        return metrics.mean_translation, latency

    def handle(self, *args, **options):
        require(options, "ckpt", "data", "out")
        steps = parse_steps(options["steps"])
        kinds = {"linear": ["linear"], "exp": ["exponential"], "both": ["linear", "exponential"]}[options["schedule"]]
        workers = options["workers"] or settings.ACTIONFLOW["WORKERS"]
        if workers < 1:
            raise usage_error(f"--workers must be positive, got {workers}")

        with exit_codes():
            weights, run_config = load_policy(options["ckpt"])
            data = read_dataset(options["data"])
            euclid = weights.state_encoder is not None
            if euclid != isinstance(data, np.ndarray):
                raise usage_error(f"{options['data']} does not match the checkpoint's task '{run_config.task.kind}'")

            rows = []
            for kind in kinds:
                for k in steps:
                    if euclid:
                        metric, latency = self._point_metric(weights, run_config, data, k, kind, options["n"], options["seed"])
                    else:
                        metric, latency = self._pose_metric(weights, run_config, data, k, kind, options["seed"], workers)
                    rows.append((k, "exp" if kind == "exponential" else kind, float(metric), float(latency)))
                    self.stdout.write(f"K={k:<4} {kind:<12} metric={metric:.6g} latency={latency * 1e3:.2f} ms")
            write_csv(options["out"], BENCH_HEADER, rows)
        self.stdout.write(f"{len(rows)} rows written to {options['out']}")
