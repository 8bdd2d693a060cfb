from django.core.management.base import BaseCommand, CommandError

from actionflow.checks import CASES, run_grad_checks
from actionflow.management.utils import EXIT_RUNTIME, usage_error


class Command(BaseCommand):
    help = "층 종류별, 전체 모델의 역전파 기울기를 중앙차분과 비교한다."

    def add_arguments(self, parser):
        parser.add_argument("--tol", type=float, default=1e-4)
        parser.add_argument("--probes", type=int, default=250, help="검사별 무작위로 찔러볼 파라미터 원소 수")
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument("--only", choices=sorted(CASES), action="append")

    def handle(self, *args, **options):
        if not options["tol"] > 0.0:
            raise usage_error(f"--tol must be positive, got {options['tol']}")
        if options["probes"] < 1:
            raise usage_error(f"--probes must be positive, got {options['probes']}")
        reports = run_grad_checks(options["seed"], options["probes"], options["tol"], options["only"])
        failed = []
        for name, report in reports:
            status = "ok" if report.passed else "FAIL"
            self.stdout.write(f"{name:<16} probes={report.n_probed:<5} max_rel_error={report.max_rel_error:.3e} {status}")
            if not report.passed:
                failed.append(name)
        total = sum(report.n_probed for _, report in reports)
        if failed:
            raise CommandError(f"gradient check failed for {', '.join(failed)}", returncode=EXIT_RUNTIME)
        self.stdout.write(self.style.SUCCESS(f"all {len(reports)} gradient checks passed ({total} probes)"))
