from django.core.management.base import BaseCommand

from actionflow.data import write_points, write_scenes
from actionflow.management.utils import exit_codes, read_config, require
from actionflow.schemas import TaskSpec
from actionflow.tasks import gen_points, gen_se3_reach

TASKS = ("eight-gaussians", "two-moons", "se3-reach")


class Command(BaseCommand):
    help = "합성 데이터셋을 JSONL 로 만든다."

    def add_arguments(self, parser):
        parser.add_argument("--task", choices=TASKS)
        parser.add_argument("--n", type=int, help="장면(점) 개수")
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument("--out")
        parser.add_argument("--config", help="task 항목을 기본값으로 쓸 RunConfig JSON")
        parser.add_argument("--noise", type=float)
        parser.add_argument("--n-actions", type=int)
        parser.add_argument("--obs-history", type=int)

    def handle(self, *args, **options):
        require(options, "task", "out")
        with exit_codes():
            base = read_config(options["config"]).task.model_dump()
            overrides = {
                "kind": options["task"],
                "seed": options["seed"],
                "n_demos": options["n"],
                "noise": options["noise"],
                "n_actions": options["n_actions"],
                "obs_history": options["obs_history"],
            }
            base.update({k: v for k, v in overrides.items() if v is not None})
            spec = TaskSpec.model_validate(base)

            if spec.euclidean:
                count = write_points(options["out"], gen_points(spec))
            else:
                count = write_scenes(options["out"], gen_se3_reach(spec))
        self.stdout.write(f"{count} scenes written to {options['out']}")
