import logging
import math
from pathlib import Path

import numpy as np
from django.core.management.base import BaseCommand
from tqdm import tqdm

from actionflow.checkpoint import save_policy
from actionflow.data import read_dataset
from actionflow.management.utils import exit_codes, read_config, require, usage_error, write_csv
from actionflow.policy import init_policy_weights, train
from actionflow.schemas import TrainConfig

logger = logging.getLogger(__name__)

LOSS_HEADER = ("epoch", "step", "loss")


class Command(BaseCommand):
    help = "flow matching 으로 정책을 학습하고 체크포인트와 loss.csv 를 남긴다."

    def add_arguments(self, parser):
        parser.add_argument("--config")
        parser.add_argument("--data")
        parser.add_argument("--out", help="체크포인트 경로. loss.csv 는 같은 폴더에 쓴다")
        parser.add_argument("--seed", type=int)
        parser.add_argument("--epochs", type=int, help="설정의 epochs 대신 사용 (0 이면 학습 없이 저장)")
        parser.add_argument("--random-head", action="store_true", help="출력 head 를 0 대신 무작위로 초기화")

    def handle(self, *args, **options):
        require(options, "data", "out")
        run_config = read_config(options["config"])
        updates = {k: options[k] for k in ("seed", "epochs") if options[k] is not None}
        if updates:
            with exit_codes():
                train_config = TrainConfig.model_validate({**run_config.train.model_dump(), **updates})
            run_config = run_config.model_copy(update={"train": train_config})
        config = run_config.train

        with exit_codes():
            data = read_dataset(options["data"])
            logger.info("loaded %d training samples from %s", len(data), options["data"])
            euclid = isinstance(data, np.ndarray)
            if euclid != run_config.task.euclidean:
                raise usage_error(
                    f"config task '{run_config.task.kind}' does not match the "
                    f"{'point' if euclid else 'scene'} data in {options['data']}"
                )
            rng = np.random.default_rng(config.seed)
            if euclid:
                weights = init_policy_weights(config.ipa, 0, 1, rng, state_dim=data.shape[1],
                                              zero_head=not options["random_head"])
            else:
                weights = init_policy_weights(config.ipa, data[0].observation.features.shape[-1],
                                              data[0].n_actions, rng, zero_head=not options["random_head"])

            total = config.epochs * math.ceil(len(data) / config.batch_size)
            with tqdm(total=total, desc="train", disable=options["verbosity"] < 1) as bar:
                def on_step(epoch, step, loss):
                    bar.set_postfix(epoch=epoch, loss=f"{loss:.4g}")
                    bar.update()

                records = train(weights, data, config, rng, on_step=on_step)

            out = Path(options["out"])
            save_policy(out, weights, run_config)
            write_csv(out.parent / "loss.csv", LOSS_HEADER, records)

        final = f"{records[-1][2]:.6g}" if records else "n/a"
        self.stdout.write(f"trained {len(records)} steps, final loss {final}, checkpoint {out}")
