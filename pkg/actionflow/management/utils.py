import csv
from contextlib import contextmanager
from pathlib import Path

from django.core.management.base import CommandError
from pydantic import ValidationError

from actionflow.errors import ActionFlowError, InvalidArgumentError, ShapeError
from actionflow.schemas import RunConfig, load_run_config

EXIT_RUNTIME = 1
EXIT_USAGE = 2


def usage_error(message):
    return CommandError(message, returncode=EXIT_USAGE)


@contextmanager
def exit_codes():
    """라이브러리 예외를 종료 코드가 붙은 CommandError 로 바꾼다. 설정/입력 오류 2, 실행 오류 1."""
    try:
        yield
    except CommandError:
        raise
    except (ValidationError, InvalidArgumentError, ShapeError) as exc:
        raise CommandError(str(exc), returncode=EXIT_USAGE) from exc
    except (ActionFlowError, OSError) as exc:
        raise CommandError(str(exc), returncode=EXIT_RUNTIME) from exc


def require(options, *names):
    missing = [f"--{name.replace('_', '-')}" for name in names if options.get(name) in (None, "")]
    if missing:
        raise usage_error(f"missing required option(s): {', '.join(missing)}")


def read_config(path):
    if not path:
        return RunConfig()
    if not Path(path).exists():
        raise usage_error(f"config file {path} does not exist")
    try:
        return load_run_config(path)
    except ValidationError as exc:
        raise usage_error(f"invalid config {path}:\n{exc}") from exc


def parse_steps(text):
    try:
        steps = [int(s) for s in str(text).split(",") if s.strip()]
    except ValueError as exc:
        raise usage_error(f"--steps must be a comma separated list of integers, got {text!r}") from exc
    if not steps or any(k < 1 for k in steps):
        raise usage_error(f"--steps needs positive step counts, got {text!r}")
    return steps


def fmt(x):
    return "%.17g" % x


def write_csv(path, header, rows):
    with Path(path).open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) if isinstance(v, float) else v for v in row])
