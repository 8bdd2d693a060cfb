"""
Django settings for actionflow project.

관리 명령(manage.py gen_data / train / sample ...)만 쓰는 프로젝트라
URL, 템플릿, DB 설정은 없다.

https://docs.djangoproject.com/en/5.2/ref/settings/
"""
import os
from pathlib import Path

from dotenv import load_dotenv

BASE_DIR = Path(__file__).resolve().parent.parent
load_dotenv(dotenv_path=BASE_DIR / ".env")


def _flag(name, default="0"):
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


SECRET_KEY = os.getenv("ACTIONFLOW_SECRET_KEY", "actionflow-local-only")

DEBUG = _flag("ACTIONFLOW_DEBUG")

ALLOWED_HOSTS = []

INSTALLED_APPS = [
    'actionflow',
]

# 저장은 체크포인트 파일로만 한다
DATABASES = {}

ACTIONFLOW = {
    "WORKERS": int(os.getenv("ACTIONFLOW_WORKERS", "4")),
    "SLOW_TESTS": _flag("ACTIONFLOW_SLOW_TESTS"),
    "LOG_LEVEL": os.getenv("ACTIONFLOW_LOG_LEVEL", "INFO").upper(),
}

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "plain": {
            "format": "{asctime} {levelname} {name} {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "plain",
        },
    },
    "loggers": {
        "actionflow": {
            "handlers": ["console"],
            "level": ACTIONFLOW["LOG_LEVEL"],
            "propagate": False,
        },
    },
}

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True
