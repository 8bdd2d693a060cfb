import os

import django

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "actionflow.settings")
django.setup()
