from django.apps import AppConfig


class ActionflowConfig(AppConfig):
    name = 'actionflow'
    verbose_name = 'ActionFlow'
