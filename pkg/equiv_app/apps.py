from django.apps import AppConfig


class EquivAppConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'equiv_app'
    verbose_name = 'Deterministic equivalents'
