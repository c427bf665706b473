from django.apps import AppConfig


class MorphtagConfig(AppConfig):
    name = 'morphtag'
    verbose_name = 'Morphology-aware sequence tagging'
