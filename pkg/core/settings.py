"""
Django settings for core project.

The project has no database, URLs or templates: Django provides the
management-command framework, settings, logging configuration and the
test runner for the morphtag app.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/6.0/ref/settings/
"""
from pathlib import Path
from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# Commands run without a .env, so the key gets a local default
SECRET_KEY = config('SECRET_KEY', default='morphtag-local-only')

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'morphtag',
]

DATABASES = {}


# Internationalization
# https://docs.djangoproject.com/en/6.0/topics/i18n/

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# =====================================================
# Morphtag
# =====================================================

# Runs write checkpoints, metrics logs and run.cfg under here
MORPHTAG_OUTPUT_DIR = Path(config('MORPHTAG_OUTPUT_DIR', default=str(BASE_DIR / 'runs')))

MORPHTAG_SEED = config('MORPHTAG_SEED', default=7, cast=int)

MORPHTAG_LOG_LEVEL = config('MORPHTAG_LOG_LEVEL', default='INFO')


# Logging
# https://docs.djangoproject.com/en/6.0/topics/logging/

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'morphtag': {
            'handlers': ['console'],
            'level': MORPHTAG_LOG_LEVEL,
            'propagate': False,
        },
    },
}
