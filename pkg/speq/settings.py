"""
Django settings for the speq project.

speq computes deterministic equivalents of sample-covariance resolvents and
verifies them by simulation. Django is used for configuration, the
management-command CLI, caching and the test runner; there is no web surface.

Every tunable can be set in the environment or in a `.env` file next to
manage.py.
"""

from pathlib import Path
from dotenv import load_dotenv
import os

load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Only used by Django internals (signing); no sessions or forms are served.
SECRET_KEY = os.getenv('SECRET_KEY', 'speq-local-only')

DEBUG = os.getenv('SPEQ_DEBUG', '0') == '1'

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',

    # Installed apps
    'equiv_app',

    # Installed libraries
    'rest_framework',
]

# No models are defined; the dummy backend keeps Django from touching disk.
DATABASES = {}

CACHES = {
    'default': {
        'BACKEND': 'django.core.cache.backends.locmem.LocMemCache',
        'LOCATION': 'speq-solves',
        'TIMEOUT': 3600,
        'OPTIONS': {
            'MAX_ENTRIES': 20000,
        },
    }
}

TEST_RUNNER = 'django.test.runner.DiscoverRunner'

USE_TZ = True

TIME_ZONE = 'UTC'

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# REST Framework Configuration (serializers only, used for validation and JSON output)
REST_FRAMEWORK = {
    'COERCE_DECIMAL_TO_STRING': False,
    'UNAUTHENTICATED_USER': None,
}


# Numerical defaults
SPEQ_THREADS = int(os.getenv('SPEQ_THREADS', '1'))
SPEQ_OUTPUT_DIR = os.getenv('SPEQ_OUTPUT_DIR', str(BASE_DIR / 'speq_output'))
SPEQ_SEED = int(os.getenv('SPEQ_SEED', '20240601'))

SPEQ_SOLVER_TOL = float(os.getenv('SPEQ_SOLVER_TOL', '1e-12'))
SPEQ_SOLVER_MAX_ITER = int(os.getenv('SPEQ_SOLVER_MAX_ITER', '100000'))
SPEQ_SOLVER_CACHE_TIMEOUT = int(os.getenv('SPEQ_SOLVER_CACHE_TIMEOUT', '3600'))

SPEQ_FREECONV_GRID = int(os.getenv('SPEQ_FREECONV_GRID', '512'))
SPEQ_FREECONV_EPS = [
    float(value) for value in os.getenv('SPEQ_FREECONV_EPS', '1e-2,5e-3,2.5e-3').split(',')
]

# Desk-scale limits for the verification harness
SPEQ_MAX_N = int(os.getenv('SPEQ_MAX_N', '1024'))
SPEQ_MAX_P = int(os.getenv('SPEQ_MAX_P', '512'))
SPEQ_MAX_REPLICAS = int(os.getenv('SPEQ_MAX_REPLICAS', '64'))

SPEQ_RUN_SLOW_TESTS = os.getenv('SPEQ_RUN_SLOW_TESTS', '0') == '1'


# Logging
SPEQ_LOG_LEVEL = os.getenv('SPEQ_LOG_LEVEL', 'INFO')
SPEQ_LOG_FILE = os.getenv('SPEQ_LOG_FILE', '')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'django': {
            'handlers': ['console'],
            'level': 'WARNING',
        },
        'equiv_app': {
            'handlers': ['console'],
            'level': SPEQ_LOG_LEVEL,
            'propagate': False,
        },
    },
}

if SPEQ_LOG_FILE:
    LOGGING['handlers']['file'] = {
        'class': 'logging.FileHandler',
        'filename': SPEQ_LOG_FILE,
        'formatter': 'verbose',
    }
    LOGGING['loggers']['equiv_app']['handlers'].append('file')
