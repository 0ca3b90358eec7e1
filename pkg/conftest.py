"""Configure Django before pytest collects the app's tests."""
import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'speq.settings')
django.setup()
