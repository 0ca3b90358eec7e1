#!/usr/bin/env python
"""Command-line entry point for the speq toolkit."""
import os
import sys


def main():
    """Run a speq subcommand (solve, freeconv, simulate, verify, kolmogorov, ridge)."""
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'speq.settings')
    try:
        import django
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Are you sure it's installed and "
            "available on your PYTHONPATH environment variable? Did you "
            "forget to activate a virtual environment?"
        ) from exc
    django.setup()
    from equiv_app.cli import run
    sys.exit(run(sys.argv))


if __name__ == '__main__':
    main()
