"""``python -m lightgrad`` runs the command-line interface."""

from .harness.cli import main

main()
