"""Entry point for ``python3 -m dpcheck``."""

from .cli import main_exit

main_exit()
