"""Operational shell: configuration, persistence, CLI, and experiment runner."""

from .fvbin import read_fvbin, write_fvbin  # noqa: F401
