"""Desk-scale collaborative dryrun of a GPU driver against a remote mock device."""

__version__ = "0.1.0"
