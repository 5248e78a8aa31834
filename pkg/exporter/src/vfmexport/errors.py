"""Exporter failure types; the CLI maps them to exit codes."""

from __future__ import annotations


class ExportError(Exception):
    """Bad parameters or unusable inputs."""

    exit_code = 2


class JobError(ExportError):
    """The job cannot produce a valid output file."""

    exit_code = 3
