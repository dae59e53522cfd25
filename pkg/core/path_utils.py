#!/usr/bin/env python3
"""
Path Utilities

Consistent path handling for the simulator and its test framework.
"""

import os
from pathlib import Path

SCENARIOS_DIR = 'data/scenarios'
RESULTS_DIR = 'results'


def get_root():
    """
    Get the absolute path to the repository root.
    This is the parent directory of the 'core' package.

    Returns:
        Path: Absolute path to the repository root
    """
    core_dir = Path(os.path.dirname(os.path.abspath(__file__)))
    return core_dir.parent


def resolve_path(relative_path):
    """
    Resolve a path relative to the repository root.

    Args:
        relative_path (str): Path relative to the root

    Returns:
        Path: Absolute path
    """
    return get_root() / relative_path


def scenario_path(name):
    """
    Locate a bundled scenario by name or accept an explicit path.

    Args:
        name (str): Scenario name (``rising_contention``) or a file path

    Returns:
        Path: Path to the scenario file
    """
    candidate = Path(name)
    if candidate.suffix == '.conf' and candidate.exists():
        return candidate
    return resolve_path(SCENARIOS_DIR) / f"{candidate.stem}.conf"


def results_dir(run_name):
    """Directory where a run's trace, history and CSV files are written."""
    path = resolve_path(RESULTS_DIR) / run_name
    path.mkdir(parents=True, exist_ok=True)
    return path
