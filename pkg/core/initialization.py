#!/usr/bin/env python3
"""
Environment Initialization

Prepares the workspace before tests or runs: output directories, required
packages and the bundled scenario files.
"""

import importlib.util
import subprocess
import sys

from core.path_utils import RESULTS_DIR, SCENARIOS_DIR, get_root

DIRS_TO_CREATE = ["logs", RESULTS_DIR]
REQUIRED_PACKAGES = ["numpy", "psutil", "tarjan"]
OPTIONAL_PACKAGES = ["matplotlib"]

REQUIRED_SCENARIOS = [
    "steady",
    "zero_downtime_switch",
    "stop_and_restart",
    "rising_contention",
    "falling_contention",
    "leader_crash",
    "triple_switch",
]


class InitializationError(Exception):
    """Raised when the workspace cannot be prepared."""


def check_and_create_directories():
    root = get_root()
    for dir_path in DIRS_TO_CREATE:
        full_path = root / dir_path
        if not full_path.exists():
            print(f"Creating directory: {full_path}")
            full_path.mkdir(parents=True, exist_ok=True)
    init_file = root / "tests_suites" / "__init__.py"
    if not init_file.exists():
        init_file.touch()
    return True


def check_and_install_packages():
    """
    Install missing required packages with pip.

    Returns:
        bool: True if something was installed
    """
    missing = [p for p in REQUIRED_PACKAGES if importlib.util.find_spec(p) is None]
    for package in OPTIONAL_PACKAGES:
        if importlib.util.find_spec(package) is None:
            print(f"Optional package '{package}' not installed: plots are disabled")
    if not missing:
        return False
    print(f"Installing missing packages: {', '.join(missing)}")
    try:
        subprocess.check_call([sys.executable, "-m", "pip", "install"] + missing)
        print("Dependencies installed successfully.")
        return True
    except subprocess.CalledProcessError:
        print("WARNING: Failed to install dependencies automatically.")
        print("You can install them using: pip install -r requirements.txt")
        return False


def check_scenario_files():
    """
    Raises:
        InitializationError: If a bundled scenario is missing or empty
    """
    scenarios = get_root() / SCENARIOS_DIR
    if not scenarios.is_dir():
        raise InitializationError(f"Scenario directory not found: {scenarios}")
    for name in REQUIRED_SCENARIOS:
        path = scenarios / f"{name}.conf"
        if not path.exists():
            raise InitializationError(f"Required scenario not found: {path}")
        if path.stat().st_size == 0:
            raise InitializationError(f"Required scenario is empty: {path}")


def initialize_environment():
    try:
        check_and_create_directories()
        check_and_install_packages()
        check_scenario_files()
        return True
    except InitializationError as e:
        print(f"ERROR: {e}")
        return False


if __name__ == "__main__":
    if not initialize_environment():
        sys.exit(1)
