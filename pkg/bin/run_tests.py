#!/usr/bin/env python3
"""
Spectrum Test Runner - Main Entry Point

Runs the test suites against the simulator. Suites can be run one at a
time, or a single test can be picked out by name.
"""

import argparse
import os
import sys

root_dir = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
if root_dir not in sys.path:
    sys.path.insert(0, root_dir)

from core.logger import get_logger, setup_logger
from core.initialization import initialize_environment

SUITES = ['model', 'simnet', 'plugin', 'monarchic', 'oligarchic', 'democratic', 'meta',
          'oracle', 'workload', 'validator', 'harness', 'acceptance', 'performance']


def parse_arguments():
    parser = argparse.ArgumentParser(description='Run the Spectrum simulator test suites')
    parser.add_argument('--suite', choices=SUITES + ['all'], default='all',
                        help='Test suite to run')
    parser.add_argument('--test', help='Run a specific test by name')
    parser.add_argument('--seed', type=int, default=0,
                        help='Base seed for the scenarios built by the tests')
    parser.add_argument('--quick', action='store_true',
                        help='Shorten long acceptance scenarios')
    parser.add_argument('--verbose', action='store_true',
                        help='Also print protocol debug output to the console')
    return parser.parse_args()


def build_suites(runner):
    from tests_suites.model_tests import ModelTests
    from tests_suites.simnet_tests import SimnetTests
    from tests_suites.plugin_tests import PluginTests
    from tests_suites.monarchic_tests import MonarchicTests
    from tests_suites.oligarchic_tests import OligarchicTests
    from tests_suites.democratic_tests import DemocraticTests
    from tests_suites.meta_tests import MetaTests
    from tests_suites.oracle_tests import OracleTests
    from tests_suites.workload_tests import WorkloadTests
    from tests_suites.validator_tests import ValidatorTests
    from tests_suites.harness_tests import HarnessTests
    from tests_suites.acceptance_tests import AcceptanceTests
    from tests_suites.performance_tests import PerformanceTests

    return {
        'model': ModelTests(runner),
        'simnet': SimnetTests(runner),
        'plugin': PluginTests(runner),
        'monarchic': MonarchicTests(runner),
        'oligarchic': OligarchicTests(runner),
        'democratic': DemocraticTests(runner),
        'meta': MetaTests(runner),
        'oracle': OracleTests(runner),
        'workload': WorkloadTests(runner),
        'validator': ValidatorTests(runner),
        'harness': HarnessTests(runner),
        'acceptance': AcceptanceTests(runner),
        'performance': PerformanceTests(runner),
    }


def main():
    args = parse_arguments()
    setup_logger(10 if args.verbose else 20, banner="Spectrum Test Suite")
    logger = get_logger()

    if not initialize_environment():
        return 1

    # Imported after initialization so that missing packages are installed first
    from core.test_results import TestResults
    from core.test_runner import SimulationRunner

    results = TestResults()
    runner = SimulationRunner(results, seed=args.seed, quick=args.quick)
    test_suites = build_suites(runner)

    is_comprehensive = False
    if args.test:
        test_found = False
        for suite_name, suite in test_suites.items():
            if args.suite != 'all' and args.suite != suite_name:
                continue
            for test_method in suite.get_test_methods():
                if test_method.__name__ in (args.test, f"test_{args.test}"):
                    suite.run_single_test(test_method.__name__)
                    test_found = True
                    break
            if test_found:
                break
        if not test_found:
            logger.error(f"Test '{args.test}' not found")
            return 1
    elif args.suite == 'all':
        is_comprehensive = True
        for suite in test_suites.values():
            suite.run_all_tests()
    else:
        test_suites[args.suite].run_all_tests()

    results.print_summary(is_comprehensive)
    _, failed, _ = results.get_summary()
    return 1 if failed > 0 else 0


if __name__ == "__main__":
    sys.exit(main())
