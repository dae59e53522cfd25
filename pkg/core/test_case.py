#!/usr/bin/env python3
"""
Test Case Base Class

Base for the suites in tests_suites/: discovers test_* methods in source
order, runs them against a SimulationRunner and provides the assertions.
"""

import inspect
import math
import time
import traceback

from core.logger import get_logger, log_test_result, log_test_start, set_saved_source_file


class TestCase:
    """Base class for test suites."""

    def __init__(self, runner):
        """
        Args:
            runner (SimulationRunner): Builds clusters and runs scenarios
        """
        self.runner = runner
        self.logger = get_logger()
        self.current_test_name = None
        self.category_name = self.__class__.__name__.replace("Tests", "")

    def setup(self):
        """Called before each test."""

    def teardown(self):
        """Called after each test, whatever its outcome."""

    def get_test_methods(self):
        """
        Returns:
            list: Bound test_* methods in the order they appear in the source
        """
        methods = [method for name, method in inspect.getmembers(self, predicate=inspect.ismethod)
                   if name.startswith('test_')]
        methods.sort(key=lambda method: inspect.getsourcelines(method)[1])
        return methods

    def run_all_tests(self):
        for method in self.get_test_methods():
            self.run_test(method, save_source_on_failure=False)

    def run_single_test(self, test_name):
        """
        Run one test by name; the test_ prefix is optional.

        Returns:
            bool: False if the suite has no such test
        """
        if not test_name.startswith('test_'):
            test_name = f'test_{test_name}'
        method = getattr(self, test_name, None)
        if method is None:
            self.logger.error(f"Test '{test_name}' not found in {self.__class__.__name__}")
            return False
        self.run_test(method, save_source_on_failure=True)
        return True

    def run_test(self, test_method, save_source_on_failure=False):
        test_name = test_method.__name__
        self.current_test_name = test_name
        # test_leader_crash_recovery -> "Leader Crash Recovery"
        descriptive_name = " ".join(word.capitalize() for word in test_name[5:].split('_'))
        log_test_start(self.category_name, descriptive_name)
        start_time = time.time()

        try:
            self.runner.results.start_test(f"{self.__class__.__name__}.{test_name}")
            self.setup()
            test_method()
            duration = time.time() - start_time
            self.runner.results.pass_test()
            log_test_result(self.category_name, descriptive_name, True, duration)

        except Exception as e:
            duration = time.time() - start_time
            error_msg = str(e) or e.__class__.__name__
            self.logger.debug(f"Exception in {test_name}: {error_msg}")
            self.logger.debug(traceback.format_exc())
            self.runner.results.fail_test(error_msg)
            log_test_result(self.category_name, descriptive_name, False, duration, error_msg)
            if save_source_on_failure:
                self._save_test_source(test_method, error_msg)

        finally:
            try:
                self.teardown()
            except Exception as e:
                self.logger.error(f"Exception in teardown for {test_name}: {e}")
            self.current_test_name = None

    def _save_test_source(self, test_method, error_msg):
        """Copy the failing test's source to logs/ so it can be rerun by hand."""
        try:
            from core.path_utils import get_root
            logs_dir = get_root() / 'logs'
            logs_dir.mkdir(exist_ok=True)
            timestamp = time.strftime("%Y%m%d-%H%M%S")
            class_name = self.__class__.__name__
            file_path = (logs_dir / f"failed_test_{class_name}_{test_method.__name__}_{timestamp}.py").resolve()
            with open(file_path, "w") as f:
                f.write(f"# Failed test: {class_name}.{test_method.__name__}\n")
                f.write(f"# Error: {error_msg}\n\n")
                f.write(inspect.getsource(test_method))
            set_saved_source_file(file_path)
        except Exception as save_error:
            self.logger.debug(f"Failed to save test source: {save_error}")

    # -- assertions -------------------------------------------------------------

    def assert_true(self, condition, message="Assertion failed"):
        if not condition:
            raise AssertionError(message)

    def assert_false(self, condition, message="Assertion failed"):
        if condition:
            raise AssertionError(message)

    def assert_equals(self, actual, expected, message="Values not equal"):
        if actual != expected:
            raise AssertionError(f"{message}: expected {expected}, got {actual}")

    def assert_not_equals(self, actual, expected, message="Values are equal"):
        if actual == expected:
            raise AssertionError(f"{message}: both values are {actual}")

    def assert_almost_equals(self, actual, expected, tolerance=1e-9, message="Values differ"):
        if actual is None or not math.isclose(actual, expected, rel_tol=0, abs_tol=tolerance):
            raise AssertionError(f"{message}: expected {expected} +/- {tolerance}, got {actual}")

    def assert_less(self, actual, bound, message="Value not below bound"):
        if actual is None or not actual < bound:
            raise AssertionError(f"{message}: {actual} is not < {bound}")

    def assert_less_equal(self, actual, bound, message="Value above bound"):
        if actual is None or not actual <= bound:
            raise AssertionError(f"{message}: {actual} is not <= {bound}")

    def assert_greater(self, actual, bound, message="Value not above bound"):
        if actual is None or not actual > bound:
            raise AssertionError(f"{message}: {actual} is not > {bound}")

    def assert_greater_equal(self, actual, bound, message="Value below bound"):
        if actual is None or not actual >= bound:
            raise AssertionError(f"{message}: {actual} is not >= {bound}")

    def assert_contains(self, container, item, message="Item not found in container"):
        if item not in container:
            raise AssertionError(f"{message}: {item} not found in {container}")

    def assert_not_contains(self, container, item, message="Unwanted item found in container"):
        if item in container:
            raise AssertionError(f"{message}: {item} found in {container}")

    def assert_is_none(self, value, message="Value is not None"):
        if value is not None:
            raise AssertionError(f"{message}: {value}")

    def assert_raises(self, exc_type, func, *args, **kwargs):
        """
        Assert that func(*args, **kwargs) raises exc_type.

        Returns:
            Exception: The raised exception, for further checks
        """
        try:
            func(*args, **kwargs)
        except exc_type as e:
            return e
        raise AssertionError(f"{getattr(func, '__name__', func)} did not raise {exc_type.__name__}")
