"""
Pytest collection wiring for tests_suites/.

The suites are written for the custom runner in bin/run_tests.py (TestCase
subclasses taking a SimulationRunner, in *_tests.py files), which pytest does
not discover on its own. This exposes every test_* method of every suite as a
pytest item, built the same way bin/run_tests.py builds it (seed 0, not quick).
"""

import importlib
import inspect

import pytest

_runner = None


def _get_runner():
    global _runner
    if _runner is None:
        from core.initialization import initialize_environment
        from core.logger import setup_logger
        from core.test_results import TestResults
        from core.test_runner import SimulationRunner

        setup_logger(20, banner="Spectrum Test Suite")
        if not initialize_environment():
            raise RuntimeError("Environment initialization failed")
        _runner = SimulationRunner(TestResults(), seed=0, quick=False)
    return _runner


def pytest_collect_file(parent, file_path):
    if file_path.parent.name == "tests_suites" and file_path.name.endswith("_tests.py"):
        return SuiteFile.from_parent(parent, path=file_path)
    return None


class SuiteFile(pytest.File):
    def collect(self):
        from core.test_case import TestCase

        module = importlib.import_module(f"tests_suites.{self.path.stem}")
        for name, cls in inspect.getmembers(module, inspect.isclass):
            if cls.__module__ != module.__name__ or not issubclass(cls, TestCase) or cls is TestCase:
                continue
            methods = [m for m in dir(cls) if m.startswith("test_") and callable(getattr(cls, m))]
            methods.sort(key=lambda m: inspect.getsourcelines(getattr(cls, m))[1])
            for method_name in methods:
                yield SuiteItem.from_parent(self, name=f"{name}::{method_name}",
                                            suite_cls=cls, method_name=method_name)


class SuiteItem(pytest.Item):
    def __init__(self, *, suite_cls, method_name, **kwargs):
        super().__init__(**kwargs)
        self.suite_cls = suite_cls
        self.method_name = method_name

    def runtest(self):
        suite = self.suite_cls(_get_runner())
        suite.current_test_name = self.method_name
        suite.setup()
        try:
            getattr(suite, self.method_name)()
        finally:
            suite.teardown()
            suite.current_test_name = None

    def reportinfo(self):
        return self.path, None, self.name
