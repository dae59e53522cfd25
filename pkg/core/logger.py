#!/usr/bin/env python3
"""
Logger Utility

Provides consistent logging for the simulator, the harness and the test framework.
"""

import logging
import sys
import re
import time

from core.path_utils import resolve_path

# Global logger instance
_logger = None
_console_handler = None
_file_handler = None
_current_test = None
_failed_tests_log = None  # Track failed tests log file
_saved_source_file = None  # Track path to saved source file

LOGGER_NAME = 'spectrum'

# Timing threshold in seconds - only show timing if it exceeds this value
TIMING_THRESHOLD = 0.5

# Column alignment width for test names and report rows
TEST_NAME_WIDTH = 38
SEPARATOR_WIDTH = 56


# Terminal colors
class Colors:
    RESET = "\033[0m"
    BOLD = "\033[1m"
    RED = "\033[31m"
    GREEN = "\033[32m"
    YELLOW = "\033[33m"
    BLUE = "\033[34m"
    MAGENTA = "\033[35m"
    CYAN = "\033[36m"
    GRAY = "\033[90m"


# Emoji indicators
class Emoji:
    SUCCESS = "✅"
    BIG_SUCCESS = "🎉"
    FAIL = "❌"
    SKIP = "⏩"
    INFO = "ℹ️"
    WARNING = "⚠️"
    ERROR = "🔥"
    RUNNING = "🔄"
    START = "🚀"
    END = "🏁"
    TIME = "⏱️"
    NETWORK = "📡"
    SWITCH = "🔀"
    CRASH = "💥"
    LIST = "📋"
    DETAIL = "🔍"
    FILE = "🐍"


def strip_ansi_codes(text):
    """Remove ANSI escape sequences from text"""
    ansi_escape = re.compile(r'\x1B(?:[@-Z\\-_]|\[[0-?]*[ -/]*[@-~])')
    return ansi_escape.sub('', text)


class FileFormatter(logging.Formatter):
    """Plain-text file format: short timestamp, [LEVEL] for non-INFO records."""

    def formatTime(self, record, datefmt=None):
        return time.strftime("%Y-%m-%d %H:%M", time.localtime(record.created))

    def formatMessage(self, record):
        if record.levelno == logging.INFO:
            return f"{self.formatTime(record)} {record.message}"
        return f"{self.formatTime(record)} [{record.levelname}] {record.message}"

    def format(self, record):
        return strip_ansi_codes(super().format(record))


def setup_logger(level=logging.INFO, banner="Spectrum Simulation"):
    """
    Set up the global logger.

    Args:
        level (int): Console logging level
        banner (str): Title printed at the top of the session

    Returns:
        logging.Logger: Logger instance
    """
    global _logger, _console_handler, _file_handler
    if _logger is not None:
        return _logger

    _logger = logging.getLogger(LOGGER_NAME)
    _logger.setLevel(logging.DEBUG)  # Handlers filter, the logger keeps everything
    _logger.propagate = False

    logs_dir = resolve_path('logs')
    logs_dir.mkdir(exist_ok=True)

    _console_handler = logging.StreamHandler(sys.stdout)
    _console_handler.setLevel(level)
    _console_handler.setFormatter(logging.Formatter('%(message)s'))

    timestamp = time.strftime("%Y%m%d-%H%M%S")
    log_file = logs_dir / f"spectrum-{timestamp}.log"
    _file_handler = logging.FileHandler(log_file, mode='w')
    _file_handler.setLevel(logging.DEBUG)
    _file_handler.setFormatter(FileFormatter('%(message)s'))

    _logger.addHandler(_console_handler)
    _logger.addHandler(_file_handler)

    _logger.info("─" * SEPARATOR_WIDTH)
    _logger.info(f"{Emoji.NETWORK} {Colors.BOLD}{banner}{Colors.RESET}")
    _logger.info("─" * SEPARATOR_WIDTH)

    return _logger


def get_logger():
    """
    Get the global logger instance.

    Library code that runs before setup_logger() (unit tests, notebooks)
    gets a quiet logger instead of creating log files as a side effect.

    Returns:
        logging.Logger: Logger instance
    """
    if _logger is not None:
        return _logger
    quiet = logging.getLogger(LOGGER_NAME)
    if not quiet.handlers:
        quiet.addHandler(logging.NullHandler())
    return quiet


def log_test_start(category, test_name):
    """
    Remember the test being run so its result lands on the same line.

    Args:
        category (str): Test category
        test_name (str): Test name
    """
    global _current_test
    _current_test = f"{Emoji.RUNNING} {test_name}"


def log_test_result(category, test_name, passed, duration, error=None):
    """
    Log the result of a test.

    Args:
        category (str): Test category
        test_name (str): Test name
        passed (bool): Whether the test passed
        duration (float): Test duration in seconds
        error (str, optional): Error message if the test failed
    """
    global _current_test
    logger = get_logger()

    if passed:
        status = f"{Emoji.SUCCESS} {Colors.GREEN}PASS{Colors.RESET}"
    else:
        status = f"{Emoji.FAIL} {Colors.RED}FAIL{Colors.RESET}"

    timing_info = f" {Emoji.TIME} {duration:.2f}s" if duration > TIMING_THRESHOLD else ""
    label = _current_test or f"{Emoji.RUNNING} {test_name}"
    logger.info(f"{label.ljust(TEST_NAME_WIDTH)} {status}{timing_info}")
    _current_test = None


def log_category_header(category):
    """
    Log a category header.

    Args:
        category (str): Test category
    """
    if category.endswith("Tests"):
        category = category[:-5]

    logger = get_logger()
    logger.info("")
    logger.info(f"{Emoji.INFO}  {Colors.BOLD}{Colors.BLUE}{category}{Colors.RESET}")
    logger.info("─" * SEPARATOR_WIDTH)


def set_saved_source_file(path):
    """Set the path to the saved source file."""
    global _saved_source_file
    _saved_source_file = str(path)


def _row(emoji, label, value, width=len("Total duration:")):
    padding = " " * (width - len(label))
    return f"{emoji} {label}{padding} {value}"


def log_summary(passed, failed, total, duration, is_comprehensive=False):
    """
    Log a summary of test results.

    Args:
        passed (int): Number of passed tests
        failed (int): Number of failed tests
        total (int): Total number of tests
        duration (float): Total duration in seconds
        is_comprehensive (bool): Whether every suite was run
    """
    logger = get_logger()

    logger.info("")
    logger.info("─" * SEPARATOR_WIDTH)
    if failed == 0 and is_comprehensive and total > 0:
        logger.info(f"{Emoji.BIG_SUCCESS} {Colors.BOLD}{Colors.GREEN}All tests passed!{Colors.RESET}")
    else:
        logger.info(f"{Emoji.END} {Colors.BOLD}Test Results Summary{Colors.RESET}")
    logger.info("─" * SEPARATOR_WIDTH)

    logger.info(_row(Emoji.INFO + " ", "Total tests:", f"{Colors.BOLD}{total}{Colors.RESET}"))
    logger.info(_row(Emoji.SUCCESS, "Passed:", f"{Colors.GREEN}{passed}{Colors.RESET}"))
    failed_colour = Colors.RED if failed > 0 else Colors.GREEN
    logger.info(_row(Emoji.FAIL if failed else Emoji.SUCCESS, "Failed:", f"{failed_colour}{failed}{Colors.RESET}"))
    logger.info(f"{Emoji.TIME}  Total duration: {Colors.CYAN}{duration:.2f}s{Colors.RESET}")
    logger.info("")

    if failed > 0 and _failed_tests_log is not None:
        logger.info(f"{Emoji.LIST} List of fails: {Colors.CYAN}{_failed_tests_log}{Colors.RESET}")
    elif failed == 0:
        logger.info(f"{Emoji.LIST} List of fails: None")

    if _file_handler is not None:
        logger.info(f"{Emoji.DETAIL} Detailed logs: {Colors.CYAN}{_file_handler.baseFilename}{Colors.RESET}")
    if _saved_source_file:
        logger.info(f"{Emoji.FILE} Test source: {Colors.CYAN}{_saved_source_file}{Colors.RESET}")


def log_failed_tests(failed_tests):
    """
    Write details of failed tests to a dedicated log file.

    Args:
        failed_tests (list): List of (test_name, error) tuples
    """
    global _failed_tests_log

    if not failed_tests:
        return

    logger = get_logger()
    logs_dir = resolve_path('logs')
    logs_dir.mkdir(exist_ok=True)
    failed_log_file = logs_dir / f"failed-tests-{time.strftime('%Y%m%d-%H%M%S')}.log"

    try:
        with open(failed_log_file, 'w') as f:
            f.write("Failed Tests:\n")
            f.write("─" * SEPARATOR_WIDTH + "\n\n")
            for i, (test_name, error) in enumerate(failed_tests):
                f.write(f"{i+1}. {test_name}\n")
                f.write(f"   Error: {error}\n\n")
        _failed_tests_log = failed_log_file
    except OSError as e:
        logger.error(f"Error creating failed tests log: {e}")
        for i, (test_name, error) in enumerate(failed_tests):
            logger.info(f"{i+1}. {Colors.RED}{test_name}{Colors.RESET}")
            logger.info(f"   Error: {error}")


def log_switch(t, node, era, target):
    """One console line per era switch, as seen by the reporting node."""
    get_logger().info(
        f"{Emoji.SWITCH} t={t / 1000:8.2f}s  node {node}  era {era} -> {Colors.BOLD}{target}{Colors.RESET}")


def log_crash(t, node):
    get_logger().info(f"{Emoji.CRASH} t={t / 1000:8.2f}s  node {node} {Colors.RED}crashed{Colors.RESET}")


def log_run_summary(result):
    """
    Log the outcome of one scenario run.

    Args:
        result (RunResult): Result returned by the scenario runner
    """
    logger = get_logger()
    history = result.history
    logger.info("")
    logger.info("─" * SEPARATOR_WIDTH)
    logger.info(f"{Emoji.END} {Colors.BOLD}Run Summary{Colors.RESET} ({result.scenario.name}, seed {result.scenario.seed})")
    logger.info("─" * SEPARATOR_WIDTH)
    width = len("Virtual time:")
    logger.info(_row(Emoji.INFO + " ", "Status:", result.status, width))
    logger.info(_row(Emoji.TIME + " ", "Virtual time:", f"{result.virtual_time / 1000:.2f}s", width))
    logger.info(_row(Emoji.SUCCESS, "Decided:", f"{history.decided_count()} / {len(history)}", width))
    logger.info(_row(Emoji.WARNING + " ", "Timeouts:", history.timeout_count(), width))
    logger.info(_row(Emoji.TIME + " ", "Horizon:", f"{len(history.at_horizon())} undecided when cut off", width))
    logger.info(_row(Emoji.SWITCH, "Switches:", " -> ".join(k.value for k in result.protocol_sequence()), width))
    logger.info(_row(Emoji.DETAIL, "Events:", len(result.trace), width))


def log_validation_report(report):
    """
    Log every validator check on its own aligned line.

    Args:
        report (ValidationReport): Validator output
    """
    logger = get_logger()
    logger.info("")
    logger.info(f"{Emoji.DETAIL} {Colors.BOLD}Validation{Colors.RESET}")
    logger.info("─" * SEPARATOR_WIDTH)
    for check in report.checks:
        label = f"  {check.name}".ljust(TEST_NAME_WIDTH)
        if check.passed:
            logger.info(f"{label} {Emoji.SUCCESS} {Colors.GREEN}PASS{Colors.RESET}")
        else:
            logger.info(f"{label} {Emoji.FAIL} {Colors.RED}FAIL{Colors.RESET}")
            logger.info(f"{Colors.GRAY}    {check.counterexample}{Colors.RESET}")
