#!/usr/bin/env python3
"""
Spectrum - Command Line

    spectrum.py run <scenario> [--seed N] [--out DIR] [--plot] [--quick]
    spectrum.py validate <trace> [<history>]
    spectrum.py report <history> [--trace FILE] [--out DIR] [--plot]
    spectrum.py sweep <scenario> --seeds K [--first-seed N] [--quick]

Any failed validation check, or any SpectrumError, exits with status 1.
"""

import argparse
import os
import sys
import time

root_dir = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
if root_dir not in sys.path:
    sys.path.insert(0, root_dir)

from core.logger import Colors, Emoji, get_logger, log_validation_report, setup_logger


def parse_arguments(argv=None):
    parser = argparse.ArgumentParser(description='Run and check consensus-switching simulations')
    parser.add_argument('--verbose', action='store_true', help='Print debug output to the console')
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help='Run a scenario and write its artifacts')
    run.add_argument('scenario', help='Scenario name under data/scenarios or a .conf path')
    run.add_argument('--seed', type=int, help='Override the scenario seed')
    run.add_argument('--out', help='Output directory (default results/<scenario>-<seed>)')
    run.add_argument('--plot', action='store_true', help='Also render latency.png')
    run.add_argument('--trace-messages', action='store_true', help='Trace every delivery')
    run.add_argument('--quick', action='store_true', help='Desk-scale load: one client per node')

    validate = sub.add_parser('validate', help='Check the safety properties of a trace')
    validate.add_argument('trace', help='trace.txt written by run')
    validate.add_argument('history', nargs='?', help='history.csv written by run')

    report = sub.add_parser('report', help='Emit metric CSVs (and plots) from a history')
    report.add_argument('history', help='history.csv written by run')
    report.add_argument('--trace', help='trace.txt for switch and crash markers')
    report.add_argument('--out', help='Output directory (default: next to the history)')
    report.add_argument('--plot', action='store_true', help='Also render latency.png')

    sweep = sub.add_parser('sweep', help='Run and validate a scenario over many seeds')
    sweep.add_argument('scenario', help='Scenario name under data/scenarios or a .conf path')
    sweep.add_argument('--seeds', type=int, required=True, help='Number of seeds')
    sweep.add_argument('--first-seed', type=int, default=0, help='First seed of the range')
    sweep.add_argument('--quick', action='store_true', help='Desk-scale load: one client per node')
    return parser.parse_args(argv)


def cmd_run(args):
    from core.path_utils import results_dir, scenario_path
    from spectrum.runner import run_scenario
    from spectrum.scenario import load_scenario
    from spectrum.validator import validate_history
    from pathlib import Path

    scenario = load_scenario(scenario_path(args.scenario))
    if args.seed is not None:
        scenario = scenario.with_seed(args.seed)
    if args.quick:
        scenario = scenario.quick()
    result = run_scenario(scenario, trace_messages=args.trace_messages)
    out = Path(args.out) if args.out else results_dir(f"{scenario.name}-{scenario.seed}")
    result.write(out)
    if args.plot:
        from spectrum.metrics import plot_latency
        plot_latency(result.history, result.trace, out / "latency.png")
    report = validate_history(result.trace, result.history)
    log_validation_report(report)
    get_logger().info(f"{Emoji.FILE} Artifacts: {Colors.CYAN}{out}{Colors.RESET}")
    return 0 if report.passed else 1


def cmd_validate(args):
    from spectrum.client import HistoryLog
    from spectrum.trace import TraceLog
    from spectrum.validator import validate_history

    trace = TraceLog.load(args.trace)
    history = HistoryLog.load_csv(args.history) if args.history else None
    report = validate_history(trace, history)
    log_validation_report(report)
    return 0 if report.passed else 1


def cmd_report(args):
    from pathlib import Path
    from spectrum.client import HistoryLog
    from spectrum.metrics import emit_metrics
    from spectrum.trace import TraceLog

    history = HistoryLog.load_csv(args.history)
    trace = TraceLog.load(args.trace) if args.trace else TraceLog()
    out = Path(args.out) if args.out else Path(args.history).parent
    logger = get_logger()
    for path in emit_metrics(history, trace, out, plot=args.plot):
        logger.info(f"{Emoji.FILE} {path}")
    logger.info(f"{Emoji.WARNING} {history.timeout_count()} timeouts, "
                f"{len(history.at_horizon())} commands undecided at the horizon")
    return 0


def cmd_sweep(args):
    import psutil
    from core.path_utils import scenario_path
    from spectrum.runner import run_scenario
    from spectrum.scenario import load_scenario
    from spectrum.validator import validate_history

    logger = get_logger()
    base = load_scenario(scenario_path(args.scenario))
    if args.quick:
        base = base.quick()
    process = psutil.Process()
    failures = 0
    for seed in range(args.first_seed, args.first_seed + args.seeds):
        cpu_before = process.cpu_times()
        started = time.time()
        result = run_scenario(base.with_seed(seed))
        report = validate_history(result.trace, result.history)
        cpu = process.cpu_times()
        cpu_used = (cpu.user - cpu_before.user) + (cpu.system - cpu_before.system)
        rss_mb = process.memory_info().rss / (1024 * 1024)
        verdict = f"{Emoji.SUCCESS} PASS" if report.passed else f"{Emoji.FAIL} FAIL"
        logger.info(f"seed {seed:5d}  {verdict}  {result.status:10s}  wall {time.time() - started:6.2f}s  "
                    f"cpu {cpu_used:6.2f}s  rss {rss_mb:7.1f}MB")
        if not report.passed:
            failures += 1
            log_validation_report(report)
    logger.info(f"{Emoji.END} {args.seeds - failures}/{args.seeds} seeds passed")
    return 1 if failures else 0


COMMANDS = {'run': cmd_run, 'validate': cmd_validate, 'report': cmd_report, 'sweep': cmd_sweep}


def main(argv=None):
    args = parse_arguments(argv)
    setup_logger(10 if args.verbose else 20, banner="Spectrum")
    logger = get_logger()
    from spectrum.errors import SpectrumError
    try:
        return COMMANDS[args.command](args)
    except SpectrumError as e:
        logger.error(f"{Emoji.ERROR} {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
