"""Command-line front end.

Exit codes: 0 no races / all checks passed, 1 races found, 2 input error,
3 engine and oracle disagree, 4 invariant violation.
"""

from __future__ import annotations

import os
import sys
import time
from pathlib import Path

import click

from .engine import EngineOptions, run_engine
from .explain import explain as explain_deltas
from .explain import owner_labels, parse_selector
from .fuzz import FuzzConfig, check_trace, gen_random_trace, generate_events, rng_for, run_fuzz
from .invariants import check_trace_invariants
from .lifecycle import RaceReport, RunReport, distance_ranges, format_group, group_key
from .oracle import run_oracle
from .trace import Trace, TraceError, annotate_instances, load_trace, serialize_trace

EXIT_OK, EXIT_RACES, EXIT_INPUT, EXIT_MISMATCH, EXIT_INVARIANT = 0, 1, 2, 3, 4
DEFAULT_ORACLE_CAP = 500


def oracle_cap() -> int:
    raw = os.environ.get("RAPTOR_ORACLE_CAP")
    if raw is None:
        return DEFAULT_ORACLE_CAP
    try:
        return int(raw)
    except ValueError:
        raise click.UsageError(f"RAPTOR_ORACLE_CAP must be an integer, got {raw!r}")


def _fail(message: str, code: int = EXIT_INPUT):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load(path: str) -> Trace:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        _fail(f"{path}: {exc}")
    try:
        return load_trace(text)
    except TraceError as exc:
        _fail(f"{path}: {exc}")


def _load_capped(path: str) -> Trace:
    trace = _load(path)
    cap = oracle_cap()
    if len(trace.events) > cap:
        _fail(f"{path}: {len(trace.events)} events exceeds the oracle cap of {cap} (set RAPTOR_ORACLE_CAP)")
    return trace


def tsv_line(r: RaceReport) -> str:
    fields = (
        r.kind, r.var, r.first.pos, r.second.pos,
        "true" if r.is_hb_race else "false", r.event_distance, format_group(group_key(r)),
    )
    return "\t".join(str(f) for f in fields)


def human_line(r: RaceReport) -> str:
    klass = "hb-race" if r.is_hb_race else "cp-only"
    return (
        f"race {r.kind} on {r.var}: {r.first.label()} @{r.first.pos} ({r.first.thread}) / "
        f"{r.second.label()} @{r.second.pos} ({r.second.thread}), {klass}, distance {r.event_distance}"
    )


def distance_range(lo: int, hi: int) -> str:
    return f"{lo:,}–{hi:,}"


def _print_run(run: RunReport, fmt: str, distances: bool) -> None:
    static, dynamic, hb, cp_only = run.counts
    if fmt == "tsv":
        for r in run.races:
            click.echo(tsv_line(r))
    else:
        for r in run.races:
            click.echo(human_line(r))
    if distances:
        # the distance table covers the races HB alone would miss
        ranges = distance_ranges(r for r in run.races if not r.is_hb_race)
        for key, count, lo, hi in ranges:
            click.echo(f"distance\t{format_group(key)}\t{count}\t{distance_range(lo, hi)}")
        click.echo("distances: " + "; ".join(distance_range(lo, hi) for _, _, lo, hi in ranges))
    summary = (
        f"events={run.events_processed} races={dynamic} static={static} "
        f"hb={hb} cp-only={cp_only} elapsed={run.elapsed:.3f}s"
    )
    click.echo(summary, err=fmt == "tsv")


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
def main():
    """Online CP race detection over lock/access traces.

    Exit codes: 0 clean, 1 races found, 2 input error, 3 engine/oracle
    mismatch, 4 invariant violation.
    """


@main.command()
@click.argument("path", type=click.Path(dir_okay=False))
@click.option("--no-removal", is_flag=True, help="Keep every owner alive (slower, same verdicts).")
@click.option("--check-invariants", is_flag=True, help="Check the state after every event against a prefix oracle.")
@click.option("--distances", is_flag=True, help="Print the event-distance range per static CP-only race.")
@click.option("--format", "fmt", type=click.Choice(["human", "tsv"]), default="human", show_default=True)
def analyze(path, no_removal, check_invariants, distances, fmt):
    """Run the online analysis over a trace file."""
    trace = _load(path)
    if check_invariants:
        if len(trace.events) > oracle_cap():
            _fail(f"{path}: too large for --check-invariants (cap {oracle_cap()}, set RAPTOR_ORACLE_CAP)")
        violations = check_trace_invariants(trace)
        if violations:
            for v in violations:
                click.echo(f"invariant violation {v}", err=True)
            sys.exit(EXIT_INVARIANT)
    start = time.perf_counter()
    state, reports = run_engine(trace, EngineOptions(removal=not no_removal))
    run = RunReport(reports, len(trace.events), time.perf_counter() - start)
    _print_run(run, fmt, distances)
    if fmt == "human":
        click.echo(f"peak live owners={state.peak_owners}")
    sys.exit(EXIT_RACES if reports else EXIT_OK)


@main.command()
@click.argument("path", type=click.Path(dir_okay=False))
@click.option("--mode", type=click.Choice(["all-pairs", "adjacent-forcing"]), default="adjacent-forcing", show_default=True)
@click.option("--format", "fmt", type=click.Choice(["human", "tsv"]), default="human", show_default=True)
def oracle(path, mode, fmt):
    """Brute-force fixpoint oracle (small traces only)."""
    trace = _load_capped(path)
    start = time.perf_counter()
    res = run_oracle(trace, mode)
    _print_run(RunReport(res.races, len(trace.events), time.perf_counter() - start), fmt, False)
    sys.exit(EXIT_RACES if res.races else EXIT_OK)


@main.command()
@click.argument("path", type=click.Path(dir_okay=False))
def diff(path):
    """Compare the online analysis against the adjacent-forcing oracle."""
    trace = _load_capped(path)
    out = check_trace(trace)
    for kind, pos1, pos2, hb in sorted(out.missing):
        click.echo(f"oracle only: {kind} {pos1} {pos2} hb={hb}")
    for kind, pos1, pos2, hb in sorted(out.extra):
        click.echo(f"engine only: {kind} {pos1} {pos2} hb={hb}")
    if out.ok:
        click.echo("match")
        sys.exit(EXIT_OK)
    sys.exit(EXIT_MISMATCH)


def _fuzz_options(f):
    for opt in reversed(
        [
            click.option("--seed", type=int, default=1, show_default=True),
            click.option("--max-threads", type=click.IntRange(1), default=3, show_default=True),
            click.option("--max-locks", type=click.IntRange(0), default=2, show_default=True),
            click.option("--max-vars", type=click.IntRange(1), default=2, show_default=True),
            click.option("--max-events", type=click.IntRange(0), default=20, show_default=True),
            click.option("--lock-bias", type=click.FloatRange(0, 1), default=0.4, show_default=True),
        ]
    ):
        f = opt(f)
    return f


@main.command()
@_fuzz_options
@click.option("--count", type=click.IntRange(0), default=100, show_default=True)
@click.option("--no-invariants", is_flag=True, help="Skip the per-event invariant check.")
@click.option("--keep-going", is_flag=True, help="Do not stop at the first failing trace.")
@click.option("--repro-dir", type=click.Path(file_okay=False), default=".", show_default=True)
def fuzz(seed, max_threads, max_locks, max_vars, max_events, lock_bias, count, no_invariants, keep_going, repro_dir):
    """Differential fuzzing of engine against oracle on random traces."""
    config = FuzzConfig(seed, count, max_threads, max_locks, max_vars, max_events, lock_bias)
    Path(repro_dir).mkdir(parents=True, exist_ok=True)
    lines, failures = run_fuzz(config, invariants=not no_invariants, keep_going=keep_going, repro_dir=Path(repro_dir))
    for line in lines:
        click.echo(line)
    sys.exit(EXIT_MISMATCH if failures else EXIT_OK)


@main.command()
@_fuzz_options
@click.option("--index", type=click.IntRange(0), default=0, show_default=True)
@click.option("--events", type=click.IntRange(0), default=None, help="Exact size; the maxima become exact counts too.")
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None)
def gen(seed, max_threads, max_locks, max_vars, max_events, lock_bias, index, events, output):
    """Write one random well-formed trace."""
    if events is None:
        config = FuzzConfig(seed, 1, max_threads, max_locks, max_vars, max_events, lock_bias)
        trace = gen_random_trace(config, index)
    else:
        rng = rng_for(seed, index)
        trace = annotate_instances(generate_events(rng, max_threads, max_locks, max_vars, events, lock_bias))
    text = serialize_trace(trace)
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)


@main.command()
@click.argument("path", type=click.Path(dir_okay=False))
@click.argument("owner", required=False)
@click.option("--with-po", is_flag=True, help="Also list program-order set changes.")
def explain(path, owner, with_po):
    """Per-event changes to owner sets (no-removal mode), e.g. OWNER = x^1, x^1_T3 or m^2."""
    trace = _load(path)
    label = None
    if owner is not None:
        try:
            label = parse_selector(owner)
        except ValueError as exc:
            _fail(str(exc))
        if label not in owner_labels(trace):
            _fail(f"unknown owner {owner!r}")
    for d in explain_deltas(trace, label):
        if d.set_name == "PO" and not with_po:
            continue
        for line in d.lines():
            click.echo(line)
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
