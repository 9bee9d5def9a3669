"""Seeded generation of random well-formed traces and the fuzz loop."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path

from .engine import EngineOptions, run_engine
from .lifecycle import RaceReport
from .oracle import enumerate_races_adjacent_forcing
from .trace import RawEvent, Trace, annotate_instances, serialize_trace


@dataclass(frozen=True)
class FuzzConfig:
    seed: int = 1
    count: int = 100
    max_threads: int = 3
    max_locks: int = 2
    max_vars: int = 2
    max_events: int = 20
    lock_bias: float = 0.4


def rng_for(seed: int, index: int) -> random.Random:
    # string seeding is hashed with SHA-512, so it is stable across runs and platforms
    return random.Random(f"raptor:{seed}:{index}")


def generate_events(
    rng: random.Random, threads: int, locks: int, variables: int, events: int, lock_bias: float = 0.4
) -> list[RawEvent]:
    """A well-formed event sequence of exactly ``events`` entries.

    Each thread keeps a LIFO stack of held locks. With probability
    ``lock_bias`` the chosen thread does a synchronization step (release
    the innermost lock, or acquire a free one); otherwise it reads or
    writes a random variable.
    """
    names = [f"T{n + 1}" for n in range(threads)]
    lock_names = [f"m{n + 1}" for n in range(locks)]
    var_names = [f"x{n + 1}" for n in range(variables)]
    stacks: dict[str, list[str]] = {t: [] for t in names}
    free = set(lock_names)
    out: list[RawEvent] = []
    while len(out) < events:
        t = names[rng.randrange(threads)]
        stack = stacks[t]
        if locks and rng.random() < lock_bias:
            if stack and (not free or rng.random() < 0.5):
                m = stack.pop()
                free.add(m)
                out.append(RawEvent(t, "rel", m))
                continue
            if free:
                m = rng.choice(sorted(free))
                free.discard(m)
                stack.append(m)
                out.append(RawEvent(t, "acq", m))
                continue
        op = "wr" if rng.random() < 0.5 else "rd"
        out.append(RawEvent(t, op, var_names[rng.randrange(variables)]))
    return out


def gen_random_trace(config: FuzzConfig, index: int) -> Trace:
    rng = rng_for(config.seed, index)
    threads = rng.randint(1, max(1, config.max_threads))
    locks = rng.randint(0, config.max_locks)
    variables = rng.randint(1, max(1, config.max_vars))
    events = rng.randint(0, config.max_events)
    return annotate_instances(generate_events(rng, threads, locks, variables, events, config.lock_bias))


def race_keys(reports: list[RaceReport]) -> set[tuple]:
    return {r.key() for r in reports}


@dataclass
class FuzzOutcome:
    index: int
    trace: Trace
    missing: set[tuple] = field(default_factory=set)  # oracle only
    extra: set[tuple] = field(default_factory=set)  # engine only
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.missing or self.extra or self.violations)


def check_trace(trace: Trace, index: int = 0, invariants: bool = False, options: EngineOptions | None = None) -> FuzzOutcome:
    _, engine_reports = run_engine(trace, options)
    expected = race_keys(enumerate_races_adjacent_forcing(trace))
    got = race_keys(engine_reports)
    out = FuzzOutcome(index, trace, expected - got, got - expected)
    if invariants:
        from .invariants import check_trace_invariants

        out.violations = check_trace_invariants(trace)
    return out


def run_fuzz(config: FuzzConfig, invariants: bool = True, keep_going: bool = False, repro_dir: Path | None = None):
    """Returns (summary lines, failures). The summary never contains timings."""
    failures: list[FuzzOutcome] = []
    checked = 0
    for index in range(config.count):
        outcome = check_trace(gen_random_trace(config, index), index, invariants)
        checked += 1
        if not outcome.ok:
            failures.append(outcome)
            if repro_dir is not None:
                path = Path(repro_dir) / f"repro-seed{config.seed}-index{index}.trace"
                path.write_text(serialize_trace(outcome.trace))
            if not keep_going:
                break
    lines = [
        f"fuzz seed={config.seed} count={config.count} checked={checked} "
        f"passed={checked - len(failures)} failed={len(failures)}"
    ]
    for f in failures:
        lines.append(
            f"  index {f.index}: {len(f.missing)} missed, {len(f.extra)} spurious, {len(f.violations)} invariant violations"
        )
    return lines, failures
