"""Trace data model, text format, instance annotation and desugaring."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable

OPS = ("wr", "rd", "acq", "rel", "vwr", "vrd", "fork", "join")
CORE_OPS = ("wr", "rd", "acq", "rel")
RESERVED = "$"

_OP_LABEL = {"wr": "Wr", "rd": "Rd", "acq": "Acq", "rel": "Rel"}


class TraceError(ValueError):
    """Raised for malformed or inconsistent trace input."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True, slots=True)
class RawEvent:
    thread: str
    op: str
    obj: str
    loc: str | None = None


@dataclass(frozen=True, slots=True)
class Event:
    """An annotated event.

    ``index`` is the write counter for ``wr``, the index of the last
    preceding write for ``rd`` (0 if none) and the critical-section
    instance for ``acq``/``rel``.
    """

    pos: int
    thread: str
    op: str
    obj: str
    index: int
    loc: str | None = None

    @property
    def is_access(self) -> bool:
        return self.op == "wr" or self.op == "rd"

    def label(self) -> str:
        base = f"{_OP_LABEL[self.op]} {self.obj}^{self.index}"
        return f"{base}_{self.thread}" if self.op == "rd" else base


@dataclass(frozen=True, slots=True)
class Violation:
    pos: int
    kind: str
    message: str


@dataclass
class Trace:
    events: list[Event] = field(default_factory=list)
    threads: set[str] = field(default_factory=set)
    locks: set[str] = field(default_factory=set)
    variables: set[str] = field(default_factory=set)

    def __len__(self) -> int:
        return len(self.events)


def thread_sort_key(name: str) -> tuple:
    """Natural ordering so that T2 sorts before T10."""
    return tuple((0, int(p)) if p.isdigit() else (1, p) for p in re.split(r"(\d+)", name) if p)


def parse_trace(text: str) -> list[RawEvent]:
    events: list[RawEvent] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        tokens = body.split()
        loc = None
        if tokens[-1].startswith("@"):
            loc = tokens.pop()[1:]
            if not loc:
                raise TraceError("empty source tag", lineno)
        if len(tokens) != 3:
            raise TraceError(f"expected '<thread> <op> <object> [@loc]', got {body!r}", lineno)
        thread, op, obj = tokens
        if op not in OPS:
            raise TraceError(f"unknown op {op!r}", lineno)
        if op in ("fork", "join") and obj == thread:
            raise TraceError(f"thread {thread} cannot {op} itself", lineno)
        events.append(RawEvent(thread, op, obj, loc))
    return events


def desugar(raw: Iterable[RawEvent]) -> list[RawEvent]:
    """Rewrite volatile, fork and join events into lock-based events."""
    out: list[RawEvent] = []
    seen: set[str] = set()
    for n, ev in enumerate(raw):
        for name in (ev.thread, ev.obj):
            if name.startswith(RESERVED):
                raise TraceError(f"event {n}: name {name!r} uses the reserved '$' prefix")
        op, t, loc = ev.op, ev.thread, ev.loc
        if op == "fork" and ev.obj in seen:
            raise TraceError(f"event {n}: fork of already-running thread {ev.obj}")
        if op == "join" and ev.obj not in seen:
            raise TraceError(f"event {n}: join of unknown thread {ev.obj}")
        seen.add(t)
        if op in CORE_OPS:
            out.append(ev)
        elif op in ("vwr", "vrd"):
            lock = f"$L{ev.obj}"
            out += [
                RawEvent(t, "acq", lock, loc),
                RawEvent(t, op[1:], f"$V{ev.obj}", loc),
                RawEvent(t, "rel", lock, loc),
            ]
        else:
            tag = "F" if op == "fork" else "J"
            lock, var = f"${tag}({t},{ev.obj})", f"$v{tag}({t},{ev.obj})"
            first, second = (t, ev.obj) if op == "fork" else (ev.obj, t)
            out += [
                RawEvent(first, "acq", lock, loc),
                RawEvent(first, "wr", var, loc),
                RawEvent(first, "rel", lock, loc),
                RawEvent(second, "acq", lock, loc),
                RawEvent(second, "rd", var, loc),
                RawEvent(second, "rel", lock, loc),
            ]
            seen.add(ev.obj)
    return out


def annotate_instances(raw: Iterable[RawEvent]) -> Trace:
    trace = Trace()
    writes: dict[str, int] = {}
    acquires: dict[str, int] = {}
    open_cs: dict[str, list[int]] = {}
    for pos, ev in enumerate(raw):
        op = ev.op
        if op not in CORE_OPS:
            raise TraceError(f"event {pos}: op {op!r} must be desugared first")
        if op == "wr":
            index = writes[ev.obj] = writes.get(ev.obj, 0) + 1
            trace.variables.add(ev.obj)
        elif op == "rd":
            index = writes.get(ev.obj, 0)
            trace.variables.add(ev.obj)
        elif op == "acq":
            index = acquires[ev.obj] = acquires.get(ev.obj, 0) + 1
            open_cs.setdefault(ev.obj, []).append(index)
            trace.locks.add(ev.obj)
        else:
            stack = open_cs.get(ev.obj)
            # an unmatched release still gets a number so validation can report it
            index = stack.pop() if stack else acquires.get(ev.obj, 0)
            trace.locks.add(ev.obj)
        trace.threads.add(ev.thread)
        trace.events.append(Event(pos, ev.thread, op, ev.obj, index, ev.loc))
    return trace


def validate_well_formed(trace: Trace) -> list[Violation]:
    out: list[Violation] = []
    holder: dict[str, str] = {}
    stacks: dict[str, list[str]] = {}
    for ev in trace.events:
        if ev.op == "acq":
            owner = holder.get(ev.obj)
            if owner == ev.thread:
                out.append(Violation(ev.pos, "reentrant-acquire", f"{ev.thread} re-acquires {ev.obj}"))
                continue
            if owner is not None:
                out.append(Violation(ev.pos, "acquire-held", f"{ev.thread} acquires {ev.obj} held by {owner}"))
                continue
            holder[ev.obj] = ev.thread
            stacks.setdefault(ev.thread, []).append(ev.obj)
        elif ev.op == "rel":
            owner = holder.get(ev.obj)
            if owner is None:
                out.append(Violation(ev.pos, "release-unheld", f"{ev.thread} releases unheld {ev.obj}"))
                continue
            if owner != ev.thread:
                out.append(Violation(ev.pos, "cross-thread-release", f"{ev.thread} releases {ev.obj} held by {owner}"))
                continue
            stack = stacks[ev.thread]
            if stack[-1] != ev.obj:
                out.append(Violation(ev.pos, "non-lifo-release", f"{ev.thread} releases {ev.obj} before {stack[-1]}"))
                continue
            stack.pop()
            del holder[ev.obj]
    return out


def event_distance(e1: Event, e2: Event) -> int:
    return abs(e2.pos - e1.pos)


def serialize_trace(trace: Trace | Iterable[Event | RawEvent]) -> str:
    events = trace.events if isinstance(trace, Trace) else trace
    lines = []
    for ev in events:
        line = f"{ev.thread} {ev.op} {ev.obj}"
        if ev.loc:
            line += f" @{ev.loc}"
        lines.append(line + "\n")
    return "".join(lines)


def held_at_end(trace: Trace) -> dict[str, list[tuple[str, int]]]:
    stacks: dict[str, list[tuple[str, int]]] = {}
    for ev in trace.events:
        if ev.op == "acq":
            stacks.setdefault(ev.thread, []).append((ev.obj, ev.index))
        elif ev.op == "rel":
            stacks[ev.thread].pop()
    return {t: s for t, s in stacks.items() if s}


def closing_releases(held: dict[str, list[tuple[str, int]]], start: int) -> list[Event]:
    """Releases that close every open critical section.

    Innermost first within a thread, threads in natural id order.
    """
    out = []
    for t in sorted(held, key=thread_sort_key):
        for lock, index in reversed(held[t]):
            out.append(Event(start + len(out), t, "rel", lock, index))
    return out


def complete_trace(trace: Trace) -> Trace:
    """The trace with synthetic releases appended for locks still held at the end."""
    extra = closing_releases(held_at_end(trace), len(trace.events))
    if not extra:
        return trace
    return Trace(trace.events + extra, set(trace.threads), set(trace.locks), set(trace.variables))


def load_trace(text: str) -> Trace:
    """Parse, desugar, annotate and validate; raise TraceError on any problem."""
    trace = annotate_instances(desugar(parse_trace(text)))
    problems = validate_well_formed(trace)
    if problems:
        p = problems[0]
        raise TraceError(f"event {p.pos}: {p.kind}: {p.message}")
    return trace


def trace_from_lines(lines: Iterable[str]) -> Trace:
    """Convenience for tests and examples: one event per string."""
    return load_trace("\n".join(lines))
