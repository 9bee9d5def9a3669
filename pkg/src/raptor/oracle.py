"""Brute-force PO/HB/CP computation used as ground truth.

Relations are dense boolean matrices over event positions. Everything here
is cubic or worse in the trace length and meant for traces of at most a
few hundred events.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lifecycle import RaceReport, make_report, sort_reports
from .trace import Event, Trace, complete_trace


@dataclass
class CriticalSection:
    lock: str
    index: int
    thread: str
    acq: int
    rel: int | None
    accesses: list[Event] = field(default_factory=list)


@dataclass
class OracleResult:
    events: list[Event]
    po: np.ndarray
    hb: np.ndarray
    cp: np.ndarray
    sections: dict[str, list[CriticalSection]]
    seeds: set[tuple[str, int, int]]  # Rule (a) pairs as (lock, earlier, later)
    races: list[RaceReport] = field(default_factory=list)


def _events(trace: Trace | list[Event]) -> list[Event]:
    return trace.events if isinstance(trace, Trace) else list(trace)


def transitive_closure(rel: np.ndarray) -> np.ndarray:
    r = rel.copy()
    for k in range(len(r)):
        col = r[:, k]
        if col.any():
            r[col] |= r[k]
    return r


def _compose(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a.astype(np.float32) @ b.astype(np.float32)) > 0


def compute_po(trace: Trace | list[Event]) -> np.ndarray:
    evs = _events(trace)
    ids = {t: n for n, t in enumerate(sorted({e.thread for e in evs}))}
    tid = np.array([ids[e.thread] for e in evs], dtype=np.int64)
    same = tid[:, None] == tid[None, :]
    return np.triu(same, k=1)


def _sync_edges(evs: list[Event]) -> np.ndarray:
    n = len(evs)
    edges = np.zeros((n, n), dtype=bool)
    rels: dict[str, list[int]] = {}
    for e in evs:
        if e.op == "rel":
            rels.setdefault(e.obj, []).append(e.pos)
        elif e.op == "acq":
            for r in rels.get(e.obj, ()):
                edges[r, e.pos] = True
    return edges


def compute_hb(trace: Trace | list[Event]) -> np.ndarray:
    evs = _events(trace)
    return transitive_closure(compute_po(evs) | _sync_edges(evs))


def critical_sections(evs: list[Event]) -> dict[str, list[CriticalSection]]:
    """Critical sections per lock in instance order; open ones have ``rel=None``."""
    out: dict[str, list[CriticalSection]] = {}
    open_by_thread: dict[str, list[CriticalSection]] = {}
    for e in evs:
        if e.op == "acq":
            cs = CriticalSection(e.obj, e.index, e.thread, e.pos, None)
            out.setdefault(e.obj, []).append(cs)
            open_by_thread.setdefault(e.thread, []).append(cs)
        elif e.op == "rel":
            stack = open_by_thread[e.thread]
            cs = next(c for c in reversed(stack) if c.lock == e.obj)
            cs.rel = e.pos
            stack.remove(cs)
        else:
            for cs in open_by_thread.get(e.thread, ()):
                cs.accesses.append(e)
    return out


def _conflict(a: Event, b: Event) -> bool:
    return a.obj == b.obj and a.thread != b.thread and (a.op == "wr" or b.op == "wr")


def sections_conflict(a: CriticalSection, b: CriticalSection) -> bool:
    if a.thread == b.thread:
        return False
    return any(_conflict(x, y) for x in a.accesses for y in b.accesses)


def rule_a_seeds(sections: dict[str, list[CriticalSection]]) -> set[tuple[str, int, int]]:
    seeds = set()
    for lock, css in sections.items():
        for i, a in enumerate(css):
            if a.rel is None:
                continue
            for b in css[i + 1 :]:
                if sections_conflict(a, b):
                    seeds.add((lock, a.index, b.index))
    return seeds


def _fixpoint(evs: list[Event], hb: np.ndarray, sections, seeds) -> np.ndarray:
    n = len(evs)
    cp = np.zeros((n, n), dtype=bool)
    by_index = {m: {c.index: c for c in css} for m, css in sections.items()}
    for m, i, j in seeds:
        cp[by_index[m][i].rel, by_index[m][j].acq] = True
    hbr = hb | np.eye(n, dtype=bool)
    rule_b = []
    for m, css in sections.items():
        closed = [c for c in css if c.rel is not None]
        if len(closed) < 2:
            continue
        acq = np.array([c.acq for c in closed])
        rel = np.array([c.rel for c in closed])
        upper = np.triu(np.ones((len(closed), len(closed)), dtype=bool), k=1)
        rule_b.append((acq, rel, upper))
    while True:
        nxt = _compose(_compose(hbr, cp), hbr)
        for acq, rel, upper in rule_b:
            hit = nxt[np.ix_(acq, rel)] & upper
            if hit.any():
                sub = nxt[np.ix_(rel, acq)]
                nxt[np.ix_(rel, acq)] = sub | hit
        if np.array_equal(nxt, cp):
            return cp
        cp = nxt


def compute_cp_fixpoint(trace: Trace | list[Event], hb: np.ndarray | None = None) -> np.ndarray:
    return analyze_relations(trace, hb).cp


def analyze_relations(trace: Trace | list[Event], hb: np.ndarray | None = None) -> OracleResult:
    evs = _events(trace)
    po = compute_po(evs)
    if hb is None:
        hb = transitive_closure(po | _sync_edges(evs))
    sections = critical_sections(evs)
    seeds = rule_a_seeds(sections)
    cp = _fixpoint(evs, hb, sections, seeds)
    return OracleResult(evs, po, hb, cp, sections, seeds)


def knowable_prefix(trace: Trace | list[Event], k: int) -> OracleResult:
    """Relations over events 0..k; open critical sections still seed Rule (a)."""
    evs = _events(trace)
    if not 0 <= k < len(evs):
        raise IndexError(f"prefix position {k} outside 0..{len(evs) - 1}")
    return analyze_relations(evs[: k + 1])


def _accesses(evs: list[Event]) -> list[Event]:
    return [e for e in evs if e.op in ("wr", "rd")]


def enumerate_races_all_pairs(trace: Trace, result: OracleResult | None = None) -> list[RaceReport]:
    """Every conflicting pair unordered by PO and CP (over the completed trace)."""
    res = result or analyze_relations(complete_trace(trace))
    acc = _accesses(res.events)
    out = []
    for n, a in enumerate(acc):
        for b in acc[n + 1 :]:
            if _conflict(a, b) and not res.cp[a.pos, b.pos]:
                out.append(_report(a, b, res))
    return sort_reports(out)


def _report(a: Event, b: Event, res: OracleResult) -> RaceReport:
    if a.op == "wr" and b.op == "wr":
        kind = "ww"
    elif a.op == "wr":
        kind = "wr"
    else:
        kind = "rw"
    return make_report(kind, a, b, not res.hb[a.pos, b.pos], b.pos)


def adjacent_pairs(evs: list[Event]) -> list[tuple[Event, Event]]:
    """The access pairs the online analysis gives verdicts on.

    Per variable: consecutive writes; a write and the first read of its value
    by each other thread; the last read of a value by a thread and the write
    that overwrites it.
    """
    pairs = []
    last_write: dict[str, Event] = {}
    first_read: dict[tuple[str, int, str], Event] = {}
    last_read: dict[tuple[str, int, str], Event] = {}
    readers: dict[tuple[str, int], list[str]] = {}
    for e in _accesses(evs):
        x = e.obj
        if e.op == "rd":
            key = (x, e.index, e.thread)
            if key not in first_read:
                first_read[key] = e
                readers.setdefault((x, e.index), []).append(e.thread)
                w = last_write.get(x)
                if w is not None and w.thread != e.thread:
                    pairs.append((w, e))
            last_read[key] = e
            continue
        prev_gen = e.index - 1
        w = last_write.get(x)
        if w is not None and w.thread != e.thread:
            pairs.append((w, e))
        for t in readers.get((x, prev_gen), ()):
            if t != e.thread:
                pairs.append((last_read[(x, prev_gen, t)], e))
        last_write[x] = e
    return pairs


def enumerate_races_adjacent_forcing(trace: Trace, result: OracleResult | None = None) -> list[RaceReport]:
    """Races among adjacent pairs.

    A reported pair counts as ordered afterwards. No CP edge is added for it:
    the online analysis marks the pair with a marker that no other verdict
    reads, so re-closing the relation here would diverge from it.
    """
    res = result or analyze_relations(complete_trace(trace))
    out = [_report(a, b, res) for a, b in adjacent_pairs(res.events) if not res.cp[a.pos, b.pos]]
    return sort_reports(out)


def run_oracle(trace: Trace, mode: str = "adjacent-forcing") -> OracleResult:
    res = analyze_relations(complete_trace(trace))
    if mode == "all-pairs":
        res.races = enumerate_races_all_pairs(trace, res)
    elif mode == "adjacent-forcing":
        res.races = enumerate_races_adjacent_forcing(trace, res)
    else:
        raise ValueError(f"unknown oracle mode {mode!r}")
    return res


def cp_distances(result: OracleResult) -> dict[tuple[str, int, int], int]:
    """Distance for every CP-ordered pair of critical sections on one lock.

    Keys are ``(lock, later, earlier)``. Zero means a conflicting pair of
    sections lies within the two; otherwise one more than the cheapest
    mediating pair on some lock whose ordering puts these two in order.
    """
    secs = {m: {c.index: c for c in css} for m, css in result.sections.items()}
    hb, cp = result.hb, result.cp
    dist: dict[tuple[str, int, int], int] = {}
    pending = []
    for m, css in secs.items():
        idx = sorted(css)
        for a in idx:
            for b in idx:
                if a < b and css[a].rel is not None:
                    pending.append((m, b, a))
    for m, i, j in pending:
        if any(m == s[0] and j <= s[1] and s[2] <= i for s in result.seeds):
            dist[(m, i, j)] = 0
    mediators = []
    for n, css in secs.items():
        for k, ck in css.items():
            for l, cl in css.items():
                if k < l and ck.rel is not None and cp[ck.rel, cl.acq]:
                    mediators.append((n, l, k, ck.rel, cl.acq))
    level = 0
    while True:
        level += 1
        found = {}
        for m, i, j in pending:
            if (m, i, j) in dist:
                continue
            acq_j = secs[m][j].acq
            rel_i = secs[m][i].rel
            if rel_i is None:
                continue
            best = None
            for n, l, k, rel_k, acq_l in mediators:
                d = dist.get((n, l, k))
                if d is not None and hb[acq_j, rel_k] and hb[acq_l, rel_i]:
                    best = d if best is None else min(best, d)
            if best is not None:
                found[(m, i, j)] = best + 1
        if not found:
            return dist
        dist.update(found)


def cp_distance(trace: Trace | OracleResult, m: str, i: int, j: int) -> int | None:
    """CP-distance between sections ``m^j`` (earlier) and ``m^i``; None if not derivable."""
    res = trace if isinstance(trace, OracleResult) else analyze_relations(trace)
    if j >= i:
        return None
    return cp_distances(res).get((m, i, j))
