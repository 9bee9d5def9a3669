"""Online CP analysis over per-owner PO/HB/CP/CCP sets.

Set elements are strings so that membership tests stay cheap:

* ``t:T``  thread T
* ``l:m``  lock m (CP sets only)
* ``ξ``    the next write of the owner's variable
* ``ξ:T``  the first read of the owner's value by T

HB sets keep lock entries apart in ``hbl`` (lock -> earliest instance) and
``star`` (locks whose entry is the critical section enclosing the access).
CCP sets map a lock n to ``{target: k}``, meaning (target | n^k).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from . import lifecycle
from .lifecycle import XI, RaceReport, sort_reports, xi_of
from .trace import Event, Trace, closing_releases, thread_sort_key


class EngineError(RuntimeError):
    """The engine was fed an event that does not fit its state."""


def th(t: str) -> str:
    return "t:" + t


def lk(m: str) -> str:
    return "l:" + m


class Owner:
    __slots__ = (
        "key", "kind", "obj", "index", "thread", "event", "po", "hb", "hbl", "star",
        "cp", "ccp", "next_write", "ww_done", "open_reads", "seen_reads", "released", "alive",
    )

    def __init__(self, key: tuple, thread: str | None, event: Event | None):
        self.key = key
        self.kind = key[0]
        self.obj = key[1]
        self.index = key[2]
        self.thread = thread
        self.event = event
        self.po: set[str] = set()
        self.hb: set[str] = set()
        self.hbl: dict[str, int] = {}
        self.star: set[str] = set()
        self.cp: set[str] = set()
        self.ccp: dict[str, dict[str, int]] = {}
        self.next_write: Event | None = None
        self.ww_done = False
        self.open_reads: dict[str, Event] = {}
        self.seen_reads: set[str] = set()
        self.released = False
        self.alive = True

    def label(self) -> str:
        return owner_label(self.key)

    def __repr__(self) -> str:
        return f"Owner({self.label()})"


def owner_label(key: tuple) -> str:
    if key[0] == "r":
        return f"{key[1]}^{key[2]}_{key[3]}"
    return f"{key[1]}^{key[2]}"


@dataclass
class EngineOptions:
    removal: bool = True
    rule_a: str = "index"  # or "scan"
    precompute: bool = True
    indexed_loops: bool = True


class AnalysisState:
    def __init__(self, options: EngineOptions | None = None):
        self.opts = options or EngineOptions()
        self.owners: dict[tuple, Owner] = {}
        self.held: dict[str, list[tuple[str, int]]] = {}
        self.holder: dict[str, str] = {}
        self.lock_count: dict[str, int] = {}
        self.write_count: dict[str, int] = {}
        self.threads: set[str] = set()
        self.cur_write: dict[str, Owner] = {}
        self.readers: dict[str, dict[str, Owner]] = {}
        self.lock_owners: dict[str, dict[int, Owner]] = {}
        self.pending: set[Owner] = set()
        # Rule (a) lookup: (var, lock) -> thread -> latest instance with an access inside
        self.wr_idx: dict[tuple[str, str], dict[str, int]] = {}
        self.rd_idx: dict[tuple[str, str], dict[str, int]] = {}
        self.history: dict[str, list[tuple[str, str, dict[str, int]]]] = {}
        self.rule_a_hits: dict[tuple[str, str], int] = {}
        # inverted indices used to narrow the "for every owner" loops
        self.idx_hbl: dict[str, set[Owner]] = {}
        self.idx_cpl: dict[str, set[Owner]] = {}
        self.idx_ccp: dict[str, set[Owner]] = {}
        self.idx_hbt: dict[str, set[Owner]] = {}
        # removal bookkeeping: (lock, j) -> owners still able to need m^j
        self.refs: dict[tuple[str, int], int] = {}
        self.lock_candidates: set[Owner] = set()
        self.reports: list[RaceReport] = []
        self.new_reports: list[RaceReport] = []
        self.forced: set[tuple[tuple, str]] = set()
        self.pos = -1
        self.next_pos = 0
        self.peak_owners = 0
        self.finalized = False

    # -- set mutation helpers keeping the indices in step ---------------

    def _counts(self, o: Owner, m: str) -> bool:
        return not (o.kind == "a" and o.obj == m and o.index == o.hbl[m]) and lk(m) not in o.cp

    def set_hbl(self, o: Owner, m: str, j: int, star: bool = False) -> None:
        o.hbl[m] = j
        if star:
            o.star.add(m)
        self.idx_hbl.setdefault(m, set()).add(o)
        if self._counts(o, m):
            self.refs[(m, j)] = self.refs.get((m, j), 0) + 1

    def add_cp(self, o: Owner, target: str) -> None:
        if target in o.cp:
            return
        if target[0] == "l" and target[1] == ":":
            m = target[2:]
            counted = m in o.hbl and self._counts(o, m)
            o.cp.add(target)
            self.idx_cpl.setdefault(m, set()).add(o)
            if counted:
                self._unref(m, o.hbl[m])
        else:
            o.cp.add(target)

    def add_hb(self, o: Owner, target: str) -> None:
        if target in o.hb:
            return
        o.hb.add(target)
        if target[0] == "t":
            self.idx_hbt.setdefault(target[2:], set()).add(o)

    def add_ccp(self, o: Owner, n: str, target: str, k: int) -> None:
        if target in o.cp:
            return  # already unconditional
        d = o.ccp.get(n)
        if d is None:
            d = o.ccp[n] = {}
            self.idx_ccp.setdefault(n, set()).add(o)
        old = d.get(target)
        if old is None or k < old:
            d[target] = k

    def drop_ccp(self, o: Owner, n: str) -> None:
        if o.ccp.pop(n, None) is not None:
            self.idx_ccp[n].discard(o)

    def _unref(self, m: str, j: int) -> None:
        left = self.refs[(m, j)] = self.refs[(m, j)] - 1
        if left == 0:
            lo = self.lock_owners.get(m, {}).get(j)
            if lo is not None and lo.released:
                self.lock_candidates.add(lo)

    def new_owner(self, key: tuple, thread: str, event: Event | None) -> Owner:
        o = Owner(key, thread, event)
        self.owners[key] = o
        o.po.add(th(thread))
        self.add_hb(o, th(thread))
        if len(self.owners) > self.peak_owners:
            self.peak_owners = len(self.owners)
        return o

    def delete_owner(self, o: Owner) -> None:
        if not o.alive:
            return
        o.alive = False
        if self.owners.get(o.key) is o:
            del self.owners[o.key]
        for m, j in o.hbl.items():
            self.idx_hbl[m].discard(o)
            if self._counts(o, m):
                self._unref(m, j)
        for target in o.cp:
            if target.startswith("l:"):
                self.idx_cpl[target[2:]].discard(o)
        for n in o.ccp:
            self.idx_ccp[n].discard(o)
        for target in o.hb:
            if target[0] == "t":
                self.idx_hbt[target[2:]].discard(o)
        self.pending.discard(o)
        if o.kind == "a":
            del self.lock_owners[o.obj][o.index]
            self.lock_candidates.discard(o)
        elif o.kind == "r":
            rs = self.readers.get(o.obj)
            if rs is not None and rs.get(o.key[3]) is o:
                del rs[o.key[3]]

    def lock_owner_obsolete(self, lo: Owner) -> bool:
        m, j = lo.obj, lo.index
        if self.refs.get((m, j), 0) > 0:
            return False
        lm = lk(m)
        for o in self.idx_ccp.get(m, ()):
            if o is not lo and lm not in o.cp and min(o.ccp[m].values()) <= j:
                return False
        return True

    # -- misc ------------------------------------------------------------

    def ensure_thread(self, t: str) -> None:
        if t in self.threads:
            return
        self.threads.add(t)
        marker = xi_of(t)
        for o in self.cur_write.values():
            if o.index == 0:
                o.po.add(marker)

    def ensure_var(self, x: str) -> None:
        if x in self.cur_write:
            return
        o = Owner(("w", x, 0), None, None)
        o.po.add(XI)
        o.po.update(xi_of(t) for t in self.threads)
        self.owners[o.key] = o
        self.cur_write[x] = o
        self.readers[x] = {}
        self.write_count.setdefault(x, 0)

    def live_counts(self) -> dict[str, int]:
        out = {"w": 0, "r": 0, "a": 0}
        for o in self.owners.values():
            out[o.kind] += 1
        return out


def init_state(threads: Iterable[str] = (), variables: Iterable[str] = (), options: EngineOptions | None = None) -> AnalysisState:
    state = AnalysisState(options)
    for t in sorted(threads, key=thread_sort_key):
        state.ensure_thread(t)
    for x in sorted(variables):
        state.ensure_var(x)
    return state


# -- Rule (a) ----------------------------------------------------------------


def _rule_a_instance(state: AnalysisState, x: str, m: str, t: str, writing: bool) -> int:
    """Latest critical section on m holding an access to x that conflicts with t's access."""
    best = 0
    if state.opts.rule_a == "scan":
        for who, op, locks in state.history.get(x, ()):
            if who != t and (writing or op == "wr") and m in locks and locks[m] > best:
                best = locks[m]
        return best
    tables = (state.wr_idx, state.rd_idx) if writing else (state.wr_idx,)
    for table in tables:
        per = table.get((x, m))
        if per:
            for who, j in per.items():
                if who != t and j > best:
                    best = j
    return best


def _establish_rule_a(state: AnalysisState, e: Event, writing: bool) -> None:
    t = e.thread
    for m, _cur in state.held.get(t, ()):
        j = _rule_a_instance(state, e.obj, m, t, writing)
        if not j:
            continue
        key = (m, t)
        if state.rule_a_hits.get(key, 0) < j:
            state.rule_a_hits[key] = j
        target = state.lock_owners.get(m, {}).get(j)
        if target is not None:
            state.add_cp(target, th(t))


def _record_access(state: AnalysisState, e: Event) -> None:
    held = state.held.get(e.thread, ())
    table = state.wr_idx if e.op == "wr" else state.rd_idx
    for m, j in held:
        table.setdefault((e.obj, m), {})[e.thread] = j
    if state.opts.rule_a == "scan":
        state.history.setdefault(e.obj, []).append((e.thread, e.op, dict(held)))


def _mirror(state: AnalysisState, o: Owner, t: str, marker: str) -> None:
    """Give ``marker`` every ordering o already has towards thread t."""
    tt = th(t)
    if tt in o.po:
        o.po.add(marker)
    if tt in o.hb:
        o.hb.add(marker)
    if tt in o.cp:
        o.cp.add(marker)
    for n, d in o.ccp.items():
        k = d.get(tt)
        if k is not None:
            old = d.get(marker)
            if old is None or k < old:
                d[marker] = k


def _init_access(state: AnalysisState, key: tuple, e: Event) -> Owner:
    o = state.new_owner(key, e.thread, e)
    for m, j in state.held.get(e.thread, ()):
        state.set_hbl(o, m, j, star=True)
    return o


# -- event handlers -----------------------------------------------------------


def handle_write(state: AnalysisState, e: Event) -> None:
    x, t = e.obj, e.thread
    state.ensure_thread(t)
    state.ensure_var(x)
    if e.index != state.write_count[x] + 1:
        raise EngineError(f"write {e.label()} out of sequence (expected index {state.write_count[x] + 1})")
    _establish_rule_a(state, e, writing=True)
    prev = state.cur_write[x]
    older = [prev, *state.readers[x].values()]
    for o in older:
        _mirror(state, o, t, XI)
        o.next_write = e
    state.write_count[x] = e.index
    o = _init_access(state, ("w", x, e.index), e)
    state.cur_write[x] = o
    state.readers[x] = {}
    _record_access(state, e)
    state.pending.update(older)


def handle_read(state: AnalysisState, e: Event) -> None:
    x, t = e.obj, e.thread
    state.ensure_thread(t)
    state.ensure_var(x)
    if e.index != state.write_count[x]:
        raise EngineError(f"read {e.label()} does not see the latest write (index {state.write_count[x]})")
    _establish_rule_a(state, e, writing=False)
    w = state.cur_write[x]
    if t not in w.seen_reads:
        # the marker stands for the first read of this value by t
        w.seen_reads.add(t)
        _mirror(state, w, t, xi_of(t))
        if w.index > 0 and t != w.thread:
            w.open_reads[t] = e
    old = state.readers[x].get(t)
    if old is not None:
        state.delete_owner(old)
    state.readers[x][t] = _init_access(state, ("r", x, e.index, t), e)
    _record_access(state, e)


def _candidates(state: AnalysisState, groups: Iterable[Iterable[Owner]]) -> Iterable[Owner]:
    if not state.opts.indexed_loops:
        return list(state.owners.values())
    seen: set[Owner] = set()
    for g in groups:
        seen.update(g)
    return seen


def handle_acquire(state: AnalysisState, e: Event) -> None:
    m, t, i = e.obj, e.thread, e.index
    state.ensure_thread(t)
    if m in state.holder:
        raise EngineError(f"{e.label()}: lock {m} already held by {state.holder[m]}")
    if i != state.lock_count.get(m, 0) + 1:
        raise EngineError(f"{e.label()}: instance out of sequence")
    lm, tt = lk(m), th(t)
    groups = [state.idx_hbl.get(m, ()), state.idx_cpl.get(m, ())]
    groups += [state.idx_ccp[n] for n in list(state.idx_ccp)]
    for o in _candidates(state, groups):
        if lm in o.cp:
            state.add_cp(o, tt)
        for n, d in list(o.ccp.items()):
            k = d.get(lm)
            if k is not None:
                state.add_ccp(o, n, tt, k)
        j = o.hbl.get(m)
        if j is not None:
            state.add_hb(o, tt)
            state.add_ccp(o, m, tt, j)
    state.lock_count[m] = i
    o = state.new_owner(("a", m, i), t, e)
    state.lock_owners.setdefault(m, {})[i] = o
    state.held.setdefault(t, []).append((m, i))
    state.holder[m] = t


def _check_release(state: AnalysisState, e: Event) -> None:
    stack = state.held.get(e.thread)
    if not stack or stack[-1] != (e.obj, e.index):
        raise EngineError(f"{e.label()} by {e.thread}: not the innermost held lock")


def _prerelease_tables(state: AnalysisState, m: str, t: str):
    """Per instance l of m: whether t is in CP(m^l) and the (t | n^k) entries of CCP(m^l)."""
    tt = th(t)
    snap = []
    for l, lo in state.lock_owners.get(m, {}).items():
        trans = [(n, d[tt]) for n, d in lo.ccp.items() if tt in d]
        snap.append((l, tt in lo.cp, trans))
    hit = state.rule_a_hits.get((m, t), 0)
    return snap, hit


def pre_release(state: AnalysisState, e: Event) -> None:
    m, t = e.obj, e.thread
    _check_release(state, e)
    owners = list(state.idx_ccp.get(m, ()))
    if not owners and state.opts.indexed_loops:
        return
    snap, hit = _prerelease_tables(state, m, t)
    if state.opts.precompute:
        max_cp = max([hit] + [l for l, in_cp, _ in snap if in_cp])
        transfer: dict[tuple[str, int], int] = {}
        for l, _, trans in snap:
            for nk in trans:
                if transfer.get(nk, 0) < l:
                    transfer[nk] = l

        def ordered(j: int) -> bool:
            return max_cp >= j

        def moves(j: int):
            return [nk for nk, l in transfer.items() if l >= j]
    else:

        def ordered(j: int) -> bool:
            return hit >= j or any(l >= j and in_cp for l, in_cp, _ in snap)

        def moves(j: int):
            out = set()
            for l, _, trans in snap:
                if l >= j:
                    out.update(trans)
            return out

    for o in (owners if state.opts.indexed_loops else list(state.owners.values())):
        d = o.ccp.get(m)
        if not d:
            continue
        for sigma, j in list(d.items()):
            if ordered(j):
                state.add_cp(o, sigma)
            for n, k in moves(j):
                state.add_ccp(o, n, sigma, k)


def handle_release(state: AnalysisState, e: Event) -> None:
    m, t, i = e.obj, e.thread, e.index
    _check_release(state, e)
    lm, tt = lk(m), th(t)
    groups = [state.idx_hbt.get(t, ())] + [state.idx_ccp[n] for n in list(state.idx_ccp)]
    for o in _candidates(state, groups):
        if tt in o.cp:
            state.add_cp(o, lm)
        for n, d in list(o.ccp.items()):
            if n != m:
                k = d.get(tt)
                if k is not None:
                    state.add_ccp(o, n, lm, k)
        if tt in o.hb and m not in o.hbl:
            state.set_hbl(o, m, i)
    for o in list(state.idx_ccp.get(m, ())):
        state.drop_ccp(o, m)
    state.held[t].pop()
    del state.holder[m]
    lo = state.lock_owners[m][i]
    lo.released = True
    if state.refs.get((m, i), 0) == 0:
        state.lock_candidates.add(lo)


# -- driver ---------------------------------------------------------------------


def _sweep_after_release(state: AnalysisState, touched: list[Owner]) -> None:
    for o in sorted(touched, key=lambda o: o.key):
        if o.alive and o in state.pending:
            lifecycle.sweep_variable_owner(state, o)
    _sweep_locks(state)


def _sweep_locks(state: AnalysisState) -> None:
    changed = True
    while changed and state.lock_candidates:
        changed = False
        for lo in sorted(state.lock_candidates, key=lambda o: o.key):
            if lo.alive and lifecycle.sweep_lock_owner(state, lo):
                changed = True
            elif not lo.alive:
                state.lock_candidates.discard(lo)


def process_event(state: AnalysisState, e: Event) -> list[RaceReport]:
    if state.finalized:
        raise EngineError("state already finalized")
    state.pos = e.pos
    state.next_pos = e.pos + 1
    state.new_reports = []
    op = e.op
    if op == "wr":
        handle_write(state, e)
        if state.opts.removal:
            for o in sorted((o for o in state.pending if o.next_write is e), key=lambda o: o.key):
                lifecycle.sweep_variable_owner(state, o)
            _sweep_locks(state)
    elif op == "rd":
        handle_read(state, e)
        if state.opts.removal:
            _sweep_locks(state)
    elif op == "acq":
        handle_acquire(state, e)
    elif op == "rel":
        touched = [o for o in state.idx_ccp.get(e.obj, ()) if o.kind != "a"]
        pre_release(state, e)
        handle_release(state, e)
        if state.opts.removal:
            _sweep_after_release(state, touched)
    else:
        raise EngineError(f"unsupported op {op!r}; desugar the trace first")
    return list(state.new_reports)


def finalize(state: AnalysisState) -> list[RaceReport]:
    """Close open critical sections, then give every outstanding verdict."""
    out: list[RaceReport] = []
    for e in closing_releases(state.held, state.next_pos):
        out += process_event(state, e)
    state.new_reports = []
    state.pos = state.next_pos - 1
    var_owners = sorted((o for o in state.owners.values() if o.kind != "a"), key=lambda o: o.key)
    for o in var_owners:
        if o.alive:
            lifecycle.sweep_variable_owner(state, o, final=True)
    for lo in sorted((o for o in state.owners.values() if o.kind == "a"), key=lambda o: o.key):
        lifecycle.sweep_lock_owner(state, lo, final=True)
    state.lock_candidates.clear()
    out += state.new_reports
    state.finalized = True
    return out


def run_engine(trace: Trace, options: EngineOptions | None = None) -> tuple[AnalysisState, list[RaceReport]]:
    state = init_state(options=options)
    for e in trace.events:
        process_event(state, e)
    finalize(state)
    return state, sort_reports(state.reports)
