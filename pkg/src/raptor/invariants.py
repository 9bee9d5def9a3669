"""Mechanical check of the analysis-state invariants against a prefix oracle.

For an owner ρ with event e_ρ and an element σ, ``comp(σ, e')`` says which
events σ stands for: a thread stands for that thread's events, a lock for
its releases, ξ for the next write of the variable and ξ:T for the first
read of the owner's value by T.
"""

from __future__ import annotations

from dataclasses import dataclass

from .engine import AnalysisState, EngineOptions, init_state, lk, process_event, th
from .lifecycle import XI, xi_of
from .oracle import OracleResult, knowable_prefix
from .trace import Event, Trace


@dataclass(frozen=True)
class InvariantViolation:
    pos: int
    owner: str
    invariant: str
    detail: str

    def __str__(self) -> str:
        return f"after event {self.pos}: {self.invariant} on {self.owner}: {self.detail}"


class _Prefix:
    def __init__(self, res: OracleResult):
        self.res = res
        self.by_thread: dict[str, list[int]] = {}
        self.rels: dict[str, list[tuple[int, int]]] = {}
        self.acqs: dict[tuple[str, int], Event] = {}
        self.rel_at: dict[tuple[str, int], int] = {}
        self.writes: dict[tuple[str, int], int] = {}
        self.first_read: dict[tuple[str, int, str], int] = {}
        for e in res.events:
            self.by_thread.setdefault(e.thread, []).append(e.pos)
            if e.op == "rel":
                self.rels.setdefault(e.obj, []).append((e.index, e.pos))
                self.rel_at[(e.obj, e.index)] = e.pos
            elif e.op == "acq":
                self.acqs[(e.obj, e.index)] = e
            elif e.op == "wr":
                self.writes[(e.obj, e.index)] = e.pos
            else:
                self.first_read.setdefault((e.obj, e.index, e.thread), e.pos)

    def targets(self, o) -> dict[str, list[int]]:
        """Every element that may appear in o's sets, with the events it stands for."""
        out = {th(t): ps for t, ps in self.by_thread.items()}
        for m, rels in self.rels.items():
            out[lk(m)] = [p for _, p in rels]
        if o.kind in ("w", "r"):
            nxt = self.writes.get((o.obj, o.index + 1))
            out[XI] = [nxt] if nxt is not None else []
        if o.kind == "w":
            for t in self.by_thread:
                p = self.first_read.get((o.obj, o.index, t))
                out[xi_of(t)] = [p] if p is not None else []
        return out


def check_invariants(state: AnalysisState, prefix: OracleResult, k: int) -> list[InvariantViolation]:
    pre = _Prefix(prefix)
    po, hb, cp = prefix.po, prefix.hb, prefix.cp
    out: list[InvariantViolation] = []

    def bad(o, inv, detail):
        out.append(InvariantViolation(k, o.label(), inv, detail))

    for o in list(state.owners.values()):
        if o.event is None or o.event.pos > k:
            continue
        e = o.event.pos
        targets = pre.targets(o)
        forced = {m for key, m in state.forced if key == o.key}

        want_po = {s for s, ps in targets.items() if not s.startswith("l:") and any(p == e or po[e, p] for p in ps)}
        want_hb = {s for s, ps in targets.items() if not s.startswith("l:") and any(p == e or hb[e, p] for p in ps)}
        want_cp = {s for s, ps in targets.items() if any(cp[e, p] for p in ps)}
        if o.po != want_po:
            bad(o, "I-PO", f"have {sorted(o.po)}, expected {sorted(want_po)}")
        if o.hb != want_hb:
            bad(o, "I-HB", f"have {sorted(o.hb)}, expected {sorted(want_hb)}")

        for m in set(pre.rels) | {mm for mm, _ in pre.acqs} | set(o.hbl):
            star = None
            if o.kind != "a":
                for (mm, j), acq in pre.acqs.items():
                    rel = pre.rel_at.get((mm, j))
                    if mm == m and acq.thread == o.thread and acq.pos < e and (rel is None or rel > e):
                        star = j
            later = [j for j, p in pre.rels.get(m, ()) if hb[e, p]]
            if star is not None:
                want = (star, True)
            elif later:
                want = (min(later), False)
            else:
                want = None
            have = (o.hbl[m], m in o.star) if m in o.hbl else None
            if have != want:
                inv = "I-HBcs" if (want and want[1]) or (have and have[1]) else "I-HBidx"
                bad(o, inv, f"lock {m}: have {have}, expected {want}")

        have_cp = o.cp - forced
        lhs = set(have_cp)
        for n, d in o.ccp.items():
            for sigma, kk in d.items():
                rel = pre.rel_at.get((n, kk))
                if rel is None:
                    continue
                if any(cp[rel, acq.pos] for (nn, l), acq in pre.acqs.items() if nn == n and l > kk):
                    lhs.add(sigma)
        if lhs != want_cp:
            bad(o, "I-CP", f"missing {sorted(want_cp - lhs)}, unexpected {sorted(lhs - want_cp)}")

        for target in have_cp:
            if target.startswith("l:"):
                if target[2:] not in o.hbl:
                    bad(o, "I-CPHB", f"{target} in CP without an HB entry for the lock")
            elif target not in o.hb:
                bad(o, "I-CPHB", f"{target} in CP but not in HB")

        for n, d in o.ccp.items():
            if n not in state.holder or not d:
                bad(o, "I-CCP", f"conditional entries on {n}, which is not held")

    for m, j, l in sorted(prefix.seeds):
        t = prefix.sections[m][l - 1].thread
        owners = state.lock_owners.get(m, {})
        ok = state.rule_a_hits.get((m, t), 0) >= j or any(
            ll >= j and th(t) in lo.cp for ll, lo in owners.items()
        )
        if not ok:
            out.append(InvariantViolation(k, f"{m}^{j}", "I-RuleA", f"{t} (section {m}^{l}) not in CP of {m}^{j} or later"))
    return out


def check_trace_invariants(trace: Trace, stop_at_first: bool = True) -> list[InvariantViolation]:
    """Run without removal and check the invariants after every event."""
    state = init_state(options=EngineOptions(removal=False))
    found: list[InvariantViolation] = []
    for e in trace.events:
        process_event(state, e)
        found += check_invariants(state, knowable_prefix(trace, e.pos), e.pos)
        if found and stop_at_first:
            break
    return found
