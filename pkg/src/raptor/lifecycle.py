"""Race reports, obsolete-owner sweeps and static deduplication."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable

from .trace import Event

if TYPE_CHECKING:
    from .engine import AnalysisState, Owner

XI = "ξ"


def xi_of(thread: str) -> str:
    return "ξ:" + thread


@dataclass(frozen=True)
class RaceReport:
    kind: str  # ww, wr or rw
    first: Event
    second: Event
    is_hb_race: bool
    detected_at: int
    event_distance: int
    static_key: tuple[str, str] | None = None

    @property
    def var(self) -> str:
        return self.first.obj

    def key(self) -> tuple:
        """Identity used when comparing runs; the detection point is excluded."""
        return (self.kind, self.first.pos, self.second.pos, self.is_hb_race)


def make_report(kind: str, first: Event, second: Event, is_hb: bool, detected_at: int) -> RaceReport:
    static = None
    if first.loc and second.loc:
        static = tuple(sorted((first.loc, second.loc)))
    return RaceReport(kind, first, second, is_hb, detected_at, abs(second.pos - first.pos), static)


def sort_reports(reports: Iterable[RaceReport]) -> list[RaceReport]:
    return sorted(reports, key=lambda r: (r.second.pos, r.first.pos, r.kind))


def group_key(r: RaceReport) -> tuple:
    return ("loc",) + r.static_key if r.static_key else ("var", r.var, r.kind)


def dedup_static(reports: Iterable[RaceReport]) -> list[tuple[tuple, int]]:
    counts = Counter(group_key(r) for r in reports)
    return sorted(counts.items())


def format_group(key: tuple) -> str:
    if key[0] == "loc":
        return f"{key[1]}|{key[2]}"
    return f"{key[1]}:{key[2]}"


def distance_ranges(reports: Iterable[RaceReport]) -> list[tuple[tuple, int, int, int]]:
    """Per static race: (key, dynamic count, min distance, max distance)."""
    spans: dict[tuple, list[int]] = {}
    for r in reports:
        spans.setdefault(group_key(r), []).append(r.event_distance)
    return [(k, len(v), min(v), max(v)) for k, v in sorted(spans.items())]


def classify_hb(owner: Owner, marker: str) -> bool:
    """True when the pair is also an HB-race."""
    return marker not in owner.hb


def report_and_force(state: AnalysisState, owner: Owner, marker: str, race: RaceReport) -> None:
    state.reports.append(race)
    state.new_reports.append(race)
    # from here on the pair behaves as ordered; the marker only ever decides this pair
    owner.cp.add(marker)
    state.forced.add((owner.key, marker))


def _pending(owner: Owner, marker: str) -> bool:
    return any(marker in targets for targets in owner.ccp.values())


def _ordered(owner: Owner, marker: str) -> bool:
    return marker in owner.cp or marker in owner.po


def sweep_variable_owner(state: AnalysisState, owner: Owner, final: bool = False) -> list[RaceReport]:
    """Settle the verdicts an access owner can give; delete it once nothing is left.

    Write owners of the newest generation only settle write-read pairs and
    only at the end of the trace (``final``); they are never deleted.
    """
    before = len(state.reports)
    pos = state.pos
    if owner.kind == "r":
        nxt = owner.next_write
        if nxt is None:
            return []
        if _ordered(owner, XI):
            state.delete_owner(owner)
        elif not _pending(owner, XI):
            race = make_report("rw", owner.event, nxt, classify_hb(owner, XI), pos)
            report_and_force(state, owner, XI, race)
            state.delete_owner(owner)
        return state.reports[before:]

    current = owner.next_write is None
    if current and not final:
        return []
    if owner.index > 0:
        if not current and not owner.ww_done:
            if _ordered(owner, XI):
                owner.ww_done = True
            elif not _pending(owner, XI):
                race = make_report("ww", owner.event, owner.next_write, classify_hb(owner, XI), pos)
                report_and_force(state, owner, XI, race)
                owner.ww_done = True
        for t in list(owner.open_reads):
            marker = xi_of(t)
            if _ordered(owner, marker):
                del owner.open_reads[t]
            elif not _pending(owner, marker):
                race = make_report("wr", owner.event, owner.open_reads.pop(t), classify_hb(owner, marker), pos)
                report_and_force(state, owner, marker, race)
    else:
        owner.ww_done = True
        owner.open_reads.clear()
    if not current and owner.ww_done and not owner.open_reads:
        state.delete_owner(owner)
    return state.reports[before:]


def sweep_lock_owner(state: AnalysisState, owner: Owner, final: bool = False) -> bool:
    """Delete a released acquire owner no other owner can still need.

    At the end of the trace no acquire can follow, so the HB clause is moot
    and every released owner goes.
    """
    if not owner.released:
        return False
    if not final and not state.lock_owner_obsolete(owner):
        return False
    state.delete_owner(owner)
    return True


@dataclass
class RunReport:
    races: list[RaceReport]
    events_processed: int
    elapsed: float

    @property
    def counts(self) -> tuple[int, int, int, int]:
        """(static, dynamic, hb, cp-only); dynamic = hb + cp-only."""
        hb = sum(1 for r in self.races if r.is_hb_race)
        return len(dedup_static(self.races)), len(self.races), hb, len(self.races) - hb
