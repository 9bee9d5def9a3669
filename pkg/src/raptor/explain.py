"""Per-event listing of how owner sets change, in the style of a state table."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .engine import AnalysisState, EngineOptions, Owner, finalize, init_state, process_event
from .trace import Trace, closing_releases

SETS = ("PO", "HB", "CP", "CCP")
_SUPERSCRIPT = str.maketrans("⁰¹²³⁴⁵⁶⁷⁸⁹", "0123456789")
_SELECTOR = re.compile(r"^([^\s^_]+)\^?(\d+)(?:_(\S+))?$")


def render(element: str) -> str:
    if element.startswith(("t:", "l:")):
        return element[2:]
    if element.startswith("ξ:"):
        return "ξ_" + element[2:]
    return element


def snapshot(o: Owner) -> dict[str, set[str]]:
    hb = {render(s) for s in o.hb}
    hb.update(f"{m}^{j}" + ("★" if m in o.star else "") for m, j in o.hbl.items())
    ccp = {f"({render(s)}|{n}^{k})" for n, d in o.ccp.items() for s, k in d.items()}
    return {
        "PO": {render(s) for s in o.po},
        "HB": hb,
        "CP": {render(s) for s in o.cp},
        "CCP": ccp,
    }


def _fmt(items: set[str]) -> str:
    return "{" + ", ".join(sorted(items)) + "}"


@dataclass(frozen=True)
class Delta:
    event: str  # event label, e.g. "Rel m^2"
    owner: str
    set_name: str
    added: frozenset[str]
    removed: frozenset[str]

    def lines(self) -> list[str]:
        out = []
        if self.added:
            out.append(f"{self.event}: {self.set_name}({self.owner}) += {_fmt(set(self.added))}")
        if self.removed:
            out.append(f"{self.event}: {self.set_name}({self.owner}) -= {_fmt(set(self.removed))}")
        return out


def parse_selector(text: str) -> str:
    """Normalize ``x1``, ``x^1``, ``x¹`` or ``x^1_T3`` to the engine's owner label."""
    m = _SELECTOR.match(text.strip().translate(_SUPERSCRIPT))
    if not m:
        raise ValueError(f"bad owner selector {text!r}")
    name, idx, thread = m.groups()
    return f"{name}^{int(idx)}" + (f"_{thread}" if thread else "")


def _snap_all(state: AnalysisState) -> dict[str, dict[str, set[str]]]:
    return {o.label(): snapshot(o) for o in state.owners.values() if o.event is not None}


def explain(trace: Trace, owner: str | None = None) -> list[Delta]:
    """Replay without removal; the closing releases and final verdicts are listed too."""
    state = init_state(options=EngineOptions(removal=False))
    out: list[Delta] = []
    before = _snap_all(state)

    def record(label: str) -> None:
        nonlocal before
        after = _snap_all(state)
        for name in sorted(set(before) | set(after)):
            if owner is not None and name != owner:
                continue
            old, new = before.get(name, {}), after.get(name, {})
            for s in SETS:
                a, b = old.get(s, set()), new.get(s, set())
                if a != b:
                    out.append(Delta(label, name, s, frozenset(b - a), frozenset(a - b)))
        before = after

    for e in trace.events:
        process_event(state, e)
        record(e.label())
    for e in closing_releases(state.held, state.next_pos):
        process_event(state, e)
        record(e.label() + " (closing)")
    finalize(state)
    record("end")
    return out


def owner_labels(trace: Trace) -> set[str]:
    """Every owner label a run over ``trace`` can create."""
    out = set()
    for e in trace.events:
        if e.op == "wr" or e.op == "acq":
            out.add(f"{e.obj}^{e.index}")
        elif e.op == "rd":
            out.add(f"{e.obj}^{e.index}_{e.thread}")
    return out
