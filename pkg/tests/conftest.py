from pathlib import Path

import pytest
from hypothesis import settings
from hypothesis import strategies as st

from raptor.fuzz import generate_events
from raptor.trace import annotate_instances, load_trace

DATA = Path(__file__).parent / "data"
GOLDEN = sorted(p.stem for p in DATA.glob("*.trace"))

settings.register_profile("default", max_examples=150, deadline=None)
settings.load_profile("default")


def golden(name: str):
    return load_trace((DATA / f"{name}.trace").read_text())


@pytest.fixture
def data_dir():
    return DATA


@st.composite
def traces(draw, max_threads=4, max_locks=3, max_vars=3, max_events=24):
    rng = draw(st.randoms(use_true_random=False))
    threads = draw(st.integers(1, max_threads))
    locks = draw(st.integers(0, max_locks))
    variables = draw(st.integers(1, max_vars))
    events = draw(st.integers(0, max_events))
    bias = draw(st.sampled_from([0.2, 0.4, 0.6]))
    return annotate_instances(generate_events(rng, threads, locks, variables, events, bias))
