"""Hypothesis strategies for random valid protocols."""
from hypothesis import strategies as st

from nvcharge.protocol import LaserSetting, Protocol, Repeat, Step, Sweep

finite = dict(allow_nan=False, allow_infinity=False)
powers = st.one_of(st.floats(0, 1.0, **finite), st.sampled_from([0.0, 1e-9, 2e-9, 100e-9, 10e-6, 1e-3]))
freqs = st.one_of(st.floats(-1e13, 1e13, **finite), st.sampled_from([0.0, -1.5e9, 5e9, 906e9]))
durations = st.one_of(st.floats(1e-12, 10.0, **finite).filter(lambda x: x > 0),
                      st.sampled_from([1e-3, 100e-6, 3e-3]))


@st.composite
def laser_settings(draw, exclude=None):
    names = [n for n in ("green", "red", "yellow") if n != exclude]
    chosen = draw(st.lists(st.sampled_from(names), unique=True, max_size=len(names)))
    out = []
    for name in sorted(chosen):
        offset = 0.0 if name == "green" else draw(freqs)
        out.append(LaserSetting(name, draw(powers), offset))
    return tuple(out)


@st.composite
def steps(draw):
    mw = draw(st.booleans())
    record = draw(st.booleans())
    if draw(st.booleans()):
        return Step(duration=draw(durations), lasers=draw(laser_settings()), mw_on=mw, record=record)
    laser = draw(st.sampled_from(["red", "yellow"]))
    sweep = Sweep(laser, draw(freqs), draw(freqs), draw(st.integers(2, 2000)), draw(durations), draw(powers))
    return Step(sweep=sweep, lasers=draw(laser_settings(exclude=laser)), mw_on=mw, record=record)


nodes = st.recursive(steps(), lambda inner: st.builds(Repeat, st.integers(1, 1000),
                                                      st.lists(inner, max_size=4).map(tuple)), max_leaves=8)
protocols = st.builds(Protocol, st.lists(nodes, max_size=5).map(tuple), st.integers(1, 50))
