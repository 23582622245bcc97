import dataclasses

import pytest

from nvcharge.levels import (ChargeState, Level, LevelGraph, RateLaw, Role, TransitionKind, TransitionTemplate,
                             build_default_graph, graph_from_json, graph_to_json, validate_graph)


@pytest.fixture(scope="module")
def graph():
    return build_default_graph()


def test_default_graph_level_counts(graph):
    assert len(graph.levels_of(ChargeState.NEGATIVE)) == 6
    assert len(graph.levels_of(ChargeState.NEUTRAL)) == 3
    assert graph.level("g1").energy_offset - graph.level("g0").energy_offset == 2.87e9


def test_default_graph_roles(graph):
    roles = {lv.id: lv.role for lv in graph.levels}
    assert roles["g0"] is Role.GROUND and roles["g1"] is Role.GROUND
    assert [roles[i] for i in ("ex", "ey", "emix")] == [Role.OPTICAL_EXCITED] * 3
    assert roles["s"] is Role.SHELVING
    assert roles["g0p"] is Role.GROUND and roles["ep"] is Role.OPTICAL_EXCITED and roles["qp"] is Role.SHELVING


def test_only_charge_edges_cross(graph):
    by_id = {lv.id: lv for lv in graph.levels}
    crossing = {t.kind for t in graph.transitions if by_id[t.source].charge != by_id[t.target].charge}
    assert crossing == {TransitionKind.IONIZATION, TransitionKind.RECOMBINATION}


def test_json_round_trip(graph):
    text = graph_to_json(graph)
    again = graph_from_json(text)
    assert again == graph
    assert graph_to_json(again) == text


def test_default_graph_valid(graph):
    assert validate_graph(graph) == []


def test_offsets_nonnegative_ground_zero(graph):
    for charge in ChargeState:
        offs = [lv.energy_offset for lv in graph.levels_of(charge)]
        assert min(offs) == 0.0
        assert sum(o == 0.0 for o in offs) == 1


def test_ionization_from_ground_is_flagged(graph):
    bad = TransitionTemplate("g0", "g0p", TransitionKind.IONIZATION, RateLaw.POWER_LAW, "ionization_coeff")
    g = dataclasses.replace(graph, transitions=graph.transitions + (bad,))
    v = validate_graph(g)
    assert len(v) == 1 and "g0" in v[0]


def test_two_zero_offset_levels_flagged(graph):
    extra = Level("g0b", ChargeState.NEUTRAL, "g0b", 0.0, Role.GROUND)
    link = TransitionTemplate("g0b", "g0p", TransitionKind.ISC, RateLaw.CONSTANT, "nv0_shelving_decay")
    g = dataclasses.replace(graph, levels=graph.levels + (extra,), transitions=graph.transitions + (link,))
    assert len(validate_graph(g)) == 1


def test_components_connected_within_charge(graph):
    # each charge state is connected when charge-changing edges are removed
    same = [t for t in graph.transitions
            if t.kind not in (TransitionKind.IONIZATION, TransitionKind.RECOMBINATION)]
    for charge in ChargeState:
        ids = {lv.id for lv in graph.levels_of(charge)}
        adj = {i: set() for i in ids}
        for t in same:
            if t.source in ids:
                adj[t.source].add(t.target)
                adj[t.target].add(t.source)
        seen, stack = set(), [next(iter(ids))]
        while stack:
            n = stack.pop()
            if n not in seen:
                seen.add(n)
                stack.extend(adj[n] - seen)
        assert seen == ids


def test_disconnected_graph_flagged(graph):
    lone = Level("x", ChargeState.NEGATIVE, "x", 1e9, Role.SHELVING)
    g = dataclasses.replace(graph, levels=graph.levels + (lone,))
    assert validate_graph(g)


def test_graph_is_immutable(graph):
    with pytest.raises(dataclasses.FrozenInstanceError):
        graph.levels = ()
