import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evbargain.model import (INFEASIBLE, CityGraph, CostMatrices, EpochProblem, Ev, GraphError,
                             Metrics, PvProfile, ScenarioConfig, SocBand, build_default_graph,
                             desk_scale, dumps, soc_band)


def test_default_graph_shape():
    g = build_default_graph()
    assert g.node_count == 9
    assert len(g.edges) == 18
    assert g.facility_nodes == (3, 5, 8, 9)


def test_hop_matrix_metric():
    H = build_default_graph().hop_distance
    assert np.all(np.diag(H) == 0)
    assert np.array_equal(H, H.T)
    n = H.shape[0]
    for k in range(n):
        assert np.all(H <= H[:, [k]] + H[[k], :])


def test_hops_match_edges():
    g = build_default_graph()
    for u, v in g.edges:
        assert g.hops(u, v) == 1


def test_path_tie_break_lowest_next_node():
    g = build_default_graph()
    assert g.path(1, 7) == [4, 7]
    assert g.path(3, 3) == []
    for u in g.nodes:
        for v in g.nodes:
            assert len(g.path(u, v)) == g.hops(u, v)


def test_nearest_facility_ties_lowest_id():
    g = build_default_graph()
    assert g.nearest_facility(5) == 5
    # node 6 touches facilities 3, 5 and 9
    assert g.nearest_facility(6) == 3


def test_disconnected_graph_rejected():
    with pytest.raises(GraphError):
        CityGraph.from_edges(4, [(1, 2), (3, 4)], [1])


@pytest.mark.parametrize("edges,fac", [([(1, 1)], [1]), ([(1, 5)], [1]), ([(1, 2)], [7])])
def test_bad_graph_inputs(edges, fac):
    with pytest.raises(GraphError):
        CityGraph.from_edges(2, edges, fac)


@st.composite
def connected_graphs(draw):
    n = draw(st.integers(2, 9))
    # random spanning tree plus extra edges
    edges = [(draw(st.integers(1, k - 1)), k) for k in range(2, n + 1)]
    extra = draw(st.lists(st.tuples(st.integers(1, n), st.integers(1, n)), max_size=10))
    edges += [(u, v) for u, v in extra if u != v]
    return CityGraph.from_edges(n, edges, [1])


@settings(max_examples=50, deadline=None)
@given(connected_graphs())
def test_loaded_graph_invariants(g):
    H = g.hop_distance
    assert np.array_equal(H, H.T)
    assert np.all(np.diag(H) == 0)
    assert np.all(H[~np.eye(g.node_count, dtype=bool)] >= 1)
    for k in range(g.node_count):
        assert np.all(H <= H[:, [k]] + H[[k], :])
    assert CityGraph.from_dict(g.to_dict()) == g


@pytest.mark.parametrize("soc,band", [(4.0, SocBand.LOW), (5.0, SocBand.MID),
                                      (30.0, SocBand.MID), (30.5, SocBand.HIGH),
                                      (50.0, SocBand.HIGH)])
def test_soc_band_boundaries(soc, band):
    assert soc_band(Ev(id=0, location=1, soc=soc), ScenarioConfig()) == band


def test_ev_check():
    Ev(id=0, location=1, soc=50.0).check()
    with pytest.raises(ValueError):
        Ev(id=0, location=1, soc=51.0).check()
    with pytest.raises(ValueError):
        Ev(id=0, location=1, soc=10.0, onboard=[object()] * 5).check()


def test_cost_matrices_validation():
    ok = CostMatrices(C=np.array([[1.0, INFEASIBLE]]), D=np.zeros((1, 0)),
                      A=np.array([[1.0, 2.0]]), W=np.zeros((1, 2)))
    assert ok.ride_feasible.tolist() == [[True, False]]
    with pytest.raises(ValueError):
        CostMatrices(C=np.array([[2e5]]), D=np.zeros((1, 0)), A=np.zeros((1, 1)), W=np.zeros((1, 1)))
    with pytest.raises(ValueError):
        CostMatrices(C=np.array([[-1.0]]), D=np.zeros((1, 0)), A=np.zeros((1, 1)), W=np.zeros((1, 1)))


def test_pv_profile_rejects_negative():
    with pytest.raises(ValueError):
        PvProfile(power={3: [0.0, -1.0]})
    pv = PvProfile(power={3: [1.0, 2.0]})
    assert pv.at(3, 1) == 2.0
    assert pv.at(3, 5) == 0.0
    assert pv.at(5, 0) == 0.0


def test_config_defaults_and_validation():
    cfg = ScenarioConfig()
    assert cfg.ride_bounds == (-5.0, 5.0)
    assert cfg.charge_entry_bounds == pytest.approx((0.0, 2.4))
    assert cfg.facility_sum_bounds(3) == pytest.approx((0.0, 0.1 * 50.0))
    assert cfg.facility_sum_bounds(5) == pytest.approx((0.0, 0.1 * 75.0))
    with pytest.raises(ValueError):
        ScenarioConfig(scenario="nope")
    with pytest.raises(ValueError):
        ScenarioConfig(weather="foggy")
    with pytest.raises(ValueError):
        ScenarioConfig(willingness=1.5)
    with pytest.raises(ValueError):
        ScenarioConfig(r_min=3.0, r_max=1.0)


def test_price_schedule():
    cfg = ScenarioConfig(c_rer=0.1, c_rer_schedule=((0, 0.1), (300, 0.2)))
    assert cfg.price(10) == 0.1
    assert cfg.price(300) == 0.2


def test_config_round_trip():
    cfg = desk_scale(scenario="case2", willingness=0.5, c_rer_schedule=((0, 0.1), (60, 0.3)))
    back = ScenarioConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg


def test_qos_example():
    m = Metrics(scenario="case1", weather="sunny", willingness=1.0, seed=0,
                received_rides=100, missed_rides=5)
    assert m.qos == pytest.approx(0.95)


def test_pl_undefined_without_pv():
    m = Metrics(scenario="case1", weather="sunny", willingness=1.0, seed=0)
    assert not m.pl_valid
    assert m.pl == 0.0
    assert m.to_dict()["pl"] is None


def test_metrics_round_trip():
    m = Metrics(scenario="case1", weather="sunny", willingness=1.0, seed=3, received_rides=10,
                missed_rides=1, pv_available_kwh=10.0, pv_used_kwh=4.0, final_soc_bands={"Low": 1})
    d = json.loads(dumps(m.to_dict()))
    assert d["pl"] == pytest.approx(0.6)
    assert Metrics.from_dict(d) == m


def test_epoch_problem_round_trip():
    from helpers import random_epoch
    prob = random_epoch(np.random.default_rng(0))
    back = EpochProblem.from_dict(json.loads(dumps(prob.to_dict())))
    assert np.array_equal(back.costs.C, prob.costs.C)
    assert back.loss_target == prob.loss_target
    assert back.sum_bounds == prob.sum_bounds
    assert back.h == prob.h == 10
