import numpy as np
import pytest

from lcftraffic.network import Link, RoadNetwork, SignalPlan, generate_grid_network
from lcftraffic.scenarios import ODMatrix, Scenario
from lcftraffic.simulate import (SimConfig, SimState, initial_turn_ratios,
                                 link_speed, network_mfd, simulate,
                                 storage_capacity, transfer_flow,
                                 update_turn_ratios, save_record, load_record)


def chain_network(n_links=3, length=200.0, vff=36.0, lanes=2, red_at=None):
    junctions = {i: (i * length, 0.0) for i in range(n_links + 1)}
    links = [Link(i, i, i + 1, length, lanes, 0, vff) for i in range(n_links)]
    signals = []
    if red_at is not None:
        # horizontal approaches are phase group A; zero green = always red
        signals = [SignalPlan(red_at, 90.0, 0.0, 0.0)]
    return RoadNetwork(junctions, links, signals)


def short_cfg(**kw):
    base = dict(step_s=5.0, window_s=20.0, warmup_s=100.0, peak_s=200.0,
                total_s=400.0)
    base.update(kw)
    return SimConfig(**base)


# ---------------------------------------------------------------------------
# storage capacity
# ---------------------------------------------------------------------------

def test_sim_config_invariants():
    with pytest.raises(ValueError):
        SimConfig(step_s=7.0, window_s=180.0)
    with pytest.raises(ValueError):
        SimConfig(warmup_s=900.0, peak_s=6300.0, total_s=7000.0)
    with pytest.raises(ValueError):
        SimConfig(congestion_threshold=0.0)


def test_storage_capacity_formula():
    cfg = SimConfig()
    assert storage_capacity(Link(0, 0, 1, 140.0, 2, 0, 25.0), cfg) == 40.0


def test_storage_capacity_floor():
    cfg = SimConfig()
    assert storage_capacity(Link(0, 0, 1, 7.0, 1, 0, 25.0), cfg) == 1.0
    assert storage_capacity(Link(0, 0, 1, 3.0, 1, 0, 25.0), cfg) == 1.0


def test_storage_capacity_linear_in_lanes():
    cfg = SimConfig()
    two = storage_capacity(Link(0, 0, 1, 140.0, 2, 0, 25.0), cfg)
    three = storage_capacity(Link(0, 0, 1, 140.0, 3, 0, 25.0), cfg)
    assert three == 1.5 * two


# ---------------------------------------------------------------------------
# transfer flow
# ---------------------------------------------------------------------------

def test_transfer_flow_red_is_zero():
    cfg = SimConfig()
    assert transfer_flow(50.0, 1.0, 3, 0.0, 100.0, False, cfg) == 0.0


def test_transfer_flow_min_rule():
    cfg = SimConfig(saturation_flow=0.2)
    # saturation term 0.2 * 2 lanes * 5 s = 2; downstream space 5
    assert transfer_flow(10.0, 1.0, 2, 5.0, 10.0, True, cfg) == 2.0


def test_transfer_flow_congested_downstream_blocks():
    cfg = SimConfig(congestion_threshold=0.95)
    assert transfer_flow(10.0, 1.0, 3, 96.0, 100.0, True, cfg) == 0.0


def test_transfer_flow_never_exceeds_waiting():
    cfg = SimConfig()
    assert transfer_flow(1.5, 1.0, 5, 0.0, 1000.0, True, cfg) == 1.5


def test_transfer_flow_rejects_bad_ratio():
    cfg = SimConfig()
    with pytest.raises(ValueError):
        transfer_flow(1.0, 1.5, 2, 0.0, 10.0, True, cfg)


def test_transfer_flow_monotone_in_space_and_queue():
    cfg = SimConfig()
    prev = -1.0
    for space in np.linspace(0, 60, 13):
        q = transfer_flow(30.0, 1.0, 2, 100.0 - space, 100.0, True, cfg)
        assert q >= prev - 1e-12
        prev = q
    prev = -1.0
    for waiting in np.linspace(0, 40, 17):
        q = transfer_flow(waiting, 0.7, 2, 10.0, 100.0, True, cfg)
        assert q >= prev - 1e-12
        prev = q


# ---------------------------------------------------------------------------
# single-step behaviour
# ---------------------------------------------------------------------------

def test_step_empty_network_is_fixed_point():
    net = chain_network()
    cfg = short_cfg()
    state = SimState(net, cfg, [(0, 2)], (2,))
    ratios = initial_turn_ratios(net, (2,))
    for _ in range(5):
        out = state.step(np.array([0.0]), ratios)
        assert out["outflow"].sum() == 0.0
        assert out["accumulation"].sum() == 0.0
    assert state.in_network() == 0.0


def test_step_red_signal_builds_waiting_queue():
    # 200 m at 36 km/h = 4 steps of free-flow travel, then the stop line
    net = chain_network(n_links=2, red_at=1)
    cfg = short_cfg()
    state = SimState(net, cfg, [(0, 1)], (1,))
    ratios = initial_turn_ratios(net, (1,))
    state.step(np.array([2.0]), ratios)
    for _ in range(4):
        state.step(np.array([0.0]), ratios)
    assert state.w[0].sum() == 2.0
    assert state.m[0].sum() == 0.0
    assert state.completed_total == 0.0
    # red light holds the queue indefinitely
    for _ in range(20):
        state.step(np.array([0.0]), ratios)
    assert state.w[0].sum() == 2.0


def test_step_conservation_accounting():
    net = generate_grid_network(3, 3, 100.0, 2, vff_kmh=25.0)
    cfg = short_cfg()
    ids = net.link_ids()
    od = [(ids[0], ids[10]), (ids[5], ids[2])]
    state = SimState(net, cfg, od, tuple(sorted({d for _, d in od})))
    ratios = initial_turn_ratios(net, state.dest_ids)
    rng = np.random.default_rng(0)
    for _ in range(60):
        demand = rng.uniform(0, 0.4, size=2)
        state.step(demand, ratios)
        balance = state.injected_total - (state.in_network() + state.completed_total)
        assert abs(balance) < 1e-9


def test_three_link_chain_hand_ledger():
    """3 vehicles on a 3-link chain, stepped by hand.

    Free-flow travel is 4 steps per link; the burst is injected at step 0,
    transfers at steps 4 and 8, and completes on the destination at step 12.
    """
    net = chain_network(n_links=3)
    cfg = short_cfg()
    state = SimState(net, cfg, [(0, 2)], (2,))
    ratios = initial_turn_ratios(net, (2,))

    expected = {
        0: ([0, 0, 0], [0, 0, 0], 0.0),
        1: ([3, 0, 0], [0, 0, 0], 0.0),
        4: ([3, 0, 0], [3, 0, 0], 0.0),
        5: ([0, 3, 0], [0, 0, 0], 0.0),
        8: ([0, 3, 0], [0, 3, 0], 0.0),
        9: ([0, 0, 3], [0, 0, 0], 0.0),
        12: ([0, 0, 3], [0, 0, 3], 3.0),
        13: ([0, 0, 0], [0, 0, 0], 0.0),
    }
    for k in range(16):
        demand = np.array([3.0]) if k == 0 else np.array([0.0])
        out = state.step(demand, ratios)
        if k in expected:
            acc, outflow, completed = expected[k]
            assert out["accumulation"].tolist() == acc, f"step {k}"
            assert out["outflow"].tolist() == outflow, f"step {k}"
            assert out["completed"].sum() == completed, f"step {k}"
    assert state.injected_total == 3.0
    assert state.completed_total == 3.0
    assert state.in_network() == 0.0


# ---------------------------------------------------------------------------
# turn ratios
# ---------------------------------------------------------------------------

def fork_network(fast_len=100.0, slow_len=300.0):
    junctions = {0: (0.0, 0.0), 1: (100.0, 0.0), 2: (200.0, 50.0),
                 3: (200.0, -50.0), 4: (300.0, 0.0), 5: (400.0, 0.0)}
    links = [
        Link(0, 0, 1, 100.0, 2, 0, 36.0),
        Link(1, 1, 2, fast_len, 2, 0, 36.0),
        Link(2, 2, 4, fast_len, 2, 0, 36.0),
        Link(3, 1, 3, slow_len, 2, 0, 36.0),
        Link(4, 3, 4, slow_len, 2, 0, 36.0),
        Link(5, 4, 5, 100.0, 2, 0, 36.0),
    ]
    return RoadNetwork(junctions, links)


def pair_index(ratios, up, dn):
    for p, (u, d) in enumerate(zip(ratios.up_idx, ratios.dn_idx)):
        if (u, d) == (up, dn):
            return p
    raise KeyError((up, dn))


def test_all_or_nothing_prefers_faster_route():
    net = fork_network()
    ratios = initial_turn_ratios(net, (5,))
    fast = pair_index(ratios, 0, 1)
    slow = pair_index(ratios, 0, 3)
    assert ratios.ratios[fast, 0] == 1.0
    assert ratios.ratios[slow, 0] == 0.0


def test_smoothing_blend():
    net = fork_network()
    cfg = short_cfg(turn_smoothing=0.5)
    prev = initial_turn_ratios(net, (5,))
    fast = pair_index(prev, 0, 1)
    slow = pair_index(prev, 0, 3)
    prev.ratios[fast, 0] = 0.5
    prev.ratios[slow, 0] = 0.5
    speeds = np.full(net.n_links, 36.0)
    new = update_turn_ratios(net, speeds, prev, cfg)
    assert new.ratios[fast, 0] == pytest.approx(0.75, abs=1e-12)
    assert new.ratios[slow, 0] == pytest.approx(0.25, abs=1e-12)


def test_smoothing_one_is_pure_target():
    net = fork_network()
    cfg = short_cfg(turn_smoothing=1.0)
    prev = initial_turn_ratios(net, (5,))
    fast = pair_index(prev, 0, 1)
    slow = pair_index(prev, 0, 3)
    prev.ratios[fast, 0] = 0.2
    prev.ratios[slow, 0] = 0.8
    new = update_turn_ratios(net, np.full(net.n_links, 36.0), prev, cfg)
    assert new.ratios[fast, 0] == 1.0
    assert new.ratios[slow, 0] == 0.0


def test_equal_cost_tie_breaks_to_lowest_link_id():
    net = fork_network(fast_len=200.0, slow_len=200.0)
    ratios = initial_turn_ratios(net, (5,))
    assert ratios.ratios[pair_index(ratios, 0, 1), 0] == 1.0
    assert ratios.ratios[pair_index(ratios, 0, 3), 0] == 0.0


def test_unreachable_destination_falls_back_to_uniform(caplog):
    junctions = {0: (0, 0), 1: (1, 0), 2: (1, 1), 3: (1, -1),
                 4: (5, 5), 5: (6, 5)}
    links = [
        Link(0, 0, 1, 100.0, 2, 0, 25.0),
        Link(1, 1, 2, 100.0, 2, 0, 25.0),
        Link(2, 1, 3, 100.0, 2, 0, 25.0),
        Link(3, 4, 5, 100.0, 2, 0, 25.0),  # disconnected destination
    ]
    net = RoadNetwork(junctions, links)
    with caplog.at_level("WARNING"):
        ratios = initial_turn_ratios(net, (3,))
    assert ratios.ratios[pair_index(ratios, 0, 1), 0] == 0.5
    assert ratios.ratios[pair_index(ratios, 0, 2), 0] == 0.5
    assert "unreachable" in caplog.text


def test_ratio_vectors_sum_to_one_after_updates():
    net = generate_grid_network(4, 4, 100.0, 2)
    ids = net.link_ids()
    dests = (ids[3], ids[17], ids[30])
    ratios = initial_turn_ratios(net, dests)
    rng = np.random.default_rng(1)
    cfg = short_cfg()
    for _ in range(5):
        speeds = rng.uniform(2.0, 25.0, size=net.n_links)
        ratios = update_turn_ratios(net, speeds, ratios, cfg)
        ratios.validate(net.n_links)  # sums to 1 within 1e-9


# ---------------------------------------------------------------------------
# link speed aggregation
# ---------------------------------------------------------------------------

def test_link_speed_clamps_to_free_flow():
    cfg = SimConfig()
    lk = Link(0, 0, 1, 500.0, 2, 0, 25.0)
    outflows = np.ones(36)
    acc = np.full(36, 10.0)
    # raw = 36 * 0.5 km / 360 * 720 = 36 km/h -> clamped to 25
    assert link_speed(outflows, acc, lk, cfg) == 25.0


def test_link_speed_empty_link_is_free_flow():
    cfg = SimConfig()
    lk = Link(0, 0, 1, 500.0, 2, 0, 25.0)
    assert link_speed(np.zeros(36), np.zeros(36), lk, cfg) == 25.0


def test_link_speed_gridlock_is_v_min():
    cfg = SimConfig()
    lk = Link(0, 0, 1, 500.0, 2, 0, 25.0)
    assert link_speed(np.zeros(36), np.full(36, 50.0), lk, cfg) == cfg.v_min_kmh


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------

def make_scenario(net, od_pairs, rates, scale=1.0, sid=0):
    od = ODMatrix(pairs=tuple(od_pairs), rates=tuple(rates))
    return Scenario(id=sid, od=od, scale=scale, bus_links=(), seed=sid)


def test_zero_demand_all_free_flow():
    net = generate_grid_network(3, 3, 100.0, 2, vff_kmh=25.0)
    cfg = short_cfg(window_s=100.0)
    ids = net.link_ids()
    rec = simulate(net, make_scenario(net, [(ids[0], ids[5])], [0.0]), cfg)
    assert np.all(rec.speeds == 25.0)
    assert np.all(rec.production == 0.0)
    assert np.all(rec.mean_speed == 25.0)
    assert np.all(rec.total_accumulation == 0.0)


def test_reference_schedule_has_120_windows():
    assert SimConfig().n_windows == 120


def test_simulation_is_deterministic():
    net = generate_grid_network(3, 3, 100.0, 2)
    ids = net.link_ids()
    cfg = short_cfg(total_s=600.0)
    sc = make_scenario(net, [(ids[1], ids[20]), (ids[8], ids[3])], [400.0, 300.0])
    r1 = simulate(net, sc, cfg)
    r2 = simulate(net, sc, cfg)
    assert np.array_equal(r1.speeds, r2.speeds)
    assert np.array_equal(r1.outflow, r2.outflow)
    assert np.array_equal(r1.mean_speed, r2.mean_speed)


def test_recorded_accumulation_never_negative():
    # float residues in the moving queue must not leak into records
    net = generate_grid_network(4, 4, 100.0, 3, vff_kmh=25.0,
                                length_jitter=0.3, jitter_seed=1)
    ids = net.link_ids()
    cfg = short_cfg(total_s=3600.0, warmup_s=600.0, peak_s=2400.0,
                    window_s=120.0)
    od = [(ids[0], ids[40]), (ids[17], ids[3]), (ids[25], ids[11])]
    rec = simulate(net, make_scenario(net, od, [150.0, 150.0, 150.0]), cfg)
    assert rec.accumulation.min() >= 0.0


def test_speeds_stay_within_bounds_under_congestion():
    net = generate_grid_network(3, 3, 100.0, 2, vff_kmh=25.0)
    ids = net.link_ids()
    cfg = short_cfg(total_s=1200.0, warmup_s=200.0, peak_s=600.0, window_s=60.0)
    od = [(ids[0], ids[22]), (ids[7], ids[2]), (ids[13], ids[5])]
    sc = make_scenario(net, od, [1500.0, 1500.0, 1500.0])
    rec = simulate(net, sc, cfg)  # also exercises the internal balance check
    assert np.all(rec.speeds <= 25.0 + 1e-12)
    assert np.all(rec.speeds >= cfg.v_min_kmh - 1e-12)
    assert rec.completed is not None and rec.completed.sum() > 0


def test_free_flow_regime_every_window_exact():
    # one-step traversal (50 m at 36 km/h with 5 s steps) keeps each
    # vehicle's accumulation and outflow in the same window
    net = generate_grid_network(3, 3, 50.0, 2, vff_kmh=36.0, with_signals=False)
    ids = net.link_ids()
    cfg = short_cfg(total_s=1500.0, warmup_s=300.0, peak_s=900.0, window_s=100.0)
    # saturation flow is 1 veh/s per approach; 0.1 veh/s demand = 10%
    od = [(ids[0], ids[15]), (ids[9], ids[4])]
    sc = make_scenario(net, od, [360.0, 360.0])
    rec = simulate(net, sc, cfg)
    assert np.abs(rec.speeds - 36.0).max() < 1e-9


def test_network_mfd_single_link_identity():
    # with one link the network mean speed is that link's (unclamped) speed
    from lcftraffic.simulate import _window_stats
    junctions = {0: (0.0, 0.0), 1: (500.0, 0.0)}
    net = RoadNetwork(junctions, [Link(0, 0, 1, 500.0, 3, 0, 25.0)])
    cfg = short_cfg(window_s=100.0, total_s=400.0, warmup_s=100.0, peak_s=200.0)
    steps = cfg.steps_per_window
    sum_x = np.array([8.0 * steps])
    sum_u = np.array([12.0 * sum_x[0] / (720.0 * 0.5)])  # raw speed 12 km/h
    speeds, mean_speed, _, _ = _window_stats(net, cfg, sum_u, sum_x)
    assert speeds[0] == pytest.approx(12.0)
    assert mean_speed == pytest.approx(12.0)


def test_network_mfd_shape_and_zero_demand_convention():
    net = generate_grid_network(3, 3, 100.0, 2, vff_kmh=25.0)
    cfg = short_cfg(window_s=100.0)
    ids = net.link_ids()
    rec = simulate(net, make_scenario(net, [(ids[0], ids[5])], [0.0]), cfg)
    mfd = network_mfd(rec)
    assert mfd.shape == (rec.n_windows, 3)
    assert np.all(mfd[:, 0] == 0.0)   # accumulation
    assert np.all(mfd[:, 1] == 0.0)   # production
    assert np.all(mfd[:, 2] == 25.0)  # mean speed convention


def test_mean_speed_is_accumulation_weighted():
    # two links, equal accumulation, speeds 10 and 30 -> mean in between
    from lcftraffic.simulate import _window_stats
    junctions = {0: (0, 0), 1: (1000, 0), 2: (1000, 10), 3: (0, 10)}
    links = [Link(0, 0, 1, 1000.0, 2, 0, 50.0), Link(1, 2, 3, 1000.0, 2, 0, 50.0)]
    net = RoadNetwork(junctions, links)
    cfg = short_cfg(window_s=100.0, total_s=400.0, warmup_s=100.0, peak_s=200.0)
    steps = cfg.steps_per_window
    # per-step outflow u makes raw speed u*L/x * 720; choose u for 10 and 30
    sum_x = np.array([10.0 * steps, 10.0 * steps])
    sum_u = np.array([10.0 * sum_x[0] / (720.0 * 1.0), 30.0 * sum_x[1] / (720.0 * 1.0)])
    speeds, mean_speed, production, total_acc = _window_stats(net, cfg, sum_u, sum_x)
    assert speeds[0] == pytest.approx(10.0)
    assert speeds[1] == pytest.approx(30.0)
    assert 10.0 < mean_speed < 30.0
    assert mean_speed == pytest.approx(20.0)  # equal accumulation weights


def test_record_round_trip(tmp_path):
    net = generate_grid_network(3, 3, 100.0, 2)
    ids = net.link_ids()
    cfg = short_cfg(total_s=400.0)
    sc = make_scenario(net, [(ids[0], ids[10])], [500.0])
    rec = simulate(net, sc, cfg)
    save_record(rec, tmp_path / "rec")
    rec2 = load_record(tmp_path / "rec", window_s=cfg.window_s, step_s=cfg.step_s)
    assert rec2.link_ids == rec.link_ids
    assert np.array_equal(rec2.speeds, rec.speeds)
    assert np.array_equal(rec2.mean_speed, rec.mean_speed)
    # saving again is byte-identical
    save_record(rec2, tmp_path / "rec2")
    assert (tmp_path / "rec/links.csv").read_bytes() == \
        (tmp_path / "rec2/links.csv").read_bytes()
    assert (tmp_path / "rec/network.csv").read_bytes() == \
        (tmp_path / "rec2/network.csv").read_bytes()
