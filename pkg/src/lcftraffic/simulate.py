"""Queue-based store-and-forward traffic simulation.

Every link holds, per destination, a *moving* queue (vehicles traversing
the link at free-flow speed) and a *waiting* queue (vehicles queued at the
stop line). Each time step:

  1. Vehicles whose free-flow travel is over migrate moving -> waiting;
     vehicles that reached their destination link leave the network instead.
  2. Transfer flows move waiting vehicles to the downstream link chosen by
     the turn ratios. A transfer is zero when the approach faces a red
     signal, and zero into any link already filled close to its storage
     capacity, so congestion spills back. Otherwise it is capped by the
     saturation flow of the approach and by the free space downstream.
  3. New demand enters the moving queue of its origin link, held back in a
     backlog when the origin is full.

Turn ratios are all-or-nothing per destination along current-travel-time
shortest paths, recomputed at a fixed interval and exponentially smoothed,
so drivers reroute as congestion builds.

Per aggregation window the mean speed of link z is

    v_z = min(v_ff, sum(outflow) * L_z / sum(accumulation))   clamped >= v_min

with outflow counting both transfers out and trips ended on the link, and
network production / accumulation give the network mean speed.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass

import numpy as np

from .network import Link, RoadNetwork

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    step_s: float = 5.0
    window_s: float = 180.0
    warmup_s: float = 900.0
    peak_s: float = 6300.0
    total_s: float = 21600.0
    saturation_flow: float = 0.5        # veh/s per usable lane
    vehicle_length: float = 7.0         # m of storage per vehicle
    congestion_threshold: float = 0.95  # fraction of storage that blocks inflow
    v_min_kmh: float = 1.0
    turn_update_s: float = 180.0
    turn_smoothing: float = 0.5

    def __post_init__(self):
        if self.window_s % self.step_s != 0:
            raise ValueError("window_s must be an integer multiple of step_s")
        if self.total_s < self.warmup_s + self.peak_s:
            raise ValueError("total_s must cover warmup + peak")
        if not 0 < self.congestion_threshold <= 1:
            raise ValueError("congestion_threshold must be in (0, 1]")

    @property
    def steps_per_window(self) -> int:
        return int(round(self.window_s / self.step_s))

    @property
    def n_windows(self) -> int:
        return int(self.total_s // self.window_s)


def storage_capacity(link: Link, cfg: SimConfig) -> float:
    """Vehicles the link can store: length * lanes / spacing, at least 1."""
    cap = math.floor(link.length_m * link.lanes_total / cfg.vehicle_length)
    return float(max(cap, 1))


def transfer_flow(waiting: float, ratio: float, lanes: int, down_occupancy: float,
                  down_capacity: float, green: bool, cfg: SimConfig) -> float:
    """Vehicles moved over one junction approach in one step.

    Zero on red; zero when the receiving link is congested; otherwise the
    minimum of the routed share of the waiting queue, the saturation flow
    of the approach, and the space left downstream.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must be within [0, 1]")
    if not green:
        return 0.0
    if down_occupancy >= cfg.congestion_threshold * down_capacity:
        return 0.0
    saturation = cfg.saturation_flow * lanes * cfg.step_s
    space = max(down_capacity - down_occupancy, 0.0)
    return max(0.0, min(ratio * waiting, saturation, space))


class TurnRatios:
    """Split probabilities per (connectivity pair, destination).

    ``ratios[p, d]`` is the probability that a vehicle bound for
    destination d and waiting on the upstream link of pair p takes that
    pair. For every (upstream link, destination) with outgoing pairs the
    probabilities sum to 1.
    """

    def __init__(self, up_idx: np.ndarray, dn_idx: np.ndarray,
                 dest_ids: tuple[int, ...], ratios: np.ndarray):
        self.up_idx = up_idx
        self.dn_idx = dn_idx
        self.dest_ids = dest_ids
        self.ratios = ratios

    def validate(self, n_links: int, tol: float = 1e-9) -> None:
        if np.any(self.ratios < -tol):
            raise SimulationError("negative turn ratio")
        sums = np.zeros((n_links, self.ratios.shape[1]))
        np.add.at(sums, self.up_idx, self.ratios)
        has_out = np.zeros(n_links, dtype=bool)
        has_out[self.up_idx] = True
        bad = np.abs(sums[has_out] - 1.0) > tol
        if np.any(bad):
            raise SimulationError("turn ratio vectors must sum to 1")


def _link_travel_times(net: RoadNetwork, speeds_kmh: np.ndarray) -> np.ndarray:
    lengths = np.array([lk.length_m for lk in net.links])
    speeds_ms = np.maximum(speeds_kmh, 1e-9) * 1000.0 / 3600.0
    return lengths / speeds_ms


def shortest_time_to_dest(net: RoadNetwork, tau: np.ndarray, dest_index: int,
                          ) -> np.ndarray:
    """Travel time from entering each link to finishing on the destination,
    following downstream connectivity (Dijkstra on the reversed link graph)."""
    n = net.n_links
    dist = np.full(n, np.inf)
    dist[dest_index] = tau[dest_index]
    heap = [(dist[dest_index], dest_index)]
    up_of = [
        np.array([net.link_index(u) for u in net.upstream[lk.id]], dtype=int)
        for lk in net.links
    ]
    while heap:
        d, z = heapq.heappop(heap)
        if d > dist[z]:
            continue
        for u in up_of[z]:
            cand = d + tau[u]
            if cand < dist[u]:
                dist[u] = cand
                heapq.heappush(heap, (cand, u))
    return dist


def update_turn_ratios(net: RoadNetwork, speeds_kmh: np.ndarray,
                       prev: TurnRatios, cfg: SimConfig) -> TurnRatios:
    """All-or-nothing split toward the fastest downstream continuation per
    destination, blended with the previous ratios by cfg.turn_smoothing."""
    target = _target_ratios(net, speeds_kmh, prev.up_idx, prev.dn_idx, prev.dest_ids)
    s = cfg.turn_smoothing
    mixed = (1.0 - s) * prev.ratios + s * target
    sums = np.zeros((net.n_links, mixed.shape[1]))
    np.add.at(sums, prev.up_idx, mixed)
    denom = sums[prev.up_idx]
    mixed = np.where(denom > 0, mixed / np.maximum(denom, 1e-300), mixed)
    out = TurnRatios(prev.up_idx, prev.dn_idx, prev.dest_ids, mixed)
    out.validate(net.n_links)
    return out


def _target_ratios(net: RoadNetwork, speeds_kmh: np.ndarray, up_idx: np.ndarray,
                   dn_idx: np.ndarray, dest_ids: tuple[int, ...]) -> np.ndarray:
    tau = _link_travel_times(net, speeds_kmh)
    n_pairs = len(up_idx)
    target = np.zeros((n_pairs, len(dest_ids)))
    pair_lookup: dict[tuple[int, int], int] = {
        (int(u), int(v)): p for p, (u, v) in enumerate(zip(up_idx, dn_idx))
    }
    out_pairs: dict[int, list[int]] = {}
    for p, u in enumerate(up_idx):
        out_pairs.setdefault(int(u), []).append(p)
    link_ids = net.link_ids()
    for col, dest_id in enumerate(dest_ids):
        dest_index = net.link_index(dest_id)
        dist = shortest_time_to_dest(net, tau, dest_index)
        for u, pairs in out_pairs.items():
            if link_ids[u] == dest_id:
                # trips ending here never leave; split is irrelevant but
                # kept uniform so the vector stays a distribution
                target[pairs, col] = 1.0 / len(pairs)
                continue
            best_p, best_key = None, None
            for p in pairs:
                v = int(dn_idx[p])
                key = (dist[v], link_ids[v])
                if math.isinf(dist[v]):
                    continue
                if best_key is None or key < best_key:
                    best_key, best_p = key, p
            if best_p is None:
                log.warning("destination link %s unreachable from link %s; "
                            "falling back to a uniform split", dest_id, link_ids[u])
                target[pairs, col] = 1.0 / len(pairs)
            else:
                target[best_p, col] = 1.0
    return target


def initial_turn_ratios(net: RoadNetwork, dest_ids: tuple[int, ...]) -> TurnRatios:
    up_idx = np.array([net.link_index(a) for a, _ in net.connectivity], dtype=int)
    dn_idx = np.array([net.link_index(b) for _, b in net.connectivity], dtype=int)
    vff = np.array([lk.vff_kmh for lk in net.links])
    ratios = _target_ratios(net, vff, up_idx, dn_idx, dest_ids)
    out = TurnRatios(up_idx, dn_idx, dest_ids, ratios)
    out.validate(net.n_links)
    return out


# ---------------------------------------------------------------------------
# engine state
# ---------------------------------------------------------------------------

class SimState:
    """Mutable per-run state: queues, pending transfers, demand backlog."""

    def __init__(self, net: RoadNetwork, cfg: SimConfig,
                 od_pairs: list[tuple[int, int]], dest_ids: tuple[int, ...]):
        self.net = net
        self.cfg = cfg
        z = net.n_links
        self.dest_ids = dest_ids
        self.dest_col = {d: i for i, d in enumerate(dest_ids)}
        d = len(dest_ids)

        self.cap = np.array([storage_capacity(lk, cfg) for lk in net.links])
        self.sat = np.array([cfg.saturation_flow * lk.car_lanes * cfg.step_s
                             for lk in net.links])
        self.len_m = np.array([lk.length_m for lk in net.links])
        self.vff_ms = np.array([lk.vff_ms for lk in net.links])
        self.vff_kmh = np.array([lk.vff_kmh for lk in net.links])
        free_steps = np.ceil(self.len_m / self.vff_ms / cfg.step_s).astype(int)
        self.max_delay = int(free_steps.max())
        self.ring = self.max_delay + 1

        self.m = np.zeros((z, d))
        self.w = np.zeros((z, d))
        self.pend = np.zeros((self.ring, z, d))

        # demand bookkeeping: one backlog slot per OD pair
        self.od_origin = np.array([net.link_index(o) for o, _ in od_pairs], dtype=int)
        self.od_dest_col = np.array([self.dest_col[dd] for _, dd in od_pairs], dtype=int)
        self.backlog = np.zeros(len(od_pairs))
        self.injected_total = 0.0
        self.completed_total = 0.0
        self.step_no = 0

        # signal gating per connectivity pair
        up_links = [net.link(a) for a, _ in net.connectivity]
        self.pair_up = np.array([net.link_index(a) for a, _ in net.connectivity], dtype=int)
        self.pair_dn = np.array([net.link_index(b) for _, b in net.connectivity], dtype=int)
        has_sig, cyc, off, green_a, group_a = [], [], [], [], []
        for lk in up_links:
            plan = net.signals.get(lk.to_junction)
            has_sig.append(plan is not None)
            cyc.append(plan.cycle_s if plan else 1.0)
            off.append(plan.offset_s if plan else 0.0)
            green_a.append(plan.green_a_s if plan else 1.0)
            x0, y0 = net.junctions[lk.from_junction]
            x1, y1 = net.junctions[lk.to_junction]
            group_a.append(abs(x1 - x0) >= abs(y1 - y0))
        self.sig_active = np.array(has_sig, dtype=bool)
        self.sig_cycle = np.array(cyc)
        self.sig_offset = np.array(off)
        self.sig_green_a = np.array(green_a)
        self.sig_group_a = np.array(group_a, dtype=bool)

    def occupancy(self) -> np.ndarray:
        return self.m.sum(axis=1) + self.w.sum(axis=1)

    def in_network(self) -> float:
        return float(self.m.sum() + self.w.sum())

    def greens(self, t_s: float) -> np.ndarray:
        a_green = ((t_s - self.sig_offset) % self.sig_cycle) < self.sig_green_a
        green = np.where(self.sig_group_a, a_green, ~a_green)
        return np.where(self.sig_active, green, True)

    def _delays(self) -> np.ndarray:
        """Steps a vehicle entering now spends moving: the free-flow time of
        the stretch upstream of the queue end, the queue end located by the
        waiting occupancy fraction."""
        frac = np.clip(self.w.sum(axis=1) / self.cap, 0.0, 1.0)
        steps = np.ceil((1.0 - frac) * self.len_m / self.vff_ms / self.cfg.step_s)
        return np.clip(steps.astype(int), 1, self.max_delay)

    def step(self, demand_step: np.ndarray, ratios: TurnRatios) -> dict[str, np.ndarray]:
        """Advance one time step; returns per-link outflow, start-of-step
        accumulation and completed-trip counts.

        Accumulation is sampled at the step start so that the queue state
        that produced this step's outflow is the one recorded with it.
        """
        cfg = self.cfg
        z = self.net.n_links
        k = self.step_no
        t_s = k * cfg.step_s
        acc_start = self.occupancy()

        # 1. moving -> waiting maturation; destination arrivals leave
        slot = k % self.ring
        mature = self.pend[slot].copy()
        self.pend[slot] = 0.0
        self.m -= mature
        if self.m.min() < -1e-9:
            raise SimulationError("moving queue went negative")
        np.clip(self.m, 0.0, None, out=self.m)
        completed = np.zeros(z)
        for dest_id, col in self.dest_col.items():
            zi = self.net.link_index(dest_id)
            done = mature[zi, col]
            if done > 0:
                completed[zi] += done
                mature[zi, col] = 0.0
        self.w += mature
        self.completed_total += completed.sum()
        u_step = completed.copy()

        delays = self._delays()

        # 2. transfer flows across junctions
        green = self.greens(t_s)
        q_des = self.w[self.pair_up] * ratios.ratios
        q_des[~green] = 0.0

        out_des = np.zeros(z)
        np.add.at(out_des, self.pair_up, q_des.sum(axis=1))
        factor_up = np.where(out_des > 0, np.minimum(1.0, self.sat / np.maximum(out_des, 1e-300)), 1.0)
        q1 = q_des * factor_up[self.pair_up][:, None]

        occ = self.occupancy()
        inflow_des = np.zeros(z)
        np.add.at(inflow_des, self.pair_dn, q1.sum(axis=1))
        space = np.maximum(self.cap - occ, 0.0)
        blocked = occ >= cfg.congestion_threshold * self.cap
        gate = np.where(blocked, 0.0,
                        np.where(inflow_des > 0,
                                 np.minimum(1.0, space / np.maximum(inflow_des, 1e-300)),
                                 1.0))
        q = q1 * gate[self.pair_dn][:, None]

        # 3. apply transfers
        np.add.at(self.w, self.pair_up, -q)
        if self.w.min() < -1e-9:
            raise SimulationError("waiting queue went negative")
        np.clip(self.w, 0.0, None, out=self.w)
        inflow_zd = np.zeros_like(self.m)
        np.add.at(inflow_zd, self.pair_dn, q)
        self.m += inflow_zd
        slots = (k + delays) % self.ring
        np.add.at(self.pend, (slots, np.arange(z)), inflow_zd)
        np.add.at(u_step, self.pair_up, q.sum(axis=1))

        # 4. demand injection, capped by the space left at each origin
        if demand_step is not None and len(demand_step):
            self.backlog += demand_step
            room = np.maximum(self.cap - self.occupancy(), 0.0)
            want = np.zeros(z)
            np.add.at(want, self.od_origin, self.backlog)
            frac = np.where(want > 0, np.minimum(1.0, room / np.maximum(want, 1e-300)), 0.0)
            inject = self.backlog * frac[self.od_origin]
            np.add.at(self.m, (self.od_origin, self.od_dest_col), inject)
            np.add.at(self.pend, (slots[self.od_origin], self.od_origin, self.od_dest_col),
                      inject)
            self.backlog -= inject
            self.injected_total += float(inject.sum())

        if np.any(self.occupancy() > self.cap + 1e-9):
            raise SimulationError("storage capacity exceeded")
        self.step_no += 1
        return {"outflow": u_step, "accumulation": acc_start, "completed": completed}


# ---------------------------------------------------------------------------
# records and aggregation
# ---------------------------------------------------------------------------

@dataclass
class SimRecord:
    """Window-aggregated simulation output (the training ground truth)."""

    link_ids: tuple[int, ...]
    window_s: float
    step_s: float
    speeds: np.ndarray            # (W, Z) km/h
    accumulation: np.ndarray      # (W, Z) mean vehicles per window
    outflow: np.ndarray           # (W, Z) vehicles per window
    mean_speed: np.ndarray        # (W,) km/h
    production: np.ndarray        # (W,) veh*km/h
    total_accumulation: np.ndarray  # (W,) vehicles
    completed: np.ndarray | None = None  # (W,) trips finished per window
    balance_error: float = 0.0    # |injected - in-network - completed| veh

    @property
    def n_windows(self) -> int:
        return self.speeds.shape[0]


def link_speed(outflows: np.ndarray, accumulations: np.ndarray, link: Link,
               cfg: SimConfig) -> float:
    """Window mean speed from per-step outflow and accumulation."""
    su = float(np.sum(outflows))
    sx = float(np.sum(accumulations))
    if sx <= 0.0:
        return link.vff_kmh
    raw_kmh = (su * (link.length_m / 1000.0) / sx) * (3600.0 / cfg.step_s)
    return max(cfg.v_min_kmh, min(link.vff_kmh, raw_kmh))


def _window_stats(net: RoadNetwork, cfg: SimConfig, sum_u: np.ndarray,
                  sum_x: np.ndarray) -> tuple[np.ndarray, float, float, float]:
    len_km = net.lengths_km()
    vff = np.array([lk.vff_kmh for lk in net.links])
    steps = cfg.steps_per_window
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = (sum_u * len_km / sum_x) * (3600.0 / cfg.step_s)
    speeds = np.where(sum_x > 0,
                      np.clip(raw, cfg.v_min_kmh, vff),
                      vff)
    window_h = cfg.window_s / 3600.0
    production = float((sum_u * len_km).sum() / window_h)
    total_acc = float(sum_x.sum() / steps)
    if total_acc > 0:
        # space-mean speed, floored like the link speeds
        mean_speed = max(production / total_acc, cfg.v_min_kmh)
    else:
        mean_speed = float(vff.mean())
    return speeds, mean_speed, production, total_acc


def simulate(net: RoadNetwork, scenario, cfg: SimConfig | None = None) -> SimRecord:
    """Run a scenario (OD demand + bus-lane configuration) to a SimRecord."""
    cfg = cfg or SimConfig()
    sim_net = net.with_bus_lanes(scenario.bus_links) if scenario.bus_links else net
    od = scenario.od
    od_pairs = list(od.pairs)
    rates = np.asarray(od.rates, dtype=float) * scenario.scale
    dest_ids = tuple(sorted({d for _, d in od_pairs}))
    for o, d in od_pairs:
        if o == d:
            raise SimulationError(f"OD pair with origin == destination ({o})")

    state = SimState(sim_net, cfg, od_pairs, dest_ids)
    ratios = initial_turn_ratios(sim_net, dest_ids)

    n_steps = int(cfg.total_s // cfg.step_s)
    spw = cfg.steps_per_window
    n_windows = cfg.n_windows
    z = sim_net.n_links

    speeds = np.zeros((n_windows, z))
    acc = np.zeros((n_windows, z))
    outflow = np.zeros((n_windows, z))
    mean_speed = np.zeros(n_windows)
    production = np.zeros(n_windows)
    total_acc = np.zeros(n_windows)
    completed = np.zeros(n_windows)

    sum_u = np.zeros(z)
    sum_x = np.zeros(z)
    window_completed = 0.0
    last_speeds = np.array([lk.vff_kmh for lk in sim_net.links])
    turn_every = max(1, int(round(cfg.turn_update_s / cfg.step_s)))
    ramp_s = max(cfg.warmup_s * od.ramp_fraction, cfg.step_s)

    for k in range(n_steps):
        t_s = k * cfg.step_s
        if k > 0 and k % turn_every == 0:
            ratios = update_turn_ratios(sim_net, last_speeds, ratios, cfg)
        if t_s < cfg.warmup_s:
            factor = min(t_s / ramp_s, 1.0)
        elif t_s < cfg.warmup_s + cfg.peak_s:
            factor = 1.0
        else:
            factor = 0.0
        demand_step = rates / 3600.0 * cfg.step_s * factor
        out = state.step(demand_step, ratios)

        sum_u += out["outflow"]
        sum_x += out["accumulation"]
        window_completed += float(out["completed"].sum())
        if (k + 1) % spw == 0:
            wi = k // spw
            if wi >= n_windows:
                break
            sp, ms, prod, ta = _window_stats(sim_net, cfg, sum_u, sum_x)
            speeds[wi] = sp
            acc[wi] = sum_x / spw
            outflow[wi] = sum_u
            mean_speed[wi] = ms
            production[wi] = prod
            total_acc[wi] = ta
            completed[wi] = window_completed
            last_speeds = sp
            sum_u[:] = 0.0
            sum_x[:] = 0.0
            window_completed = 0.0

    balance = state.injected_total - (state.in_network() + state.completed_total)
    if abs(balance) > 1e-6:
        raise SimulationError(f"vehicle balance violated by {balance:.3e} veh")

    return SimRecord(
        link_ids=sim_net.link_ids(), window_s=cfg.window_s, step_s=cfg.step_s,
        speeds=speeds, accumulation=acc, outflow=outflow,
        mean_speed=mean_speed, production=production,
        total_accumulation=total_acc, completed=completed,
        balance_error=abs(balance),
    )


def network_mfd(record: SimRecord) -> np.ndarray:
    """(accumulation, production, mean speed) triplets, one per window."""
    return np.column_stack(
        [record.total_accumulation, record.production, record.mean_speed])


# ---------------------------------------------------------------------------
# persistence: links.csv + network.csv, window-major then link id
# ---------------------------------------------------------------------------

def _f(x: float) -> str:
    return repr(float(x))


def save_record(record: SimRecord, out_dir) -> None:
    import os
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "links.csv"), "w") as fh:
        fh.write("window,link_id,speed_kmh,accumulation,outflow\n")
        for w in range(record.n_windows):
            for zi, link_id in enumerate(record.link_ids):
                fh.write(f"{w},{link_id},{_f(record.speeds[w, zi])},"
                         f"{_f(record.accumulation[w, zi])},"
                         f"{_f(record.outflow[w, zi])}\n")
    with open(os.path.join(out_dir, "network.csv"), "w") as fh:
        fh.write("window,mean_speed_kmh,production,accumulation\n")
        for w in range(record.n_windows):
            fh.write(f"{w},{_f(record.mean_speed[w])},{_f(record.production[w])},"
                     f"{_f(record.total_accumulation[w])}\n")


def load_record(out_dir, window_s: float = 180.0, step_s: float = 5.0) -> SimRecord:
    import os
    link_rows: dict[int, dict[int, tuple[float, float, float]]] = {}
    link_ids: list[int] = []
    with open(os.path.join(out_dir, "links.csv")) as fh:
        next(fh)
        for line in fh:
            w_s, lid_s, sp, ac, of = line.rstrip("\n").split(",")
            w, lid = int(w_s), int(lid_s)
            link_rows.setdefault(w, {})[lid] = (float(sp), float(ac), float(of))
            if w == 0:
                link_ids.append(lid)
    net_rows = []
    with open(os.path.join(out_dir, "network.csv")) as fh:
        next(fh)
        for line in fh:
            _, ms, prod, ta = line.rstrip("\n").split(",")
            net_rows.append((float(ms), float(prod), float(ta)))
    n_w, n_z = len(net_rows), len(link_ids)
    speeds = np.zeros((n_w, n_z))
    acc = np.zeros((n_w, n_z))
    outflow = np.zeros((n_w, n_z))
    for w in range(n_w):
        for zi, lid in enumerate(link_ids):
            sp, ac_, of = link_rows[w][lid]
            speeds[w, zi] = sp
            acc[w, zi] = ac_
            outflow[w, zi] = of
    arr = np.array(net_rows)
    return SimRecord(
        link_ids=tuple(link_ids), window_s=window_s, step_s=step_s,
        speeds=speeds, accumulation=acc, outflow=outflow,
        mean_speed=arr[:, 0], production=arr[:, 1], total_accumulation=arr[:, 2],
    )
