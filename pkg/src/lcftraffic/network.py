"""Road network model: links, junctions, the links-as-nodes graph and
per-link attribute extraction.

A road network is a directed graph of links joined at junctions. For the
attention model the network is re-expressed as a *link graph* in which every
link becomes a node and an edge (i, j) exists whenever link j is directly
downstream of link i; every node also carries a self-loop so that a link
attends to itself.

Each link is summarised by 10 attributes, in this fixed column order:

    0  length_m
    1  lanes_total
    2  lanes_dbl          (dedicated bus lanes)
    3  n_up               (upstream link count)
    4  n_down             (downstream link count)
    5  n_up_boundary      (upstream links on the network boundary)
    6  n_down_boundary    (downstream links on the network boundary)
    7  n_up_dbl           (upstream links with a dedicated bus lane)
    8  n_down_dbl         (downstream links with a dedicated bus lane)
    9  sub_region         (partition label, 0 when no partition is used)
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

FEATURE_NAMES = (
    "length_m",
    "lanes_total",
    "lanes_dbl",
    "n_up",
    "n_down",
    "n_up_boundary",
    "n_down_boundary",
    "n_up_dbl",
    "n_down_dbl",
    "sub_region",
)
N_FEATURES = len(FEATURE_NAMES)

MAX_LANES = 5


class NetworkError(ValueError):
    """Malformed network description or invariant violation."""


@dataclass(frozen=True)
class SignalPlan:
    """Fixed-cycle two-phase plan for one junction.

    Approaches are split into two groups by geometric orientation
    (east-west vs north-south). Group A is green during the first
    ``green_a_s`` seconds of each cycle, group B during the remainder.
    """

    junction: int
    cycle_s: float
    offset_s: float
    green_a_s: float

    def group_a_green(self, t_s: float) -> bool:
        return (t_s - self.offset_s) % self.cycle_s < self.green_a_s


@dataclass(frozen=True)
class Link:
    id: int
    from_junction: int
    to_junction: int
    length_m: float
    lanes_total: int
    lanes_dbl: int
    vff_kmh: float
    is_boundary_in: bool = False
    is_boundary_out: bool = False

    def validate(self) -> None:
        if self.length_m <= 0:
            raise NetworkError(f"link {self.id}: length must be > 0")
        if not 1 <= self.lanes_total <= MAX_LANES:
            raise NetworkError(
                f"link {self.id}: lanes_total {self.lanes_total} outside 1..{MAX_LANES}"
            )
        if not 0 <= self.lanes_dbl < self.lanes_total:
            raise NetworkError(
                f"link {self.id}: lanes_dbl {self.lanes_dbl} must be < lanes_total"
            )
        if self.vff_kmh <= 0:
            raise NetworkError(f"link {self.id}: free-flow speed must be > 0")
        if self.from_junction == self.to_junction:
            raise NetworkError(f"link {self.id}: from and to junction are equal")

    @property
    def car_lanes(self) -> int:
        return self.lanes_total - self.lanes_dbl

    @property
    def vff_ms(self) -> float:
        return self.vff_kmh * 1000.0 / 3600.0


class RoadNetwork:
    """Immutable directed road network.

    Connectivity is the set of ordered (upstream link, downstream link)
    pairs that share exactly one junction: the upstream link ends where the
    downstream link starts. A link and its exact reverse twin share both
    junctions, so that U-turn movement is not a connectivity pair.
    """

    def __init__(self, junctions: dict[int, tuple[float, float]],
                 links: list[Link], signals: list[SignalPlan] | None = None):
        if not links:
            raise NetworkError("network must contain at least one link")
        ids = [lk.id for lk in links]
        if len(set(ids)) != len(ids):
            raise NetworkError("duplicate link ids")
        for lk in links:
            lk.validate()
            for j in (lk.from_junction, lk.to_junction):
                if j not in junctions:
                    raise NetworkError(f"link {lk.id}: unknown junction {j}")
        self.junctions: dict[int, tuple[float, float]] = dict(sorted(junctions.items()))
        self.links: tuple[Link, ...] = tuple(sorted(links, key=lambda lk: lk.id))
        self.signals: dict[int, SignalPlan] = {}
        for plan in signals or []:
            if plan.junction not in junctions:
                raise NetworkError(f"signal references unknown junction {plan.junction}")
            self.signals[plan.junction] = plan

        self._by_id = {lk.id: lk for lk in self.links}
        self._index = {lk.id: i for i, lk in enumerate(self.links)}

        into: dict[int, list[int]] = {j: [] for j in junctions}
        out_of: dict[int, list[int]] = {j: [] for j in junctions}
        for lk in self.links:
            into[lk.to_junction].append(lk.id)
            out_of[lk.from_junction].append(lk.id)
        self.junction_incoming = {j: tuple(v) for j, v in into.items()}
        self.junction_outgoing = {j: tuple(v) for j, v in out_of.items()}

        pairs = []
        for lk in self.links:
            for down_id in out_of[lk.to_junction]:
                down = self._by_id[down_id]
                if down_id == lk.id:
                    continue
                if down.to_junction == lk.from_junction and \
                        down.from_junction == lk.to_junction:
                    continue  # reverse twin: shares both junctions
                pairs.append((lk.id, down_id))
        self.connectivity: tuple[tuple[int, int], ...] = tuple(sorted(pairs))

        self.downstream: dict[int, tuple[int, ...]] = {lk.id: () for lk in self.links}
        self.upstream: dict[int, tuple[int, ...]] = {lk.id: () for lk in self.links}
        down: dict[int, list[int]] = {lk.id: [] for lk in self.links}
        up: dict[int, list[int]] = {lk.id: [] for lk in self.links}
        for a, b in self.connectivity:
            down[a].append(b)
            up[b].append(a)
        self.downstream = {k: tuple(v) for k, v in down.items()}
        self.upstream = {k: tuple(v) for k, v in up.items()}

    @property
    def n_links(self) -> int:
        return len(self.links)

    def link(self, link_id: int) -> Link:
        return self._by_id[link_id]

    def link_index(self, link_id: int) -> int:
        return self._index[link_id]

    def link_ids(self) -> tuple[int, ...]:
        return tuple(lk.id for lk in self.links)

    def midpoint(self, link_id: int) -> tuple[float, float]:
        lk = self._by_id[link_id]
        x0, y0 = self.junctions[lk.from_junction]
        x1, y1 = self.junctions[lk.to_junction]
        return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)

    def lengths_km(self) -> np.ndarray:
        return np.array([lk.length_m for lk in self.links]) / 1000.0

    def with_bus_lanes(self, link_ids) -> "RoadNetwork":
        """Copy of the network with lanes_dbl = 1 on the given links."""
        chosen = set(link_ids)
        new_links = []
        for lk in self.links:
            if lk.id in chosen:
                if lk.lanes_total < 2:
                    raise NetworkError(
                        f"link {lk.id}: cannot reserve a bus lane on a 1-lane link"
                    )
                lk = replace(lk, lanes_dbl=1)
            new_links.append(lk)
        return RoadNetwork(self.junctions, new_links, list(self.signals.values()))


@dataclass(frozen=True)
class LinkGraph:
    """Links-as-nodes adjacency, with a mandatory self-loop on every node."""

    node_ids: tuple[int, ...]
    adjacency: np.ndarray  # (N, N) bool, adjacency[i, j] == edge i -> j

    def __post_init__(self):
        n = len(self.node_ids)
        if self.adjacency.shape != (n, n):
            raise NetworkError("adjacency shape does not match node count")
        if not np.all(np.diag(self.adjacency)):
            raise NetworkError("every node needs a self-loop")

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])


def build_link_graph(net: RoadNetwork) -> LinkGraph:
    n = net.n_links
    adj = np.zeros((n, n), dtype=bool)
    for a, b in net.connectivity:
        adj[net.link_index(a), net.link_index(b)] = True
    np.fill_diagonal(adj, True)
    return LinkGraph(net.link_ids(), adj)


def generate_grid_network(rows: int, cols: int, link_length: float, lanes: int,
                          vff_kmh: float = 25.0, with_signals: bool = True,
                          cycle_s: float = 90.0, green_split: float = 0.5,
                          length_jitter: float = 0.0, jitter_seed: int = 0,
                          ) -> RoadNetwork:
    """Bidirectional rows x cols lattice.

    Junction (r, c) gets id r*cols + c at coordinates (c, r) * link_length.
    Every lattice edge yields a pair of opposed directed links with
    deterministic ids. Links whose both endpoints lie on the outer ring are
    flagged as boundary links. Signals (when enabled) run a fixed two-phase
    cycle at every junction.

    ``length_jitter`` perturbs each street's length by a seeded uniform
    factor in [1 - jitter, 1 + jitter] (both directions alike). A perfectly
    regular lattice is full of equal-cost route ties, which makes
    all-or-nothing routing flip between alternates; a little irregularity
    gives stable corridors, as in real street networks.
    """
    if rows < 2 or cols < 2:
        raise NetworkError("grid needs rows >= 2 and cols >= 2")
    if not 0.0 <= length_jitter < 1.0:
        raise NetworkError("length_jitter must be in [0, 1)")

    def jid(r: int, c: int) -> int:
        return r * cols + c

    def on_perimeter(r: int, c: int) -> bool:
        return r in (0, rows - 1) or c in (0, cols - 1)

    junctions = {
        jid(r, c): (c * link_length, r * link_length)
        for r in range(rows) for c in range(cols)
    }
    rng = np.random.default_rng(jitter_seed)
    links: list[Link] = []
    next_id = 0
    for r in range(rows):
        for c in range(cols):
            for r2, c2 in ((r, c + 1), (r + 1, c)):
                if r2 >= rows or c2 >= cols:
                    continue
                boundary = on_perimeter(r, c) and on_perimeter(r2, c2)
                factor = 1.0 + length_jitter * float(rng.uniform(-1.0, 1.0))
                for fj, tj in ((jid(r, c), jid(r2, c2)), (jid(r2, c2), jid(r, c))):
                    links.append(Link(
                        id=next_id, from_junction=fj, to_junction=tj,
                        length_m=float(link_length) * factor, lanes_total=lanes,
                        lanes_dbl=0, vff_kmh=float(vff_kmh),
                        is_boundary_in=boundary, is_boundary_out=boundary,
                    ))
                    next_id += 1
    signals = []
    if with_signals:
        green_a = round(cycle_s * green_split)
        signals = [SignalPlan(j, float(cycle_s), 0.0, float(green_a))
                   for j in sorted(junctions)]
    return RoadNetwork(junctions, links, signals)


# ---------------------------------------------------------------------------
# network file format
#
# Line-oriented text, whitespace-delimited, '#' starts a comment:
#   JUNCTION id x y
#   LINK id from_junction to_junction length_m lanes dbl vff_kmh [bin bout]
#   SIGNAL junction cycle_s offset_s green_a_s
# The two trailing LINK flags mark boundary-in/boundary-out; when a file
# omits them the flags are inferred: boundary-in = no upstream links,
# boundary-out = no downstream links.
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def save_network(net: RoadNetwork, path) -> None:
    lines = ["# road network"]
    for j, (x, y) in sorted(net.junctions.items()):
        lines.append(f"JUNCTION {j} {_fmt(x)} {_fmt(y)}")
    for lk in net.links:
        lines.append(
            f"LINK {lk.id} {lk.from_junction} {lk.to_junction} {_fmt(lk.length_m)} "
            f"{lk.lanes_total} {lk.lanes_dbl} {_fmt(lk.vff_kmh)} "
            f"{int(lk.is_boundary_in)} {int(lk.is_boundary_out)}"
        )
    for j, plan in sorted(net.signals.items()):
        lines.append(
            f"SIGNAL {j} {_fmt(plan.cycle_s)} {_fmt(plan.offset_s)} {_fmt(plan.green_a_s)}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_network(path) -> RoadNetwork:
    junctions: dict[int, tuple[float, float]] = {}
    raw_links: list[tuple[Link, bool]] = []  # (link, flags_from_file)
    signals: list[SignalPlan] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            kind, args = parts[0], parts[1:]
            try:
                if kind == "JUNCTION":
                    jid, x, y = int(args[0]), float(args[1]), float(args[2])
                    junctions[jid] = (x, y)
                elif kind == "LINK":
                    if len(args) not in (7, 9):
                        raise ValueError("expected 7 or 9 fields")
                    lk = Link(
                        id=int(args[0]), from_junction=int(args[1]),
                        to_junction=int(args[2]), length_m=float(args[3]),
                        lanes_total=int(args[4]), lanes_dbl=int(args[5]),
                        vff_kmh=float(args[6]),
                        is_boundary_in=bool(int(args[7])) if len(args) == 9 else False,
                        is_boundary_out=bool(int(args[8])) if len(args) == 9 else False,
                    )
                    raw_links.append((lk, len(args) == 9))
                elif kind == "SIGNAL":
                    signals.append(SignalPlan(
                        junction=int(args[0]), cycle_s=float(args[1]),
                        offset_s=float(args[2]), green_a_s=float(args[3]),
                    ))
                else:
                    raise ValueError(f"unknown record kind {kind!r}")
            except (IndexError, ValueError) as exc:
                raise NetworkError(f"{path}:{lineno}: {exc}") from exc

    net = RoadNetwork(junctions, [lk for lk, _ in raw_links], signals)
    if all(explicit for _, explicit in raw_links):
        return net
    # infer boundary flags from topology for files that omit them
    inferred = [
        replace(lk,
                is_boundary_in=(len(net.upstream[lk.id]) == 0) if not explicit else lk.is_boundary_in,
                is_boundary_out=(len(net.downstream[lk.id]) == 0) if not explicit else lk.is_boundary_out)
        for lk, explicit in raw_links
    ]
    return RoadNetwork(junctions, inferred, signals)


# ---------------------------------------------------------------------------
# feature extraction and normalization
# ---------------------------------------------------------------------------

def extract_features(net: RoadNetwork, partition=None) -> np.ndarray:
    """Per-link attribute matrix, rows ordered by link id, 10 columns.

    ``partition`` maps link id -> sub-region label; with None the
    sub-region column is 0 everywhere (the no-partition model variants).
    """
    rows = []
    for lk in net.links:
        ups = [net.link(u) for u in net.upstream[lk.id]]
        downs = [net.link(d) for d in net.downstream[lk.id]]
        if partition is None:
            sub = 0
        else:
            try:
                sub = partition[lk.id]
            except KeyError:
                raise NetworkError(f"no partition label for link {lk.id}") from None
        rows.append([
            lk.length_m,
            lk.lanes_total,
            lk.lanes_dbl,
            len(ups),
            len(downs),
            sum(1 for u in ups if u.is_boundary_in),
            sum(1 for d in downs if d.is_boundary_out),
            sum(1 for u in ups if u.lanes_dbl > 0),
            sum(1 for d in downs if d.lanes_dbl > 0),
            sub,
        ])
    return np.array(rows, dtype=float)


@dataclass(frozen=True)
class MinMaxStats:
    """Column-wise min/max frozen on the training split."""

    lo: np.ndarray
    hi: np.ndarray

    def apply(self, matrix: np.ndarray) -> np.ndarray:
        span = self.hi - self.lo
        out = np.zeros_like(matrix, dtype=float)
        ok = span > 0
        out[:, ok] = (matrix[:, ok] - self.lo[ok]) / span[ok]
        return out

    def invert(self, matrix: np.ndarray) -> np.ndarray:
        return matrix * (self.hi - self.lo) + self.lo


def fit_minmax(matrix: np.ndarray) -> MinMaxStats:
    if matrix.ndim != 2 or matrix.shape[0] < 1:
        raise ValueError("need a 2-d matrix with at least one row")
    return MinMaxStats(lo=matrix.min(axis=0), hi=matrix.max(axis=0))


def minmax_normalize(matrix: np.ndarray, stats: MinMaxStats | None = None,
                     ) -> tuple[np.ndarray, MinMaxStats]:
    """Scale every column to [0, 1]; constant columns map to 0."""
    if stats is None:
        stats = fit_minmax(matrix)
    return stats.apply(matrix), stats
