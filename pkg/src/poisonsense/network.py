"""Transportation network model, TNTP ingestion and route enumeration.

Node ids are kept exactly as they appear in the TNTP files (1-based).
Link ids are 0-based positions in ``Network.links``.
"""

from __future__ import annotations

import dataclasses
import heapq
import json
import logging
import math
import re
import warnings
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, TextIO

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

BPR_POWER = 4


class TNTPParseError(ValueError):
    pass


class UnsupportedExponentError(TNTPParseError):
    pass


class NetworkValidationError(ValueError):
    pass


class NoRouteError(ValueError):
    pass


class RouteShortfallWarning(UserWarning):
    """An OD pair has fewer loop-free paths than requested."""


@dataclass(frozen=True)
class Link:
    tail: int
    head: int
    b: float  # free-flow cost
    c: float  # capacity
    w: float  # congestion weight

    def __post_init__(self):
        if self.tail == self.head:
            raise NetworkValidationError(f"self-loop link at node {self.tail}")
        if not self.c > 0:
            raise NetworkValidationError(f"capacity must be positive, got {self.c}")
        if not self.b >= 0:
            raise NetworkValidationError(f"free-flow cost must be >= 0, got {self.b}")
        if not self.w > 0:
            raise NetworkValidationError(f"congestion weight must be positive, got {self.w}")


@dataclass(frozen=True)
class Network:
    """Immutable directed network with OD demand and an optional route set.

    ``routes`` holds link-id sequences and ``route_od`` the OD index each
    route serves. ``F`` (links x routes) and ``H`` (ODs x routes) are built
    lazily from them.
    """

    n_nodes: int
    links: tuple[Link, ...]
    od_pairs: tuple[tuple[int, int], ...]
    demand: tuple[float, ...]
    first_thru_node: int = 1
    coords: dict[int, tuple[float, float]] | None = None
    routes: tuple[tuple[int, ...], ...] = ()
    route_od: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.od_pairs) != len(self.demand):
            raise NetworkValidationError("od_pairs and demand differ in length")
        if any(not dv >= 0 for dv in self.demand):
            raise NetworkValidationError("demand must be nonnegative")
        if len(self.routes) != len(self.route_od):
            raise NetworkValidationError("routes and route_od differ in length")
        for r, od in zip(self.routes, self.route_od):
            self._check_route(r, od)

    def _check_route(self, route: tuple[int, ...], od: int):
        if not route:
            raise NetworkValidationError("empty route")
        if not 0 <= od < len(self.od_pairs):
            raise NetworkValidationError(f"route OD index {od} out of range")
        for a, b in zip(route, route[1:]):
            if self.links[a].head != self.links[b].tail:
                raise NetworkValidationError(f"route {route} is not a connected path")
        o, d = self.od_pairs[od]
        if self.links[route[0]].tail != o or self.links[route[-1]].head != d:
            raise NetworkValidationError(f"route {route} does not connect OD pair {(o, d)}")

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def n_routes(self) -> int:
        return len(self.routes)

    @property
    def n_od(self) -> int:
        return len(self.od_pairs)

    @cached_property
    def b(self) -> np.ndarray:
        return np.array([lk.b for lk in self.links], dtype=float)

    @cached_property
    def c(self) -> np.ndarray:
        return np.array([lk.c for lk in self.links], dtype=float)

    @cached_property
    def w(self) -> np.ndarray:
        return np.array([lk.w for lk in self.links], dtype=float)

    @cached_property
    def d(self) -> np.ndarray:
        return np.array(self.demand, dtype=float)

    @cached_property
    def F(self) -> sp.csr_matrix:
        rows, cols = [], []
        for j, r in enumerate(self.routes):
            for i in sorted(set(r)):
                rows.append(i)
                cols.append(j)
        data = np.ones(len(rows))
        return sp.csr_matrix((data, (rows, cols)), shape=(self.n_links, self.n_routes))

    @cached_property
    def H(self) -> sp.csr_matrix:
        cols = np.arange(self.n_routes)
        data = np.ones(self.n_routes)
        return sp.csr_matrix(
            (data, (np.asarray(self.route_od, dtype=int), cols)),
            shape=(self.n_od, self.n_routes),
        )

    def with_routes(self, routes: Iterable[Iterable[int]], route_od: Iterable[int]) -> Network:
        return dataclasses.replace(
            self,
            routes=tuple(tuple(int(i) for i in r) for r in routes),
            route_od=tuple(int(i) for i in route_od),
        )

    def restrict_ods(self, pairs: Iterable[tuple[int, int]]) -> Network:
        """Keep only the listed OD pairs, in the given order; drops routes."""
        index = {od: i for i, od in enumerate(self.od_pairs)}
        keep = []
        for p in pairs:
            p = (int(p[0]), int(p[1]))
            if p not in index:
                raise NetworkValidationError(f"OD pair {p} has no positive demand")
            keep.append(index[p])
        return dataclasses.replace(
            self,
            od_pairs=tuple(self.od_pairs[i] for i in keep),
            demand=tuple(self.demand[i] for i in keep),
            routes=(),
            route_od=(),
        )

    def top_od_pairs(self, n: int) -> list[tuple[int, int]]:
        """The ``n`` largest-demand OD pairs with pairwise distinct origins and destinations."""
        order = sorted(range(self.n_od), key=lambda i: (-self.demand[i], self.od_pairs[i]))
        chosen: list[tuple[int, int]] = []
        for i in order:
            o, d = self.od_pairs[i]
            if all(o != co and d != cd for co, cd in chosen):
                chosen.append((o, d))
            if len(chosen) == n:
                break
        return chosen

    def to_dict(self) -> dict:
        return {
            "n_nodes": self.n_nodes,
            "first_thru_node": self.first_thru_node,
            "links": [[lk.tail, lk.head, lk.b, lk.c, lk.w] for lk in self.links],
            "od_pairs": [list(p) for p in self.od_pairs],
            "demand": list(self.demand),
            "coords": None
            if self.coords is None
            else [[n, x, y] for n, (x, y) in sorted(self.coords.items())],
            "routes": [list(r) for r in self.routes],
            "route_od": list(self.route_od),
        }

    @classmethod
    def from_dict(cls, data: dict) -> Network:
        coords = data.get("coords")
        return cls(
            n_nodes=int(data["n_nodes"]),
            first_thru_node=int(data.get("first_thru_node", 1)),
            links=tuple(Link(int(t), int(h), float(b), float(c), float(w)) for t, h, b, c, w in data["links"]),
            od_pairs=tuple((int(o), int(d)) for o, d in data["od_pairs"]),
            demand=tuple(float(x) for x in data["demand"]),
            coords=None if coords is None else {int(n): (float(x), float(y)) for n, x, y in coords},
            routes=tuple(tuple(int(i) for i in r) for r in data.get("routes", [])),
            route_od=tuple(int(i) for i in data.get("route_od", [])),
        )


def link_flow(F: sp.spmatrix, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or z.shape[0] != F.shape[1]:
        raise ValueError(f"route flow has shape {z.shape}, expected ({F.shape[1]},)")
    return np.asarray(F @ z).ravel()


# --------------------------------------------------------------------------
# TNTP

_TAG = re.compile(r"<([^>]+)>\s*(.*)")
_TRIP = re.compile(r"(\d+)\s*:\s*([-+0-9.eE]+)")


def _read_metadata(lines: list[str]) -> tuple[dict[str, str], int]:
    meta: dict[str, str] = {}
    for i, raw in enumerate(lines):
        line = raw.strip()
        if not line or line.startswith("~"):
            continue
        m = _TAG.match(line)
        if m is None:
            raise TNTPParseError(f"unexpected line in metadata header: {line!r}")
        key = m.group(1).strip().upper()
        if key == "END OF METADATA":
            return meta, i + 1
        meta[key] = m.group(2).strip()
    raise TNTPParseError("missing <END OF METADATA>")


def _meta_int(meta: dict[str, str], tag: str) -> int:
    if tag not in meta:
        raise TNTPParseError(f"missing <{tag}> in header")
    try:
        return int(float(meta[tag]))
    except ValueError:
        raise TNTPParseError(f"bad value for <{tag}>: {meta[tag]!r}") from None


def _parse_links(text: str) -> tuple[int, int, list[Link]]:
    lines = text.splitlines()
    if not any(line.strip() for line in lines):
        raise TNTPParseError("empty net file")
    meta, start = _read_metadata(lines)
    n_nodes = _meta_int(meta, "NUMBER OF NODES")
    n_links = _meta_int(meta, "NUMBER OF LINKS")
    first_thru = _meta_int(meta, "FIRST THRU NODE")

    links = []
    for raw in lines[start:]:
        line = raw.split("~", 1)[0].strip().rstrip(";").strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 7:
            raise TNTPParseError(f"link row has {len(parts)} columns, need at least 7: {raw!r}")
        tail, head = int(parts[0]), int(parts[1])
        capacity, fft, bpr_b, power = (float(parts[k]) for k in (2, 4, 5, 6))
        if power != BPR_POWER:
            raise UnsupportedExponentError(
                f"link {tail}->{head} has BPR power {power:g}; only quartic costs are supported"
            )
        if capacity <= 0:
            raise NetworkValidationError(f"link {tail}->{head} has nonpositive capacity {capacity}")
        links.append(Link(tail, head, b=fft, c=capacity, w=fft * bpr_b))
    if len(links) != n_links:
        raise TNTPParseError(f"header declares {n_links} links, found {len(links)}")
    return n_nodes, first_thru, links


def _parse_trips(text: str) -> dict[tuple[int, int], float]:
    lines = text.splitlines()
    if not any(line.strip() for line in lines):
        raise TNTPParseError("empty trips file")
    _, start = _read_metadata(lines)
    totals: dict[tuple[int, int], float] = defaultdict(float)
    origin = None
    for raw in lines[start:]:
        line = raw.split("~", 1)[0].strip()
        if not line:
            continue
        if line.lower().startswith("origin"):
            origin = int(line.split()[1])
            continue
        if origin is None:
            raise TNTPParseError(f"trip entry before any Origin block: {raw!r}")
        for dest, value in _TRIP.findall(line):
            v = float(value)
            if v < 0:
                raise NetworkValidationError(f"negative demand {v} for OD ({origin}, {dest})")
            totals[(origin, int(dest))] += v
    return totals


def parse_nodes(stream: TextIO) -> dict[int, tuple[float, float]]:
    """Node coordinates from a whitespace ``node x y`` table or a GeoJSON point collection."""
    text = stream.read()
    if text.lstrip().startswith("{"):
        return _parse_geojson_nodes(text)
    coords = {}
    for raw in text.splitlines():
        parts = raw.replace(";", " ").split()
        if len(parts) < 3:
            continue
        try:
            coords[int(parts[0])] = (float(parts[1]), float(parts[2]))
        except ValueError:
            continue  # header row
    return coords


def _parse_geojson_nodes(text: str) -> dict[int, tuple[float, float]]:
    coords = {}
    for feat in json.loads(text).get("features", []):
        props = feat.get("properties") or {}
        key = next((k for k in ("id", "node", "node_id", "Node", "ID") if k in props), None)
        geom = feat.get("geometry") or {}
        if key is None or geom.get("type") != "Point":
            raise TNTPParseError("GeoJSON node features need an id property and Point geometry")
        x, y = geom["coordinates"][:2]
        coords[int(props[key])] = (float(x), float(y))
    return coords


def parse_tntp(net_file: TextIO, trips_file: TextIO, node_file: TextIO | None = None) -> Network:
    """Read a TNTP ``_net``/``_trips`` pair (and optional ``_node`` file).

    Per-link mapping: ``b = free_flow_time``, ``c = capacity``,
    ``w = free_flow_time * B``, so ``b + w (v/c)^4`` is the standard BPR
    travel time. OD pairs with zero demand (and intrazonal trips) are
    dropped.
    """
    n_nodes, first_thru, links = _parse_links(net_file.read())
    totals = _parse_trips(trips_file.read())
    pairs = sorted(p for p, v in totals.items() if v > 0 and p[0] != p[1])
    coords = parse_nodes(node_file) if node_file is not None else None
    return Network(
        n_nodes=n_nodes,
        links=tuple(links),
        od_pairs=tuple(pairs),
        demand=tuple(totals[p] for p in pairs),
        first_thru_node=first_thru,
        coords=coords,
    )


def _bpr_factor(b: float, w: float) -> float:
    """B with ``b * B == w`` exactly when a neighbouring float allows it."""
    B = w / b
    for cand in (B, math.nextafter(B, math.inf), math.nextafter(B, -math.inf)):
        if b * cand == w:
            return cand
    return B


def write_tntp(network: Network) -> tuple[str, str]:
    """Serialize to (net text, trips text) in TNTP layout."""
    net = [
        f"<NUMBER OF ZONES> {max(network.first_thru_node - 1, 0)}",
        f"<NUMBER OF NODES> {network.n_nodes}",
        f"<FIRST THRU NODE> {network.first_thru_node}",
        f"<NUMBER OF LINKS> {network.n_links}",
        "<END OF METADATA>",
        "",
        "~\tinit_node\tterm_node\tcapacity\tlength\tfree_flow_time\tb\tpower\tspeed\ttoll\tlink_type\t;",
    ]
    for lk in network.links:
        # B is only recoverable as w/b; a zero free-flow time cannot carry congestion
        if lk.b == 0:
            raise NetworkValidationError("cannot express a link with b = 0 in TNTP form")
        net.append(f"\t{lk.tail}\t{lk.head}\t{lk.c!r}\t0\t{lk.b!r}\t{_bpr_factor(lk.b, lk.w)!r}\t4\t0\t0\t1\t;")

    by_origin: dict[int, list[tuple[int, float]]] = defaultdict(list)
    for (o, d), v in zip(network.od_pairs, network.demand):
        by_origin[o].append((d, v))
    trips = [
        f"<NUMBER OF ZONES> {max(network.first_thru_node - 1, 0)}",
        f"<TOTAL OD FLOW> {sum(network.demand)!r}",
        "<END OF METADATA>",
        "",
    ]
    for o in sorted(by_origin):
        trips.append(f"Origin {o}")
        trips.append("  ".join(f"{d} : {v!r};" for d, v in sorted(by_origin[o])))
        trips.append("")
    return "\n".join(net) + "\n", "\n".join(trips)


# --------------------------------------------------------------------------
# route enumeration


def _path_cost(network: Network, path: tuple[int, ...]) -> float:
    return math.fsum(network.links[i].b for i in path)


class _Graph:
    def __init__(self, network: Network):
        self.network = network
        self.out: dict[int, list[int]] = defaultdict(list)
        for i, lk in enumerate(network.links):
            self.out[lk.tail].append(i)

    def shortest(
        self,
        source: int,
        target: int,
        blocked_nodes: set[int] = frozenset(),
        blocked_links: set[int] = frozenset(),
    ) -> tuple[int, ...] | None:
        """Dijkstra on free-flow cost; equal costs resolve to the smaller link-id sequence.

        Zone nodes (ids below the first through node) are never used as
        intermediate nodes.
        """
        links = self.network.links
        first_thru = self.network.first_thru_node
        heap: list[tuple[float, tuple[int, ...], int]] = [(0.0, (), source)]
        done: set[int] = set()
        while heap:
            dist, path, u = heapq.heappop(heap)
            if u in done:
                continue
            done.add(u)
            if u == target:
                return path
            if path and u < first_thru:
                continue
            for li in self.out.get(u, ()):
                v = links[li].head
                if li in blocked_links or v in blocked_nodes or v in done:
                    continue
                heapq.heappush(heap, (dist + links[li].b, path + (li,), v))
        return None


def k_shortest_paths(network: Network, origin: int, dest: int, k: int, graph: _Graph | None = None) -> list[tuple[int, ...]]:
    """Yen's algorithm for the ``k`` cheapest loop-free paths under free-flow cost."""
    graph = graph or _Graph(network)
    first = graph.shortest(origin, dest)
    if first is None:
        return []
    accepted = [first]
    seen = {first}
    candidates: list[tuple[float, tuple[int, ...]]] = []
    links = network.links
    while len(accepted) < k:
        prev = accepted[-1]
        nodes = [links[prev[0]].tail] + [links[i].head for i in prev]
        for i in range(len(prev)):
            root = prev[:i]
            spur_node = nodes[i]
            blocked_links = {p[i] for p in accepted if len(p) > i and p[:i] == root}
            blocked_nodes = set(nodes[:i])
            spur = graph.shortest(spur_node, dest, blocked_nodes, blocked_links)
            if spur is None:
                continue
            path = root + spur
            if path not in seen:
                seen.add(path)
                heapq.heappush(candidates, (_path_cost(network, path), path))
        if not candidates:
            break
        accepted.append(heapq.heappop(candidates)[1])
    return accepted


def generate_routes(network: Network, k: int) -> Network:
    """Attach the ``k`` free-flow-cheapest loop-free routes of every OD pair.

    OD pairs with fewer than ``k`` paths keep all of them and raise a
    ``RouteShortfallWarning``; a disconnected pair is an error.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    graph = _Graph(network)
    routes, route_od = [], []
    shortfall = 0
    for od, (o, d) in enumerate(network.od_pairs):
        paths = k_shortest_paths(network, o, d, k, graph)
        if not paths:
            raise NoRouteError(f"OD pair ({o}, {d}) is disconnected")
        if len(paths) < k:
            shortfall += 1
            warnings.warn(
                f"OD pair ({o}, {d}) has only {len(paths)} loop-free paths (k={k})",
                RouteShortfallWarning,
                stacklevel=2,
            )
        routes.extend(paths)
        route_od.extend([od] * len(paths))
    if shortfall:
        log.warning("%d OD pairs have fewer than %d routes", shortfall, k)
    return network.with_routes(routes, route_od)
