"""Subnetwork partitions: loading link/node group maps and synthetic spatial groups."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from typing import TextIO

import numpy as np

from .network import Network

log = logging.getLogger(__name__)


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class Partition:
    """Disjoint link groups with a sensing cost per group.

    ``unsensed`` lists links that belong to no group; they can never be
    observed by an allocation.
    """

    groups: tuple[tuple[int, ...], ...]
    costs: tuple[float, ...]
    n_links: int
    names: tuple[str, ...] = ()
    unsensed: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.groups) != len(self.costs):
            raise PartitionError("one cost per group required")
        if self.names and len(self.names) != len(self.groups):
            raise PartitionError("one name per group required")
        seen: set[int] = set()
        for g in self.groups:
            for i in g:
                if not 0 <= i < self.n_links:
                    raise PartitionError(f"link id {i} out of range")
                if i in seen:
                    raise PartitionError(f"link {i} appears in more than one group")
                seen.add(i)
        if any(not q > 0 for q in self.costs):
            raise PartitionError("group costs must be positive")

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def q(self) -> np.ndarray:
        return np.array(self.costs, dtype=float)

    def group_of(self) -> np.ndarray:
        """Group index per link, -1 for unsensed links."""
        out = np.full(self.n_links, -1, dtype=int)
        for gi, g in enumerate(self.groups):
            out[list(g)] = gi
        return out

    def to_rows(self) -> list[tuple[int, str, float]]:
        names = self.names or tuple(str(i) for i in range(self.n_groups))
        rows = []
        for gi, g in enumerate(self.groups):
            rows.extend((i, names[gi], self.costs[gi]) for i in g)
        return sorted(rows)

    def write_csv(self, stream: TextIO):
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["link_id", "group_id", "cost"])
        for row in self.to_rows():
            w.writerow(row)


def _group_rows(rows, n_links):
    """Turn (link, group_key, cost|None) rows into a Partition."""
    seen: dict[int, str] = {}
    order: list[str] = []
    members: dict[str, list[int]] = {}
    costs: dict[str, float] = {}
    for link, key, cost in rows:
        if link in seen:
            raise PartitionError(f"link {link} mapped twice")
        seen[link] = key
        if key not in members:
            order.append(key)
            members[key] = []
        members[key].append(link)
        if cost is not None:
            if key in costs and costs[key] != cost:
                raise PartitionError(f"conflicting costs for group {key}")
            costs[key] = cost
    unsensed = tuple(i for i in range(n_links) if i not in seen)
    if unsensed:
        warnings.warn(f"{len(unsensed)} links are not mapped to any group and cannot be sensed", stacklevel=3)
    order = sorted(order, key=_natural_key)
    return Partition(
        groups=tuple(tuple(sorted(members[k])) for k in order),
        costs=tuple(costs.get(k, 1.0) for k in order),
        n_links=n_links,
        names=tuple(order),
        unsensed=unsensed,
    )


def _natural_key(s: str):
    try:
        return (0, float(s), s)
    except ValueError:
        return (1, 0.0, s)


def load_partition(map_file: TextIO, network: Network) -> Partition:
    """Read ``link_id,group_id[,cost]`` or ``node_id,group_id[,cost]`` rows.

    The first column header decides the keying; node-keyed maps assign each
    link to the group of its tail node. Missing cost means unit cost.
    """
    reader = csv.reader(row for row in map_file if row.strip() and not row.startswith("#"))
    rows = list(reader)
    if not rows:
        raise PartitionError("empty partition file")
    header = [h.strip().lower() for h in rows[0]]
    if header[0] in ("link_id", "node_id"):
        by_node = header[0] == "node_id"
        rows = rows[1:]
    else:
        by_node = False

    parsed = []
    for r in rows:
        key_id = int(r[0])
        cost = float(r[2]) if len(r) > 2 and r[2].strip() else None
        parsed.append((key_id, r[1].strip(), cost))

    if not by_node:
        for link, _, _ in parsed:
            if not 0 <= link < network.n_links:
                raise PartitionError(f"link id {link} out of range")
        return _group_rows(parsed, network.n_links)

    node_group: dict[int, tuple[str, float | None]] = {}
    for node, key, cost in parsed:
        if node in node_group:
            raise PartitionError(f"node {node} mapped twice")
        node_group[node] = (key, cost)
    link_rows = []
    for i, lk in enumerate(network.links):
        if lk.tail in node_group:
            key, cost = node_group[lk.tail]
            link_rows.append((i, key, cost))
    return _group_rows(link_rows, network.n_links)


def synth_partition(network: Network, n_groups: int, seed: int = 0, max_iter: int = 300) -> Partition:
    """Spatial k-means on link midpoints; a stand-in for zip-code areas.

    Groups are numbered by the lowest link id they contain. Empty clusters
    are re-seeded from the point of the largest cluster farthest from its
    center.
    """
    if n_groups < 1:
        raise ValueError("n_groups must be >= 1")
    if not network.coords:
        raise PartitionError("network has no node coordinates")
    try:
        pts = np.array(
            [
                [(network.coords[lk.tail][0] + network.coords[lk.head][0]) / 2,
                 (network.coords[lk.tail][1] + network.coords[lk.head][1]) / 2]
                for lk in network.links
            ]
        )
    except KeyError as e:
        raise PartitionError(f"missing coordinates for node {e.args[0]}") from None
    n = len(pts)
    if n_groups > n:
        raise PartitionError(f"cannot form {n_groups} groups from {n} links")

    rng = np.random.default_rng(seed)
    # k-means++ seeding
    centers = [pts[rng.integers(n)]]
    for _ in range(1, n_groups):
        d2 = np.min([np.sum((pts - c) ** 2, axis=1) for c in centers], axis=0)
        total = d2.sum()
        idx = rng.integers(n) if total == 0 else rng.choice(n, p=d2 / total)
        centers.append(pts[idx])
    centers = np.array(centers, dtype=float)

    labels = np.full(n, -1)
    for _ in range(max_iter):
        dist = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = dist.argmin(axis=1)
        counts = np.bincount(new, minlength=n_groups)
        for g in np.flatnonzero(counts == 0):
            big = np.bincount(new, minlength=n_groups).argmax()
            members = np.flatnonzero(new == big)
            far = members[np.argmax(dist[members, big])]
            new[far] = g
        if np.array_equal(new, labels):
            break
        labels = new
        for g in range(n_groups):
            centers[g] = pts[labels == g].mean(axis=0)

    groups = [tuple(int(i) for i in np.flatnonzero(labels == g)) for g in range(n_groups)]
    groups.sort(key=lambda g: g[0])
    return Partition(groups=tuple(groups), costs=(1.0,) * n_groups, n_links=n,
                     names=tuple(str(i) for i in range(n_groups)))
