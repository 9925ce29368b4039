"""Heap-based ranking of edge servers as migration targets.

Servers are keyed by a fitness value that rewards available CPU and trust
and penalizes load pressure, each term min-max normalized over the fleet.
The ranking is kept in an array-backed d-ary max-heap.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Tuple

import numpy as np

from trust.servers import EdgeServer, NoServers, cpu_availability, load_ratio

DEFAULT_ARITY = 3


class NoFeasibleTarget(LookupError):
    pass


@dataclass(frozen=True)
class FitnessWeights:
    w1: float = 1 / 3
    w2: float = 1 / 3
    w3: float = 1 / 3

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3) < 0 or abs(self.w1 + self.w2 + self.w3 - 1) > 1e-9:
            raise ValueError(f'fitness weights must be non-negative and sum to 1: {self}')


@dataclass(frozen=True)
class FleetStats:
    size: int
    ra_min: float
    ra_max: float
    pressure_min: float
    pressure_max: float


def fleet_stats(servers: Iterable[EdgeServer]) -> FleetStats:
    servers = list(servers)
    if not servers:
        raise NoServers('no servers to summarize')
    ra = [cpu_availability(s) for s in servers]
    pressure = [load_ratio(s).pressure for s in servers]
    return FleetStats(len(servers), min(ra), max(ra), min(pressure), max(pressure))


def min_max(value: float, low: float, high: float, size: int, flat: float = 1.0) -> float:
    """Fleet-relative position of value in [low, high]. A fleet of one
    scores 1; a flat column of a larger fleet scores `flat`."""
    if size == 1:
        return 1.0
    if high == low:
        return flat
    return (value - low) / (high - low)


def fitness(server: EdgeServer, stats: FleetStats, weights: FitnessWeights = FitnessWeights()) -> float:
    ra = min_max(cpu_availability(server), stats.ra_min, stats.ra_max, stats.size)
    pressure = min_max(load_ratio(server).pressure, stats.pressure_min, stats.pressure_max, stats.size, flat=0.0)
    return weights.w1 * ra + weights.w2 * server.trust - weights.w3 * pressure


def fleet_fitness(servers: Iterable[EdgeServer], weights: FitnessWeights = FitnessWeights()) -> Dict[str, float]:
    servers = list(servers)
    stats = fleet_stats(servers)
    return {s.id: fitness(s, stats, weights) for s in servers}


@dataclass(frozen=True)
class HeapNode:
    key: float
    index: str
    depth: int


class Heap:
    """Array-backed d-ary max-heap of (fitness, server id); equal keys
    order by lower id."""

    def __init__(self, arity: int = DEFAULT_ARITY):
        if arity < 2:
            raise ValueError(f'heap arity must be at least 2: {arity}')
        self.arity = arity
        self.entries: List[Tuple[float, str]] = list()

    def __len__(self) -> int:
        return len(self.entries)

    @staticmethod
    def before(a: Tuple[float, str], b: Tuple[float, str]) -> bool:
        return a[0] > b[0] or (a[0] == b[0] and a[1] < b[1])

    def parent(self, i: int) -> int:
        return (i - 1) // self.arity

    def children(self, i: int) -> range:
        first = self.arity * i + 1
        return range(first, min(first + self.arity, len(self.entries)))

    def depth(self, i: int) -> int:
        d = 0
        while i > 0:
            i = self.parent(i)
            d += 1
        return d

    def push(self, key: float, index: str) -> None:
        if not np.isfinite(key):
            raise ValueError(f'heap key must be finite: {key}')
        self.entries.append((key, index))
        i = len(self.entries) - 1
        while i > 0 and self.before(self.entries[i], self.entries[self.parent(i)]):
            p = self.parent(i)
            self.entries[i], self.entries[p] = self.entries[p], self.entries[i]
            i = p

    def pop(self) -> HeapNode:
        if not self.entries:
            raise IndexError('pop from an empty heap')
        top = self.entries[0]
        last = self.entries.pop()
        if self.entries:
            self.entries[0] = last
            i = 0
            while True:
                best = i
                for c in self.children(i):
                    if self.before(self.entries[c], self.entries[best]):
                        best = c
                if best == i:
                    break
                self.entries[i], self.entries[best] = self.entries[best], self.entries[i]
                i = best
        return HeapNode(top[0], top[1], 0)

    def root(self) -> HeapNode:
        if not self.entries:
            raise IndexError('empty heap')
        return HeapNode(self.entries[0][0], self.entries[0][1], 0)

    def nodes(self) -> List[HeapNode]:
        return [HeapNode(key, index, self.depth(i)) for i, (key, index) in enumerate(self.entries)]

    def is_valid(self) -> bool:
        return all(not self.before(self.entries[i], self.entries[self.parent(i)])
                   for i in range(1, len(self.entries)))


@dataclass
class FleetHeap:
    heap: Heap
    fitness: Dict[str, float]
    avg_fv: float
    root_meets_objectives: bool


def build_heap(servers: Iterable[EdgeServer], weights: FitnessWeights = FitnessWeights(),
               arity: int = DEFAULT_ARITY, threshold: float = None) -> FleetHeap:
    servers = sorted(servers, key=lambda s: s.id)
    if not servers:
        logging.error('Cannot build a heap without servers')
        raise NoServers('no servers to rank')
    values = fleet_fitness(servers, weights)
    heap = Heap(arity)
    for server in servers:
        heap.push(values[server.id], server.id)
    avg_fv = float(np.mean(list(values.values())))
    root = heap.root()
    root_server = next(s for s in servers if s.id == root.index)
    meets = root.key >= avg_fv and (threshold is None or root_server.trust >= threshold)
    if not meets:
        logging.debug(f'Heap root {root.index} does not satisfy every objective; kept as argmax')
    return FleetHeap(heap, values, avg_fv, meets)


def select_target(fleet_heap: FleetHeap, source: EdgeServer, high: Iterable[EdgeServer]) -> EdgeServer:
    """Highest-fitness high-trust server with the source's profile; ties go
    to lower pressure, then lower id."""
    candidates = {s.id: s for s in high if s.profile == source.profile and s.id != source.id}
    ranked = [(-node.key, load_ratio(candidates[node.index]).pressure, node.index)
              for node in fleet_heap.heap.nodes() if node.index in candidates]
    if not ranked:
        logging.debug(f'No feasible migration target for {source.id} (profile {source.profile})')
        raise NoFeasibleTarget(f'no high-trust server with profile {source.profile} for {source.id}')
    return candidates[min(ranked)[2]]
