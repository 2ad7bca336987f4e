"""Directed profit/cost graph for a query: the shared substrate of both solvers."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .checkins import TimeCostModel, UnknownPoiError
from .embedding import EmbeddingModel
from .scoring import Query, ScoreContext


@dataclass(frozen=True)
class Feasibility:
    ok: bool
    reason: str = ""


class PoiGraph:
    """Vertices 0..n-1 with vertex 0 = start POI and vertex n-1 = end POI.

    Vertex profits are query closeness (0 at the endpoints), edge profits
    pairwise similarity, edge costs = visit time of the target plus transit.
    """

    def __init__(self, poi_ids: Sequence[str], vertex_profit: np.ndarray,
                 edge_profit: np.ndarray, edge_cost: np.ndarray,
                 budget: float, start_visit_cost: float):
        self.poi_ids = list(poi_ids)
        self.n = len(poi_ids)
        self.vertex_profit = vertex_profit
        self.edge_profit = edge_profit
        self.edge_cost = edge_cost
        self.budget = float(budget)
        self.start_visit_cost = float(start_visit_cost)
        if self.n < 2:
            raise ValueError("graph needs at least start and end vertices")
        if vertex_profit[0] != 0.0 or vertex_profit[self.n - 1] != 0.0:
            raise ValueError("endpoint profits must be zero")
        # plain-list views for the solver hot paths (numpy scalar indexing
        # dominates the profile otherwise)
        self.cost = [[float(c) for c in row] for row in edge_cost]
        self.eprofit = [[float(p) for p in row] for row in edge_profit]
        self.vprofit = [float(p) for p in vertex_profit]

    @property
    def start(self) -> int:
        return 0

    @property
    def end(self) -> int:
        return self.n - 1

    def interior(self) -> range:
        return range(1, self.n - 1)

    def trip_cost(self, trip: Sequence[int]) -> float:
        cost = self.start_visit_cost
        for a, b in zip(trip, trip[1:]):
            cost += self.cost[a][b]
        return cost

    def trip_objective(self, trip: Sequence[int]) -> float:
        """Interior vertex profits plus unordered interior-pair edge profits."""
        interior = list(trip[1:-1])
        total = sum(self.vprofit[v] for v in interior)
        for i in range(len(interior)):
            for j in range(i + 1, len(interior)):
                total += self.eprofit[interior[i]][interior[j]]
        return total

    def feasible(self, trip: Sequence[int]) -> Feasibility:
        if len(trip) < 2 or trip[0] != self.start:
            return Feasibility(False, "start")
        if trip[-1] != self.end:
            return Feasibility(False, "end")
        if len(set(trip)) != len(trip):
            return Feasibility(False, "repeat")
        cost = self.trip_cost(trip)
        if cost > self.budget:
            return Feasibility(False, f"budget ({cost:.1f} > {self.budget:.1f})")
        return Feasibility(True)

    def dump(self, sink: io.TextIOBase):
        for i in range(self.n):
            sink.write(f"V {i + 1} {self.poi_ids[i]} {float(self.vertex_profit[i])!r}\n")
        for i in range(self.n):
            for j in range(self.n):
                if i != j:
                    sink.write(f"E {i + 1} {j + 1} {float(self.edge_profit[i, j])!r} "
                               f"{float(self.edge_cost[i, j])!r}\n")


def reachable_candidates(query: Query, tcm: TimeCostModel,
                         pool: Sequence[str]) -> list[str]:
    """POIs that could appear in some feasible trip: a round-trip detour through
    the POI must fit the budget."""
    base = tcm.visit_time(query.start) + tcm.visit_time(query.end)
    keep = []
    for p in sorted(set(pool)):
        if p in (query.start, query.end):
            continue
        detour = (base + tcm.transit_time(query.start, p) + tcm.visit_time(p)
                  + tcm.transit_time(p, query.end))
        if detour <= query.budget:
            keep.append(p)
    return [query.start] + keep + [query.end]


def build_graph(model: EmbeddingModel, ctx: ScoreContext, query: Query,
                tcm: TimeCostModel, candidates: Sequence[str]) -> PoiGraph:
    """Materialize the profit/cost graph over the candidate POIs.

    candidates must contain the start and end POIs; when start == end the POI
    occupies two vertices whose mutual transit time is zero.
    """
    cand = list(candidates)
    if query.start not in cand or query.end not in cand:
        raise ValueError("candidates must include the start and end POIs")
    missing = sorted(p for p in cand if p not in model.poi_vec)
    if missing:
        raise UnknownPoiError(f"candidates missing from the model: {missing}")
    interior = sorted(p for p in set(cand) if p not in (query.start, query.end))
    ids = [query.start] + interior + [query.end]
    n = len(ids)
    vertex_profit = np.zeros(n)
    for i in range(1, n - 1):
        vertex_profit[i] = ctx.closeness(ids[i])
    edge_profit = np.zeros((n, n))
    edge_cost = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if ids[i] != ids[j]:
                edge_profit[i, j] = ctx.ncsim(ids[i], ids[j])
                transit = tcm.transit_time(ids[i], ids[j])
            else:
                # two vertices for one POI (start == end): zero transit, zero
                # self-similarity
                transit = 0.0
            edge_cost[i, j] = tcm.visit_time(ids[j]) + transit
    return PoiGraph(ids, vertex_profit, edge_profit, edge_cost,
                    query.budget, tcm.visit_time(query.start))
