"""Adaptive large neighborhood search over the trip graph: destroy/build
operator families with roulette-wheel adaptation, 2-opt ordering search,
simulated-annealing acceptance, and a capped solution pool."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .embedding import EmbeddingModel
from .graph import PoiGraph

WEIGHT_FLOOR = 1e-6

DESTROY_OPS = ("random", "least_profit", "most_cost", "shaw")
BUILD_OPS = ("most_profit", "least_cost", "most_similarity", "highest_potential")


@dataclass
class AlnsConfig:
    runs: int = 5
    iterations: int = 1000
    removal_fraction: float = 0.2
    randomness: float = 6.0  # exponent; larger = more deterministic removals
    scores: tuple[float, ...] = (10.0, 5.0, 3.0, 1.0, 0.0)
    reaction: float = 0.9
    temperature: float = 0.3
    cooling: float = 0.9995
    pool_size: int = 10
    rng_seed: int = 42

    def __post_init__(self):
        if not 0 < self.removal_fraction <= 1:
            raise ValueError("removal fraction must be in (0, 1]")
        if any(a <= b for a, b in zip(self.scores, self.scores[1:])):
            raise ValueError("scenario scores must be strictly decreasing")
        if not 0 <= self.reaction <= 1:
            raise ValueError("reaction factor must be in [0, 1]")
        if not 0 < self.cooling < 1:
            raise ValueError("cooling factor must be in (0, 1)")
        if self.temperature <= 0 or self.pool_size < 1:
            raise ValueError("temperature must be > 0 and pool size >= 1")


@dataclass
class SolutionPool:
    capacity: int
    entries: list[tuple[tuple[int, ...], float]] = field(default_factory=list)

    def insert(self, trip: Sequence[int], score: float):
        key = tuple(trip)
        for t, _ in self.entries:
            if t == key:
                return
        self.entries.append((key, score))
        self.entries.sort(key=lambda e: (-e[1], e[0]))
        del self.entries[self.capacity:]

    def select(self, rng: np.random.Generator) -> tuple[int, ...]:
        """Sample a trip with probability proportional to its score;
        uniform when every score is zero."""
        if not self.entries:
            raise ValueError("empty solution pool")
        scores = np.array([s for _, s in self.entries])
        total = scores.sum()
        if total <= 0:
            idx = rng.integers(len(self.entries))
        else:
            idx = rng.choice(len(self.entries), p=scores / total)
        return self.entries[idx][0]

    def best(self) -> tuple[tuple[int, ...], float]:
        return self.entries[0]


def update_weight(weight: float, score: float, reaction: float) -> float:
    """Exponential blend of the old weight and the latest score, floored."""
    return max(reaction * weight + (1.0 - reaction) * score, WEIGHT_FLOOR)


def roulette_select(weights: dict[str, float], rng: np.random.Generator) -> str:
    total = 0.0
    for w in weights.values():
        total += max(w, WEIGHT_FLOOR)
    x = rng.random() * total
    acc = 0.0
    for name, w in weights.items():
        acc += max(w, WEIGHT_FLOOR)
        if x < acc:
            return name
    return name  # guard against x == total


def removal_count(trip_len: int, fraction: float) -> int:
    return math.ceil(fraction * max(trip_len - 2, 0))


def insertion_cost(graph: PoiGraph, trip: Sequence[int], v: int, pos: int) -> float:
    a, b = trip[pos - 1], trip[pos]
    cost = graph.cost
    return cost[a][v] + cost[v][b] - cost[a][b]


def cheapest_insertion(graph: PoiGraph, trip: Sequence[int], v: int) -> tuple[int, float]:
    cost = graph.cost
    into_v, out_v = [row[v] for row in cost], cost[v]
    best_pos, best_delta = 1, math.inf
    for pos in range(1, len(trip)):
        a, b = trip[pos - 1], trip[pos]
        delta = into_v[a] + out_v[b] - cost[a][b]
        if delta < best_delta:
            best_pos, best_delta = pos, delta
    return best_pos, best_delta


def profit_increment(graph: PoiGraph, trip: Sequence[int], v: int) -> float:
    row = graph.eprofit[v]
    return graph.vprofit[v] + sum(row[u] for u in trip[1:-1])


def removal_cost_delta(graph: PoiGraph, trip: Sequence[int], pos: int) -> float:
    a, v, b = trip[pos - 1], trip[pos], trip[pos + 1]
    cost = graph.cost
    return cost[a][v] + cost[v][b] - cost[a][b]


def removal_profit_delta(graph: PoiGraph, trip: Sequence[int], pos: int) -> float:
    v = trip[pos]
    row = graph.eprofit[v]
    return graph.vprofit[v] + sum(row[u] for i, u in enumerate(trip[1:-1], start=1)
                                  if i != pos)


def randomized_index(count: int, randomness: float, fraction: float,
                     rng: np.random.Generator) -> int:
    x = rng.uniform(0.0, 1.0)
    idx = int((x ** (randomness * fraction)) * count)
    return min(idx, count - 1)


def greedy_extend(graph: PoiGraph, trip: Sequence[int],
                  choose: Callable[[list[int], list[tuple[int, int, float]]],
                                   tuple[int, int, float] | None]) -> list[int]:
    """Insert vertices (cheapest position each) chosen by `choose` from the
    fitting candidates, until none fits. `choose` sees the current trip and
    options (vertex, position, cost delta)."""
    trip = list(trip)
    used = set(trip)
    cost = graph.trip_cost(trip)
    while True:
        options = []
        for v in graph.interior():
            if v in used:
                continue
            pos, delta = cheapest_insertion(graph, trip, v)
            if cost + delta <= graph.budget:
                options.append((v, pos, delta))
        picked = choose(trip, options) if options else None
        if picked is None:
            break
        v, pos, delta = picked
        trip.insert(pos, v)
        used.add(v)
        cost += delta
    return trip


def _choose_most_profit(graph: PoiGraph):
    return lambda trip, opts: max(
        opts, key=lambda o: (profit_increment(graph, trip, o[0]), -o[0]))


def _choose_least_cost(graph: PoiGraph):
    del graph
    return lambda trip, opts: min(opts, key=lambda o: (o[2], o[0]))


def _choose_best_ratio(graph: PoiGraph):
    def ratio(trip, o):
        gain = profit_increment(graph, trip, o[0])
        return gain / o[2] if o[2] > 0 else math.inf
    return lambda trip, opts: max(opts, key=lambda o: (ratio(trip, o), -o[0]))


def init_pool(graph: PoiGraph, capacity: int) -> SolutionPool:
    """Seed the pool with three greedy trips: best profit increment, least cost
    increment, and best profit/cost ratio."""
    direct = [graph.start, graph.end]
    if not graph.feasible(direct).ok:
        raise ValueError("no feasible trip: the direct start-end trip exceeds the budget")
    pool = SolutionPool(capacity)
    for strategy in (_choose_most_profit, _choose_least_cost, _choose_best_ratio):
        trip = greedy_extend(graph, direct, strategy(graph))
        pool.insert(trip, graph.trip_objective(trip))
    return pool


def destroy(graph: PoiGraph, trip: Sequence[int], operator: str,
            config: AlnsConfig, rng: np.random.Generator) -> list[int]:
    """Remove exactly ceil(fraction * interior size) interior vertices."""
    trip = list(trip)
    n_rm = removal_count(len(trip), config.removal_fraction)
    if n_rm == 0:
        return trip
    if operator == "random":
        positions = sorted(rng.choice(np.arange(1, len(trip) - 1), size=n_rm,
                                      replace=False), reverse=True)
        for pos in positions:
            del trip[pos]
        return trip
    if operator == "shaw":
        pivot_pos = int(rng.integers(1, len(trip) - 1))
        pivot = trip[pivot_pos]
        for _ in range(n_rm):
            interior = trip[1:-1]
            candidates = [v for v in interior if v != pivot]
            if not candidates:
                trip.remove(pivot)
                continue
            # proximity by outgoing edge cost from the pivot
            candidates.sort(key=lambda v: (graph.cost[pivot][v], v))
            idx = randomized_index(len(candidates), config.randomness,
                                   config.removal_fraction, rng)
            trip.remove(candidates[idx])
        return trip
    for _ in range(n_rm):
        interior_pos = list(range(1, len(trip) - 1))
        if operator == "least_profit":
            interior_pos.sort(key=lambda p: (removal_profit_delta(graph, trip, p), trip[p]))
        elif operator == "most_cost":
            interior_pos.sort(key=lambda p: (-removal_cost_delta(graph, trip, p), trip[p]))
        else:
            raise ValueError(f"unknown destroy operator: {operator}")
        idx = randomized_index(len(interior_pos), config.randomness,
                               config.removal_fraction, rng)
        del trip[interior_pos[idx]]
    return trip


def build(graph: PoiGraph, trip: Sequence[int], operator: str,
          rng: np.random.Generator,
          model: EmbeddingModel | None = None) -> list[int]:
    """Insert unvisited vertices (cheapest position each) per the operator's
    rule until no single insertion fits."""
    trip = list(trip)
    if operator == "most_profit":
        return greedy_extend(graph, trip, _choose_most_profit(graph))
    if operator == "least_cost":
        return greedy_extend(graph, trip, _choose_least_cost(graph))
    if operator == "most_similarity":
        pivot = trip[int(rng.integers(len(trip)))]
        if model is not None:
            pivot_vec = model.vec(graph.poi_ids[pivot])
            dist = {v: float(np.linalg.norm(pivot_vec - model.vec(graph.poi_ids[v])))
                    for v in graph.interior()}
        else:
            dist = {v: graph.cost[pivot][v] for v in graph.interior()}
        return greedy_extend(graph, trip, lambda cur, opts: min(
            opts, key=lambda o: (dist[o[0]], o[0])))
    if operator == "highest_potential":
        def choose(cur, opts):
            cost = graph.trip_cost(cur)
            best = None
            for v, pos, delta in opts:
                gain_v = profit_increment(graph, cur, v)
                candidate = list(cur)
                candidate.insert(pos, v)
                for w, _, _ in opts:
                    if w == v:
                        continue
                    _, delta_w = cheapest_insertion(graph, candidate, w)
                    if cost + delta + delta_w > graph.budget:
                        continue
                    pair_gain = gain_v + profit_increment(graph, candidate, w)
                    key = (pair_gain, -v)
                    if best is None or key > best[0]:
                        best = (key, (v, pos, delta))
            if best is not None:
                return best[1]
            # no feasible pair: fall back to the single best profit insertion
            return max(opts, key=lambda o: (profit_increment(graph, cur, o[0]), -o[0]))
        return greedy_extend(graph, trip, choose)
    raise ValueError(f"unknown build operator: {operator}")


def local_search(graph: PoiGraph, trip: Sequence[int]) -> list[int]:
    """2-opt: reverse interior segments whenever that strictly lowers time cost.

    The visited set is unchanged, so the trip score is preserved.
    """
    trip = list(trip)
    if len(trip) <= 3:
        return trip
    cost = graph.cost
    improved = True
    while improved:
        improved = False
        for i in range(len(trip) - 3):
            for j in range(i + 2, len(trip) - 1):
                a, b = trip[i], trip[i + 1]
                c, d = trip[j], trip[j + 1]
                old = cost[a][b] + cost[c][d]
                new = cost[a][c] + cost[b][d]
                segment = trip[i + 1:j + 1]
                internal_old = sum(cost[segment[k]][segment[k + 1]]
                                   for k in range(len(segment) - 1))
                internal_new = sum(cost[segment[k + 1]][segment[k]]
                                   for k in range(len(segment) - 1))
                if new + internal_new < old + internal_old - 1e-12:
                    trip[i + 1:j + 1] = segment[::-1]
                    improved = True
    return trip


def sa_accept(score_new: float, score_old: float, temperature: float,
              rng: np.random.Generator) -> bool:
    """Accept improvements always; accept worse trips with probability
    exp((new - old) / temperature)."""
    if score_new > score_old:
        return True
    x = rng.uniform(0.0, 1.0)
    return x < math.exp((score_new - score_old) / temperature)


@dataclass
class AlnsResult:
    trip: list[int]
    score: float
    trace: list[dict] = field(default_factory=list)


def classify_scenario(accepted: bool, score_new: float, score_cur: float,
                      global_best: float, run_best: float) -> int:
    """Index into the scoring vector; the highest-value scenario wins."""
    if not accepted:
        return 4
    if score_new > global_best:
        return 0
    if score_new > run_best:
        return 1
    if score_new == run_best:
        return 2
    if score_new < score_cur:
        return 3
    return 4


def run_alns(graph: PoiGraph, config: AlnsConfig | None = None,
             model: EmbeddingModel | None = None,
             collect_trace: bool = False) -> AlnsResult:
    """Multi-run ALNS (seeded, deterministic); returns the best trip found."""
    config = config or AlnsConfig()
    pool = init_pool(graph, config.pool_size)
    global_trip, global_score = pool.best()
    trace: list[dict] = []

    for run in range(config.runs):
        rng = np.random.default_rng(config.rng_seed + run)
        current = list(pool.select(rng))
        score_cur = graph.trip_objective(current)
        run_trip, run_score = list(current), score_cur
        temp = config.temperature
        d_weights = {op: 1.0 for op in DESTROY_OPS}
        b_weights = {op: 1.0 for op in BUILD_OPS}

        for it in range(config.iterations):
            d_op = roulette_select(d_weights, rng)
            b_op = roulette_select(b_weights, rng)
            partial = destroy(graph, current, d_op, config, rng)
            candidate = build(graph, partial, b_op, rng, model)
            candidate = local_search(graph, candidate)
            assert graph.feasible(candidate).ok, "ALNS produced an infeasible trip"
            score_new = graph.trip_objective(candidate)
            accepted = sa_accept(score_new, score_cur, temp, rng)
            scenario = classify_scenario(accepted, score_new, score_cur,
                                         global_score, run_score)
            if accepted:
                current, score_cur = candidate, score_new
                if score_cur > run_score:
                    run_trip, run_score = list(current), score_cur
                if score_cur > global_score:
                    global_trip, global_score = tuple(current), score_cur
            temp *= config.cooling
            pi = config.scores[scenario]
            d_weights[d_op] = update_weight(d_weights[d_op], pi, config.reaction)
            b_weights[b_op] = update_weight(b_weights[b_op], pi, config.reaction)
            if collect_trace:
                trace.append({"run": run, "iter": it, "destroy_op": d_op,
                              "build_op": b_op, "score": score_new,
                              "accepted": accepted, "temp": temp})
        pool.insert(run_trip, run_score)

    return AlnsResult(list(global_trip), global_score, trace)


def write_trace_csv(trace: list[dict], sink) -> None:
    sink.write("run,iter,destroy_op,build_op,score,accepted,temp\n")
    for row in trace:
        sink.write(f"{row['run']},{row['iter']},{row['destroy_op']},"
                   f"{row['build_op']},{row['score']!r},{int(row['accepted'])},"
                   f"{row['temp']!r}\n")
