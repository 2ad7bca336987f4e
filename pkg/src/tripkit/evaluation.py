"""Leave-one-out evaluation: folds, six quality metrics, Random/Pop baselines,
and the embedding ablation drivers."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .alns import AlnsConfig, cheapest_insertion, run_alns
from .checkins import TimeCostModel, Trip, compute_visit_times
from .embedding import EmbeddingModel, TrainConfig, train
from .exact import solve_exact
from .graph import PoiGraph, build_graph, reachable_candidates
from .scoring import Query, ScoreContext


@dataclass(frozen=True)
class Fold:
    test_trip: Trip
    query: Query
    training: tuple[Trip, ...]


@dataclass
class EvalResult:
    recall: float
    precision: float
    f1: float
    recall_s: float
    precision_s: float
    f1_s: float
    ms: float = 0.0
    solver: str = ""


def _f1(recall: float, precision: float) -> float:
    if recall + precision == 0:
        return 0.0
    return 2 * recall * precision / (recall + precision)


def metrics(trip: Sequence[str], ref: Sequence[str]) -> EvalResult:
    """Recall/precision/F1 over interior POIs, plus endpoint-inclusive variants."""
    if not trip or not ref or trip[0] != ref[0] or trip[-1] != ref[-1]:
        raise ValueError("trips must share their start and end POIs")
    a, b = set(trip[1:-1]), set(ref[1:-1])
    hit = len(a & b)
    recall = hit / len(b) if b else 0.0
    precision = hit / len(a) if a else 0.0
    a_s, b_s = set(trip), set(ref)
    hit_s = len(a_s & b_s)
    recall_s = hit_s / len(b_s)
    precision_s = hit_s / len(a_s)
    return EvalResult(recall, precision, _f1(recall, precision),
                      recall_s, precision_s, _f1(recall_s, precision_s))


def make_folds(trips: Sequence[Trip], pois=None,
               walking_speed: float = 4.0) -> list[Fold]:
    """One fold per trip with >= 3 distinct-POI visits; budget = the trip's own
    time cost under the full-corpus visit-time model."""
    tcm = TimeCostModel(compute_visit_times(trips), pois=pois or {},
                        walking_speed=walking_speed)
    folds = []
    for i, trip in enumerate(trips):
        ids = trip.poi_ids
        if len(ids) < 3 or len(set(ids)) < 3:
            continue
        query = Query(trip.user_id, ids[0], ids[-1], _trip_cost_with_transit(tcm, trip))
        training = tuple(t for j, t in enumerate(trips) if j != i)
        folds.append(Fold(trip, query, training))
    if not folds:
        raise ValueError("no trips with at least 3 POIs")
    return folds


def _trip_cost_with_transit(tcm: TimeCostModel, trip: Trip) -> float:
    return tcm.trip_cost(trip.poi_ids)


def baseline_random(graph: PoiGraph, rng: np.random.Generator) -> list[int]:
    """Insert uniformly random unvisited candidates at the cheapest position;
    stop when the chosen candidate does not fit."""
    trip = [graph.start, graph.end]
    used = set(trip)
    cost = graph.trip_cost(trip)
    while True:
        candidates = [v for v in graph.interior() if v not in used]
        if not candidates:
            return trip
        v = candidates[int(rng.integers(len(candidates)))]
        pos, delta = cheapest_insertion(graph, trip, v)
        if cost + delta > graph.budget:
            return trip
        trip.insert(pos, v)
        used.add(v)
        cost += delta


def baseline_pop(graph: PoiGraph, visit_counts: dict[str, int],
                 skip_mode: bool = False) -> list[int]:
    """Insert the most-visited unvisited candidate (ties by poi_id); stop when
    the selected candidate does not fit (or skip it with skip_mode)."""
    trip = [graph.start, graph.end]
    used = set(trip)
    cost = graph.trip_cost(trip)
    while True:
        candidates = [v for v in graph.interior() if v not in used]
        candidates.sort(key=lambda v: (-visit_counts.get(graph.poi_ids[v], 0),
                                       graph.poi_ids[v]))
        inserted = False
        for v in candidates:
            pos, delta = cheapest_insertion(graph, trip, v)
            if cost + delta <= graph.budget:
                trip.insert(pos, v)
                used.add(v)
                cost += delta
                inserted = True
                break
            if not skip_mode:
                return trip
        if not inserted:
            return trip


def ablation_train(trips: Sequence[Trip], config: TrainConfig,
                   mode: str = "full") -> EmbeddingModel:
    """Train the full model or a restricted variant (pop-only / pop+pref)."""
    return train(trips, replace(config, mode=mode))


def visit_count_by_poi(trips: Sequence[Trip]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for t in trips:
        for v in t.visits:
            counts[v.poi_id] = counts.get(v.poi_id, 0) + 1
    return counts


@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)

    def mean_by_solver(self) -> dict[str, EvalResult]:
        out: dict[str, EvalResult] = {}
        by_solver: dict[str, list[dict]] = {}
        for row in self.rows:
            by_solver.setdefault(row["solver"], []).append(row)
        for solver, rows in by_solver.items():
            def mean(key):
                return float(np.mean([r[key] for r in rows]))
            out[solver] = EvalResult(mean("recall"), mean("precision"), mean("f1"),
                                     mean("recall_s"), mean("precision_s"),
                                     mean("f1_s"), mean("ms"), solver)
        return out

    def write_csv(self, sink):
        sink.write("fold_id,solver,recall,precision,f1,recall_s,precision_s,f1_s,ms\n")
        for r in self.rows:
            sink.write(f"{r['fold_id']},{r['solver']},{r['recall']!r},"
                       f"{r['precision']!r},{r['f1']!r},{r['recall_s']!r},"
                       f"{r['precision_s']!r},{r['f1_s']!r},{r['ms']:.3f}\n")

    def summary_table(self) -> str:
        means = self.mean_by_solver()
        header = f"{'solver':<16}{'recall':>9}{'prec':>9}{'f1':>9}{'rec*':>9}{'prec*':>9}{'f1*':>9}{'ms':>10}"
        lines = [header]
        for solver in sorted(means):
            m = means[solver]
            lines.append(f"{solver:<16}{m.recall:>9.3f}{m.precision:>9.3f}{m.f1:>9.3f}"
                         f"{m.recall_s:>9.3f}{m.precision_s:>9.3f}{m.f1_s:>9.3f}{m.ms:>10.1f}")
        return "\n".join(lines)


SolverFn = Callable[[PoiGraph, EmbeddingModel, np.random.Generator], Sequence[int]]


def make_solvers(train_trips_counts: dict[str, int],
                 alns_config: AlnsConfig) -> dict[str, SolverFn]:
    def random_solver(graph, model, rng):
        return baseline_random(graph, rng)

    def pop_solver(graph, model, rng):
        return baseline_pop(graph, train_trips_counts)

    def alns_solver(graph, model, rng):
        return run_alns(graph, alns_config, model).trip

    def exact_solver(graph, model, rng):
        result = solve_exact(graph)
        if result is None:
            raise ValueError("no feasible trip")
        return result.trip

    return {"random": random_solver, "pop": pop_solver,
            "alns": alns_solver, "exact": exact_solver}


def evaluate(trips: Sequence[Trip], solvers: Sequence[str],
             train_config: TrainConfig | None = None,
             alns_config: AlnsConfig | None = None,
             mode: str = "full", rng_seed: int = 42,
             shared_model: bool = False,
             walking_speed: float = 4.0,
             pois=None) -> EvalReport:
    """Per-fold train + solve + score. shared_model trains once on the full
    corpus (faster, approximate leave-one-out)."""
    train_config = train_config or TrainConfig()
    alns_config = alns_config or AlnsConfig()
    folds = make_folds(trips, pois=pois, walking_speed=walking_speed)
    report = EvalReport()
    cached_model = ablation_train(trips, train_config, mode) if shared_model else None
    for fold_id, fold in enumerate(folds):
        rng = np.random.default_rng(rng_seed + fold_id)
        try:
            training = fold.training if not shared_model else trips
            model = cached_model or ablation_train(list(fold.training), train_config, mode)
            counts = visit_count_by_poi(list(training))
            visit_times = compute_visit_times(list(training))
            for p in fold.test_trip.poi_ids:
                visit_times.setdefault(p, 0.0)
            tcm = TimeCostModel(visit_times, pois=pois or {}, walking_speed=walking_speed)
            if fold.query.user_id not in model.user_vec or \
                    fold.query.start not in model.poi_vec or \
                    fold.query.end not in model.poi_vec:
                raise ValueError("query user or endpoints unseen in training data")
            ctx = ScoreContext(model, fold.query)
            candidates = reachable_candidates(fold.query, tcm, model.poi_ids)
            graph = build_graph(model, ctx, fold.query, tcm, candidates)
            solver_fns = make_solvers(counts, alns_config)
            for name in solvers:
                t0 = time.perf_counter()
                trip_idx = solver_fns[name](graph, model, rng)
                ms = (time.perf_counter() - t0) * 1000.0
                trip_pois = [graph.poi_ids[v] for v in trip_idx]
                m = metrics(trip_pois, list(fold.test_trip.poi_ids))
                report.rows.append({"fold_id": fold_id, "solver": name,
                                    "recall": m.recall, "precision": m.precision,
                                    "f1": m.f1, "recall_s": m.recall_s,
                                    "precision_s": m.precision_s, "f1_s": m.f1_s,
                                    "ms": ms})
        except Exception as exc:  # noqa: BLE001 - fold errors are reported, not fatal
            report.errors.append({"fold_id": fold_id, "error": str(exc)})
    return report
