"""Command-line entry point: ingest, analyze, train, recommend, evaluate, export-lp."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .alns import AlnsConfig, run_alns, write_trace_csv
from .checkins import (CheckinError, TimeCostModel, Trip, PoiVisit, UnknownPoiError,
                       aggregate_visits, compute_visit_times, corpus_stats,
                       extract_trips, impacted_user_ratio, independent_pair_ratio,
                       ingest_checkins, load_distance_matrix, load_pois)
from .embedding import EmbeddingModel, TrainConfig, train
from .evaluation import evaluate
from .exact import build_ilp, solve_exact, write_lp
from .graph import build_graph, reachable_candidates
from .scoring import Query, ScoreContext, check_zpair, compute_zpair

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_INTERNAL = 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def read_config_file(path: str) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def resolve(defaults: dict, config_file: str | None, args: argparse.Namespace) -> dict:
    """Precedence: defaults < config file < command-line flags."""
    values = dict(defaults)
    if config_file:
        file_values = read_config_file(config_file)
        for key in file_values:
            if key in values:
                values[key] = type(values[key])(file_values[key]) \
                    if not isinstance(values[key], bool) else file_values[key].lower() in ("1", "true", "yes")
    for key in values:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return values


def write_manifest(out_path: str, command: str, values: dict):
    lines = [f"command={command}", f"artifact_version={__version__}"]
    lines += [f"{k}={v}" for k, v in sorted(values.items())]
    Path(str(out_path) + ".manifest").write_text("\n".join(lines) + "\n")


def save_corpus(path: str, trips: list[Trip], pois: dict | None = None):
    payload = {
        "version": 1,
        "trips": [{"user_id": t.user_id,
                   "visits": [{"poi_id": v.poi_id, "t_a": v.t_a, "t_d": v.t_d}
                              for v in t.visits]} for t in trips],
        "pois": {p.id: {"lat": p.lat, "lon": p.lon, "category": p.category}
                 for p in (pois or {}).values()},
    }
    Path(path).write_text(json.dumps(payload, indent=None, sort_keys=True))


def load_corpus(path: str):
    from .checkins import Poi
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read corpus file {path}: {exc}")
    trips = [Trip(t["user_id"], tuple(PoiVisit(t["user_id"], v["poi_id"], v["t_a"], v["t_d"])
                                      for v in t["visits"]))
             for t in payload["trips"]]
    pois = {pid: Poi(pid, rec["lat"], rec["lon"], rec.get("category"))
            for pid, rec in payload.get("pois", {}).items()}
    return trips, pois


def cmd_ingest(args) -> int:
    values = resolve({"window": 28800, "gap_mode": False, "skip_bad_rows": False},
                     args.config, args)
    try:
        with open(args.checkins) as fh:
            records, skipped = ingest_checkins(fh, skip_bad_rows=values["skip_bad_rows"])
    except (OSError, CheckinError) as exc:
        raise CliError(f"{args.checkins}: {exc}")
    if not records:
        raise CliError(f"{args.checkins}: no check-in records")
    pois = {}
    if args.pois:
        try:
            with open(args.pois) as fh:
                pois = load_pois(fh)
        except (OSError, CheckinError) as exc:
            raise CliError(f"{args.pois}: {exc}")
    visits = aggregate_visits(records)
    trips = extract_trips(visits, int(values["window"]), gap_mode=values["gap_mode"])
    save_corpus(args.out, trips, pois)
    write_manifest(args.out, "ingest", {**values, "checkins": args.checkins,
                                        "pois": args.pois or "", "skipped_rows": skipped})
    stats = corpus_stats(trips)
    print(f"users          {stats['users']}")
    print(f"poi_visits     {stats['poi_visits']}")
    print(f"trips          {stats['trips']}")
    print(f"pois_per_trip  {stats['pois_per_trip']:.2f}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    values = resolve({"runs": 100, "sample_fraction": 0.5, "significance": 0.05,
                      "seed": 42}, args.config, args)
    trips, _ = load_corpus(args.corpus)
    ipr = independent_pair_ratio(trips, float(values["sample_fraction"]),
                                 int(values["runs"]), float(values["significance"]),
                                 int(values["seed"]))
    iur = impacted_user_ratio(trips, int(values["runs"]), int(values["seed"]))
    print(f"independent_pair_ratio {ipr:.4f}")
    print(f"impacted_user_ratio    {iur:.4f}")
    if args.out:
        Path(args.out).write_text(f"independent_pair_ratio={ipr!r}\n"
                                  f"impacted_user_ratio={iur!r}\n")
        write_manifest(args.out, "analyze", values)
    return EXIT_OK


def cmd_train(args) -> int:
    defaults = {"dim": 13, "learning_rate": 0.0005, "regularization": 0.02,
                "negatives": 5, "epochs": 50, "seed": 42, "corrected_reg": False,
                "shuffle": False, "mode": "full"}
    values = resolve(defaults, args.config, args)
    trips, _ = load_corpus(args.corpus)
    config = TrainConfig(dim=int(values["dim"]),
                         learning_rate=float(values["learning_rate"]),
                         regularization=float(values["regularization"]),
                         negatives=int(values["negatives"]),
                         max_iterations=int(values["epochs"]),
                         rng_seed=int(values["seed"]),
                         corrected_reg=bool(values["corrected_reg"]),
                         shuffle=bool(values["shuffle"]),
                         mode=values["mode"])
    model = train(trips, config)
    zpair = compute_zpair(model) if len(model.poi_vec) >= 2 else None
    with open(args.out, "w") as fh:
        model.save(fh, zpair=zpair)
    write_manifest(args.out, "train", {**values, "corpus": args.corpus})
    print(f"trained d={config.dim} pois={len(model.poi_vec)} users={len(model.user_vec)}")
    return EXIT_OK


def _load_model(path: str) -> EmbeddingModel:
    try:
        with open(path) as fh:
            model = EmbeddingModel.load(fh)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read model file {path}: {exc}")
    if model._zpair is not None:
        check_zpair(model, model._zpair)
    return model


def _time_cost_model(args, trips, pois) -> TimeCostModel:
    visit_times = compute_visit_times(trips)
    matrix = None
    if getattr(args, "distances", None):
        with open(args.distances) as fh:
            matrix = load_distance_matrix(fh)
    return TimeCostModel(visit_times, pois=pois,
                         walking_speed=getattr(args, "walking_speed", None) or 4.0,
                         distance_matrix=matrix)


def _query_graph(args, model, trips, pois):
    tcm = _time_cost_model(args, trips, pois)
    for poi_id in (args.start, args.end):
        if poi_id not in model.poi_vec:
            raise CliError(f"unknown POI: {poi_id}")
        if poi_id not in tcm.visit_times:
            raise CliError(f"no visit-time data for POI: {poi_id}")
    if args.user not in model.user_vec:
        raise CliError(f"unknown user: {args.user}")
    query = Query(args.user, args.start, args.end, float(args.budget))
    ctx = ScoreContext(model, query)
    candidates = reachable_candidates(query, tcm, model.poi_ids)
    graph = build_graph(model, ctx, query, tcm, candidates)
    return query, ctx, graph


def cmd_recommend(args) -> int:
    values = resolve({"seed": 42, "solver": "alns", "runs": 5, "iterations": 1000},
                     args.config, args)
    trips, pois = load_corpus(args.corpus)
    model = _load_model(args.model)
    query, ctx, graph = _query_graph(args, model, trips, pois)
    direct = [graph.start, graph.end]
    if not graph.feasible(direct).ok:
        raise CliError("no feasible trip", EXIT_INFEASIBLE)
    if values["solver"] == "exact":
        result = solve_exact(graph)
        if result is None:
            raise CliError("no feasible trip", EXIT_INFEASIBLE)
        trip, score = result.trip, result.objective
    elif values["solver"] == "alns":
        config = AlnsConfig(runs=int(values["runs"]), iterations=int(values["iterations"]),
                            rng_seed=int(values["seed"]))
        result = run_alns(graph, config, model, collect_trace=bool(args.trace))
        if args.trace:
            with open(args.trace, "w") as fh:
                write_trace_csv(result.trace, fh)
        trip, score = result.trip, result.score
    else:
        raise CliError(f"unknown solver: {values['solver']}")
    total = graph.trip_cost(trip)
    print(f"# solver={values['solver']} score={score!r} cost_s={total:.1f} budget_s={graph.budget:.1f}")
    for k, v in enumerate(trip):
        if k == 0:
            print(f"{graph.poi_ids[v]} visit={graph.start_visit_cost:.0f}s")
        else:
            leg = graph.edge_cost[trip[k - 1], v]
            print(f"{graph.poi_ids[v]} leg={leg:.0f}s")
    if args.out:
        Path(args.out).write_text("\n".join(graph.poi_ids[v] for v in trip) + "\n")
        write_manifest(args.out, "recommend", {**values, "user": args.user,
                                               "start": args.start, "end": args.end,
                                               "budget": args.budget})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    values = resolve({"seed": 42, "solvers": "random,pop,alns", "mode": "full",
                      "epochs": 50, "dim": 13, "shared_model": False,
                      "runs": 2, "iterations": 200}, args.config, args)
    trips, pois = load_corpus(args.corpus)
    train_config = TrainConfig(dim=int(values["dim"]), max_iterations=int(values["epochs"]),
                               rng_seed=int(values["seed"]))
    alns_config = AlnsConfig(runs=int(values["runs"]), iterations=int(values["iterations"]),
                             rng_seed=int(values["seed"]))
    solvers = [s.strip() for s in str(values["solvers"]).split(",") if s.strip()]
    report = evaluate(trips, solvers, train_config, alns_config,
                      mode=values["mode"], rng_seed=int(values["seed"]),
                      shared_model=bool(values["shared_model"]), pois=pois)
    print(report.summary_table())
    if report.errors:
        print(f"# {len(report.errors)} fold(s) failed and were excluded", file=sys.stderr)
    if args.out:
        with open(args.out, "w") as fh:
            report.write_csv(fh)
        write_manifest(args.out, "evaluate", values)
    return EXIT_OK


def cmd_export_lp(args) -> int:
    values = resolve({"seed": 42}, args.config, args)
    trips, pois = load_corpus(args.corpus)
    model = _load_model(args.model)
    query, ctx, graph = _query_graph(args, model, trips, pois)
    ilp = build_ilp(graph)
    with open(args.out, "w") as fh:
        write_lp(ilp, fh)
    write_manifest(args.out, "export-lp", {**values, "user": args.user,
                                           "start": args.start, "end": args.end,
                                           "budget": args.budget})
    print(f"wrote {args.out}: |V|={graph.n}, {len(ilp.variables)} variables, "
          f"{len(ilp.constraints)} constraints")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tripkit",
                                     description="Trip recommendation toolkit: learn "
                                     "POI embeddings from check-ins and answer "
                                     "time-budgeted trip queries.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, help="random seed (default 42)")

    p = sub.add_parser("ingest", help="parse check-ins into a corpus file")
    p.add_argument("checkins")
    p.add_argument("--pois")
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, help="trip window in seconds (default 28800)")
    p.add_argument("--gap-mode", dest="gap_mode", action="store_const", const=True)
    p.add_argument("--skip-bad-rows", dest="skip_bad_rows", action="store_const", const=True)
    common(p)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("analyze", help="corpus co-occurrence and popularity analyses")
    p.add_argument("corpus")
    p.add_argument("--out")
    p.add_argument("--runs", type=int)
    p.add_argument("--sample-fraction", dest="sample_fraction", type=float)
    p.add_argument("--significance", type=float)
    common(p)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("train", help="train the POI/user embedding model")
    p.add_argument("corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--regularization", type=float)
    p.add_argument("--negatives", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--mode", choices=["full", "pop+pref", "pop-only"])
    p.add_argument("--corrected-reg", dest="corrected_reg", action="store_const", const=True)
    p.add_argument("--shuffle", action="store_const", const=True)
    common(p)
    p.set_defaults(fn=cmd_train)

    def query_args(p):
        p.add_argument("--user", required=True)
        p.add_argument("--start", required=True)
        p.add_argument("--end", required=True)
        p.add_argument("--budget", type=float, required=True, help="seconds")
        p.add_argument("--distances", help="CSV distance matrix in km")
        p.add_argument("--walking-speed", dest="walking_speed", type=float)

    p = sub.add_parser("recommend", help="answer a trip query")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    query_args(p)
    p.add_argument("--solver", choices=["exact", "alns"])
    p.add_argument("--runs", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--trace", help="write the iteration trace CSV here")
    p.add_argument("--out")
    common(p)
    p.set_defaults(fn=cmd_recommend)

    p = sub.add_parser("evaluate", help="leave-one-out evaluation")
    p.add_argument("corpus")
    p.add_argument("--solvers", help="comma list: random,pop,alns,exact")
    p.add_argument("--mode", choices=["full", "pop+pref", "pop-only"])
    p.add_argument("--dim", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--shared-model", dest="shared_model", action="store_const", const=True)
    p.add_argument("--out")
    common(p)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("export-lp", help="emit the query's integer program in LP format")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    query_args(p)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(fn=cmd_export_lp)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (CheckinError, UnknownPoiError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (AssertionError, FloatingPointError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
