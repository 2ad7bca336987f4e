import math

import numpy as np
import pytest

from tripkit.checkins import PoiVisit, Trip
from tripkit.graph import PoiGraph


def make_trip(user_id, poi_ids, start=0, step=100, duration=10):
    visits = []
    t = start
    for p in poi_ids:
        visits.append(PoiVisit(user_id, p, t, t + duration))
        t += step
    return Trip(user_id, tuple(visits))


def random_graph(seed, n, interior_target=4, rng=None):
    """Random profit/cost instance whose budget admits roughly
    `interior_target` interior vertices."""
    rng = rng or np.random.default_rng(seed)
    vertex_profit = rng.uniform(0.05, 1.0, n)
    vertex_profit[0] = 0.0
    vertex_profit[-1] = 0.0
    edge_profit = rng.uniform(0.01, 0.4, (n, n))
    edge_profit = (edge_profit + edge_profit.T) / 2
    np.fill_diagonal(edge_profit, 0.0)
    visit = rng.uniform(200.0, 600.0, n)
    transit = rng.uniform(100.0, 500.0, (n, n))
    transit = (transit + transit.T) / 2
    np.fill_diagonal(transit, 0.0)
    edge_cost = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                edge_cost[i, j] = visit[j] + transit[i, j]
    direct = visit[0] + edge_cost[0, n - 1]
    per_stop = float(np.mean(visit) + np.mean(transit))
    budget = direct + interior_target * per_stop
    ids = [f"p{i}" for i in range(n)]
    return PoiGraph(ids, vertex_profit, edge_profit, edge_cost, budget, float(visit[0]))


def two_clique_corpus(seed=42, pois_per_clique=10, n_trips=200, trip_len=4):
    """Trips drawn within one of two disjoint POI cliques."""
    rng = np.random.default_rng(seed)
    cliques = [[f"a{i}" for i in range(pois_per_clique)],
               [f"b{i}" for i in range(pois_per_clique)]]
    trips = []
    for t in range(n_trips):
        clique = cliques[t % 2]
        chosen = rng.choice(len(clique), size=trip_len, replace=False)
        user = f"u{t % 20}"
        trips.append(make_trip(user, [clique[i] for i in chosen], start=t * 100000))
    return trips, cliques


def poi_coords(trips, seed=0):
    """Random coordinates in a ~2 km box for every POI in the trips."""
    from tripkit.checkins import Poi, corpus_pois
    rng = np.random.default_rng(seed)
    return {p: Poi(p, float(rng.uniform(40.0, 40.02)),
                   float(rng.uniform(-74.02, -74.0)))
            for p in corpus_pois(trips)}


@pytest.fixture
def clique_corpus():
    return two_clique_corpus()
