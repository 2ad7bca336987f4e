"""Trip quality scoring: query closeness, pairwise co-occurrence similarity,
and the combined trip score."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embedding import EmbeddingModel
from .checkins import UnknownPoiError


@dataclass(frozen=True)
class Query:
    user_id: str
    start: str
    end: str
    budget: float  # seconds

    def __post_init__(self):
        if self.budget <= 0:
            raise ValueError("budget must be positive")


def query_vector(model: EmbeddingModel, query: Query,
                 with_bias: bool = False) -> np.ndarray:
    """Sum of the user, start, and end vectors (start and end both counted,
    even when they name the same POI)."""
    del with_bias
    return model.user(query.user_id) + model.vec(query.start) + model.vec(query.end)


class ScoreContext:
    """Caches the two softmax normalizers: one per query, one per model."""

    def __init__(self, model: EmbeddingModel, query: Query,
                 bias_in_closeness: bool = False, zpair: float | None = None):
        self.model = model
        self.query = query
        self.bias_in_closeness = bias_in_closeness
        self.qvec = query_vector(model, query)
        self.z_query = 0.0
        for p in model.poi_vec:
            s = float(model.poi_vec[p] @ self.qvec)
            if bias_in_closeness:
                s += model.poi_pop[p]
            self.z_query += math.exp(s)
        self.z_pair = zpair if zpair is not None else compute_zpair(model)
        if not (self.z_query > 0 and math.isfinite(self.z_query)):
            raise FloatingPointError("query normalizer must be positive and finite")
        if not (self.z_pair > 0 and math.isfinite(self.z_pair)):
            raise FloatingPointError("pair normalizer must be positive and finite")

    def closeness(self, poi_id: str) -> float:
        s = float(self.model.vec(poi_id) @ self.qvec)
        if self.bias_in_closeness:
            s += self.model.pop(poi_id)
        return math.exp(s) / self.z_query

    def ncsim(self, a: str, b: str) -> float:
        if a == b:
            raise ValueError("ncsim is defined for distinct POIs only")
        return math.exp(self.model.csim(a, b)) / self.z_pair

    def ctq_score(self, trip: Sequence[str]) -> float:
        """Sum of interior closeness plus interior pairwise similarity;
        endpoints contribute nothing."""
        if len(trip) < 2 or trip[0] != self.query.start or trip[-1] != self.query.end:
            raise ValueError("trip must start at the query start and end at the query end")
        interior = list(trip[1:-1])
        if len(set(interior)) != len(interior):
            raise ValueError("interior POIs must be distinct")
        if self.query.start in interior or self.query.end in interior:
            raise ValueError("interior POIs must differ from the endpoints")
        score = sum(self.closeness(p) for p in interior)
        for i in range(len(interior)):
            for j in range(i + 1, len(interior)):
                score += self.ncsim(interior[i], interior[j])
        return score


def compute_zpair(model: EmbeddingModel) -> float:
    """Normalizer over all ordered distinct POI pairs: sum of exp(csim)."""
    ids = model.poi_ids
    if len(ids) < 2:
        raise ValueError("pair normalizer needs at least 2 POIs")
    mat = np.stack([model.poi_vec[p] for p in ids])
    sims = mat @ mat.T
    np.fill_diagonal(sims, -np.inf)
    return float(np.exp(sims).sum())


def check_zpair(model: EmbeddingModel, cached: float, rtol: float = 1e-9) -> float:
    fresh = compute_zpair(model)
    if abs(fresh - cached) > rtol * max(abs(fresh), abs(cached)):
        raise ValueError(f"cached pair normalizer {cached} disagrees with recomputed {fresh}")
    return cached
