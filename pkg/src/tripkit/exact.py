"""Exact solving: the linearized integer program, an LP-format exchange surface,
assignment checking, and a branch-and-bound optimizer with a brute-force oracle."""

from __future__ import annotations

import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

from .graph import PoiGraph

BRUTE_FORCE_GUARD = 12
FLOAT_TOL = 1e-9


@dataclass
class Constraint:
    cid: str
    coeffs: dict[str, float]
    sense: str  # '<=', '>=', '='
    rhs: float

    def satisfied(self, assignment: dict[str, float], tol: float = FLOAT_TOL) -> bool:
        lhs = sum(c * assignment[v] for v, c in self.coeffs.items())
        if self.sense == "<=":
            return lhs <= self.rhs + tol
        if self.sense == ">=":
            return lhs >= self.rhs - tol
        return abs(lhs - self.rhs) <= tol


@dataclass
class IlpModel:
    """Linearized trip-selection program over a graph with n vertices.

    Variables (1-based vertex indices): edge indicators x_i_j for every ordered
    pair (self-pairs included), pair indicators xp_i_j for i < j <= n-1, and
    integer position variables p_i for i in [2, n].

    Constraint count for n = |V|:
      2 (start/end degree) + 2(n-2) (interior flow/once)
      + 3*C(n-1, 2) (pair-product linearization) + 1 (budget)
      + (n-1)^2 (position-based subtour elimination).
    """
    n: int
    objective: dict[str, float]
    constraints: list[Constraint]
    binaries: list[str] = field(default_factory=list)
    generals: list[str] = field(default_factory=list)
    bounds: dict[str, tuple[float, float]] = field(default_factory=dict)

    @property
    def variables(self) -> list[str]:
        return self.binaries + self.generals

    def objective_value(self, assignment: dict[str, float]) -> float:
        return sum(c * assignment[v] for v, c in self.objective.items())


def xvar(i: int, j: int) -> str:
    return f"x_{i}_{j}"


def xpvar(i: int, j: int) -> str:
    return f"xp_{i}_{j}"


def pvar(i: int) -> str:
    return f"p_{i}"


def build_ilp(graph: PoiGraph) -> IlpModel:
    n = graph.n
    binaries = [xvar(i, j) for i in range(1, n + 1) for j in range(1, n + 1)]
    binaries += [xpvar(i, j) for i in range(1, n) for j in range(i + 1, n)]
    generals = [pvar(i) for i in range(2, n + 1)]
    bounds = {pvar(i): (2.0, float(n)) for i in range(2, n + 1)}

    objective: dict[str, float] = {}
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            fj = float(graph.vertex_profit[j - 1])
            if fj != 0.0:
                objective[xvar(i, j)] = objective.get(xvar(i, j), 0.0) + fj
    for i in range(2, n - 1):
        for j in range(i + 1, n):
            fe = float(graph.edge_profit[i - 1, j - 1])
            if fe != 0.0:
                objective[xpvar(i, j)] = fe

    cons: list[Constraint] = []
    cons.append(Constraint("start_degree", {xvar(1, j): 1.0 for j in range(1, n + 1)}, "=", 1.0))
    cons.append(Constraint("end_degree", {xvar(i, n): 1.0 for i in range(1, n + 1)}, "=", 1.0))
    for i in range(2, n):
        flow = {xvar(i, j): 1.0 for j in range(1, n + 1)}
        for k in range(1, n + 1):
            flow[xvar(k, i)] = flow.get(xvar(k, i), 0.0) - 1.0
        cons.append(Constraint(f"flow_{i}", flow, "=", 0.0))
        cons.append(Constraint(f"once_{i}", {xvar(i, j): 1.0 for j in range(1, n + 1)}, "<=", 1.0))
    for i in range(1, n):
        for j in range(i + 1, n):
            out_i = {xvar(i, k): -1.0 for k in range(1, n + 1)}
            out_j = {xvar(j, k): -1.0 for k in range(1, n + 1)}
            cons.append(Constraint(f"pair_ub1_{i}_{j}", {xpvar(i, j): 1.0, **out_i}, "<=", 0.0))
            cons.append(Constraint(f"pair_ub2_{i}_{j}", {xpvar(i, j): 1.0, **out_j}, "<=", 0.0))
            both = {xpvar(i, j): 1.0}
            both.update(out_i)
            for k in range(1, n + 1):
                both[xvar(j, k)] = both.get(xvar(j, k), 0.0) - 1.0
            cons.append(Constraint(f"pair_lb_{i}_{j}", both, ">=", -1.0))
    budget = {xvar(i, j): float(graph.edge_cost[i - 1, j - 1])
              for i in range(1, n + 1) for j in range(1, n + 1)}
    cons.append(Constraint("budget", budget, "<=", graph.budget - graph.start_visit_cost))
    big = float(n - 1)
    for i in range(2, n + 1):
        for j in range(2, n + 1):
            coeffs = {xvar(i, j): big}
            if i != j:
                coeffs[pvar(i)] = 1.0
                coeffs[pvar(j)] = -1.0
            cons.append(Constraint(f"pos_{i}_{j}", coeffs, "<=", big - 1.0))
    return IlpModel(n, objective, cons, binaries, generals, bounds)


def check_assignment(model: IlpModel, assignment: dict[str, float],
                     tol: float = FLOAT_TOL) -> dict:
    """Evaluate every constraint and the objective for a complete assignment."""
    missing = [v for v in model.variables if v not in assignment]
    if missing:
        raise ValueError(f"assignment missing variables: {missing[:5]}")
    violated = []
    for v in model.binaries:
        if assignment[v] not in (0, 1, 0.0, 1.0):
            violated.append(f"binary_{v}")
    for v, (lo, hi) in model.bounds.items():
        if not lo - tol <= assignment[v] <= hi + tol:
            violated.append(f"bound_{v}")
    violated += [c.cid for c in model.constraints if not c.satisfied(assignment, tol)]
    return {
        "feasible": not violated,
        "violated": violated,
        "objective": model.objective_value(assignment),
    }


def encode_trip(model: IlpModel, trip: Sequence[int]) -> dict[str, float]:
    """Assignment encoding a vertex-index trip (0-based indices, as in PoiGraph)."""
    n = model.n
    one_based = [v + 1 for v in trip]
    assignment = {v: 0.0 for v in model.variables}
    for a, b in zip(one_based, one_based[1:]):
        assignment[xvar(a, b)] = 1.0
    selected = set(one_based) | {1, n}
    for i in range(1, n):
        for j in range(i + 1, n):
            if i in selected and j in selected:
                assignment[xpvar(i, j)] = 1.0
    for pos, v in enumerate(one_based, start=1):
        if v >= 2:
            assignment[pvar(v)] = float(pos)
    for i in range(2, n + 1):
        if i not in selected:
            assignment[pvar(i)] = 2.0
    return assignment


def write_lp(model: IlpModel, sink: io.TextIOBase):
    """Emit the model in CPLEX-LP text format."""

    def term(coeff: float, var: str, first: bool) -> str:
        sign = "" if first and coeff >= 0 else ("+ " if coeff >= 0 else "- ")
        return f"{sign}{abs(float(coeff))!r} {var}"

    sink.write("Maximize\n obj:")
    parts = [term(c, v, i == 0) for i, (v, c) in enumerate(sorted(model.objective.items()))]
    sink.write(" " + " ".join(parts) if parts else " 0 " + model.binaries[0])
    sink.write("\nSubject To\n")
    for con in model.constraints:
        parts = [term(c, v, i == 0) for i, (v, c) in enumerate(sorted(con.coeffs.items()))]
        op = {"<=": "<=", ">=": ">=", "=": "="}[con.sense]
        sink.write(f" {con.cid}: {' '.join(parts)} {op} {float(con.rhs)!r}\n")
    if model.bounds:
        sink.write("Bounds\n")
        for v, (lo, hi) in sorted(model.bounds.items()):
            sink.write(f" {float(lo)!r} <= {v} <= {float(hi)!r}\n")
    if model.binaries:
        sink.write("Binary\n")
        for v in model.binaries:
            sink.write(f" {v}\n")
    if model.generals:
        sink.write("General\n")
        for v in model.generals:
            sink.write(f" {v}\n")
    sink.write("End\n")


def read_lp(source: io.TextIOBase) -> IlpModel:
    """Parse the LP subset emitted by write_lp (round-trip checking aid)."""
    text = source.read()
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    section = None
    objective: dict[str, float] = {}
    constraints: list[Constraint] = []
    binaries: list[str] = []
    generals: list[str] = []
    bounds: dict[str, tuple[float, float]] = {}

    def parse_terms(tokens: list[str]) -> dict[str, float]:
        coeffs: dict[str, float] = {}
        sign = 1.0
        pending: float | None = None
        for tok in tokens:
            if tok == "+":
                sign = 1.0
            elif tok == "-":
                sign = -1.0
            else:
                try:
                    pending = sign * float(tok)
                except ValueError:
                    coeffs[tok] = coeffs.get(tok, 0.0) + (pending if pending is not None else sign)
                    sign, pending = 1.0, None
        return coeffs

    for line in lines:
        low = line.lower()
        if low in ("maximize", "minimize", "subject to", "bounds", "binary", "general", "end"):
            section = low
            continue
        if section == "maximize":
            body = line.split(":", 1)[1] if ":" in line else line
            objective.update(parse_terms(body.split()))
        elif section == "subject to":
            cid, body = line.split(":", 1)
            tokens = body.split()
            for op in ("<=", ">=", "="):
                if op in tokens:
                    k = tokens.index(op)
                    constraints.append(Constraint(cid.strip(), parse_terms(tokens[:k]),
                                                  op, float(tokens[k + 1])))
                    break
        elif section == "bounds":
            lo, _, var, _, hi = line.split()
            bounds[var] = (float(lo), float(hi))
        elif section == "binary":
            binaries.append(line)
        elif section == "general":
            generals.append(line)
    n = max(int(v.split("_")[1]) for v in binaries if v.startswith("x_"))
    return IlpModel(n, objective, constraints, binaries, generals, bounds)


def models_equal(a: IlpModel, b: IlpModel, tol: float = 1e-12) -> bool:
    def normd(d):
        return {k: v for k, v in d.items() if v != 0.0}

    if a.n != b.n or set(a.binaries) != set(b.binaries) or set(a.generals) != set(b.generals):
        return False
    if normd(a.objective).keys() != normd(b.objective).keys():
        return False
    if any(abs(a.objective[k] - b.objective[k]) > tol for k in normd(a.objective)):
        return False
    if a.bounds != b.bounds:
        return False
    if len(a.constraints) != len(b.constraints):
        return False
    for ca, cb in zip(a.constraints, b.constraints):
        if ca.cid != cb.cid or ca.sense != cb.sense or abs(ca.rhs - cb.rhs) > tol:
            return False
        if normd(ca.coeffs).keys() != normd(cb.coeffs).keys():
            return False
        if any(abs(ca.coeffs[k] - cb.coeffs[k]) > tol for k in normd(ca.coeffs)):
            return False
    return True


@dataclass
class SolveResult:
    trip: list[int]
    objective: float
    nodes: int = 0


def enumerate_all(graph: PoiGraph) -> SolveResult | None:
    """Brute-force oracle: every subset and ordering of interior vertices."""
    if graph.n > BRUTE_FORCE_GUARD:
        raise ValueError(f"brute force guarded at |V| <= {BRUTE_FORCE_GUARD}")
    interior = list(graph.interior())
    best: tuple[float, list[int]] | None = None
    count = 0
    for size in range(len(interior) + 1):
        for subset in itertools.combinations(interior, size):
            for order in itertools.permutations(subset):
                trip = [graph.start, *order, graph.end]
                count += 1
                if not graph.feasible(trip).ok:
                    continue
                obj = graph.trip_objective(trip)
                if best is None or obj > best[0] + 1e-15 or (
                        abs(obj - best[0]) <= 1e-15 and trip < best[1]):
                    best = (obj, trip)
    if best is None:
        return None
    return SolveResult(best[1], best[0], count)


def solve_exact(graph: PoiGraph) -> SolveResult | None:
    """Depth-first branch and bound over paths from the start vertex.

    Pruning uses (i) reachability of the end vertex within the remaining
    budget and (ii) an admissible bound: current objective plus the top-m
    remaining vertex profits and top pair profits, with m capped by
    remaining budget over the cheapest edge cost. Ties break to the
    lexicographically smallest vertex sequence.
    """
    n = graph.n
    start, end = graph.start, graph.end
    if graph.start_visit_cost + graph.edge_cost[start, end] > graph.budget:
        return None
    interior = list(graph.interior())
    min_edge = min((graph.edge_cost[i, j] for i in range(n) for j in range(n) if i != j),
                   default=0.0)
    min_into_end = min((graph.edge_cost[i, end] for i in range(n) if i != end), default=0.0)

    best_obj = -math.inf
    best_trip: list[int] | None = None
    nodes = 0

    def completion_lb(v: int, remaining: list[int]) -> float:
        direct = graph.edge_cost[v, end]
        if not remaining:
            return direct
        via = min(graph.edge_cost[v, r] for r in remaining) + min_into_end
        return min(direct, via)

    def upper_bound(cur_obj: float, path_interior: list[int],
                    remaining: list[int], budget_left: float) -> float:
        if not remaining:
            return cur_obj
        if min_edge > 0:
            m = min(len(remaining), int(budget_left // min_edge))
        else:
            m = len(remaining)
        if m <= 0:
            return cur_obj
        vps = sorted((graph.vertex_profit[r] for r in remaining), reverse=True)[:m]
        bound = cur_obj + sum(vps)
        pair_profits = []
        for a_idx, a in enumerate(remaining):
            for b in remaining[a_idx + 1:]:
                pair_profits.append(graph.edge_profit[a, b])
            for b in path_interior:
                pair_profits.append(graph.edge_profit[a, b])
        take = m * (m - 1) // 2 + m * len(path_interior)
        pair_profits.sort(reverse=True)
        bound += sum(pair_profits[:take])
        return bound

    def dfs(v: int, path_interior: list[int], used: set[int], cost: float, obj: float):
        nonlocal best_obj, best_trip, nodes
        nodes += 1
        # close the path at the end vertex if possible
        if cost + graph.edge_cost[v, end] <= graph.budget + 1e-12:
            trip = [start, *path_interior, end]
            if obj > best_obj + 1e-15 or (abs(obj - best_obj) <= 1e-15 and
                                          (best_trip is None or trip < best_trip)):
                best_obj, best_trip = obj, trip
        remaining = [r for r in interior if r not in used]
        budget_left = graph.budget - cost
        if upper_bound(obj, path_interior, remaining, budget_left) <= best_obj + 1e-15:
            if best_trip is not None:
                return
        for r in remaining:
            step = graph.edge_cost[v, r]
            new_cost = cost + step
            others = [x for x in remaining if x != r]
            if new_cost + completion_lb(r, others) > graph.budget + 1e-12:
                continue
            gain = graph.vertex_profit[r] + sum(graph.edge_profit[r, p]
                                                for p in path_interior)
            dfs(r, path_interior + [r], used | {r}, new_cost, obj + gain)

    dfs(start, [], set(), graph.start_visit_cost, 0.0)
    if best_trip is None:
        return None
    return SolveResult(best_trip, best_obj, nodes)
