"""Exact binary edge selection over the edge cloud.

The program picks exactly ``n_e`` edges minimising the summed edge costs
(``1 / |Omega_e|``) such that every *selected* edge has between 6 and 12
selected neighbours and no exclusive pair is selected together. When no
such selection exists the target is lowered one edge at a time.

The solver is a depth-first branch and bound without LP relaxations:
variables are visited cheapest first, the bound is the incumbent cost plus
the cheapest completion, and degree / exclusivity / cardinality constraints
are propagated on every assignment. All arithmetic on the objective is done
on exact integers (costs are scaled binary fractions), so ties are real ties
and are broken towards the lexicographically smallest selected index set.
"""

from __future__ import annotations

import json
import math
import sys
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from tapetrack.candidates import EdgeCloud

C_MAX = 1e6
DEGREE_LOW = 6
DEGREE_HIGH = 12


@dataclass
class SelectionProblem:
    costs: list[float]
    neighbor_sets: list[list[int]]
    exclusivity_groups: list[tuple[int, int]]
    n_e_target: int
    degree_bounds: tuple[int, int] = (DEGREE_LOW, DEGREE_HIGH)

    @property
    def edge_count(self) -> int:
        return len(self.costs)

    def validate(self) -> None:
        m = self.edge_count
        if len(self.neighbor_sets) != m:
            raise ValueError("neighbor_sets must have one entry per edge")
        for c in self.costs:
            if not (math.isfinite(c) and c > 0):
                raise ValueError(f"edge costs must be finite and positive, got {c}")
        sets = [set(nb) for nb in self.neighbor_sets]
        for e, nb in enumerate(sets):
            if e in nb:
                raise ValueError(f"edge {e} lists itself as a neighbour")
            for f in nb:
                if e not in sets[f]:
                    raise ValueError(f"neighbour relation not symmetric for edges {e}, {f}")
        for a, b in self.exclusivity_groups:
            if a == b:
                raise ValueError("exclusivity pair must reference two distinct edges")
        if self.n_e_target < 0:
            raise ValueError("n_e_target must be non-negative")

    def to_dict(self) -> dict:
        return {
            "costs": list(self.costs),
            "neighbor_sets": [list(nb) for nb in self.neighbor_sets],
            "exclusivity_groups": [list(p) for p in self.exclusivity_groups],
            "n_e_target": self.n_e_target,
            "degree_bounds": list(self.degree_bounds),
        }

    def dump(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, data: dict) -> "SelectionProblem":
        return cls(
            costs=[float(c) for c in data["costs"]],
            neighbor_sets=[[int(f) for f in nb] for nb in data["neighbor_sets"]],
            exclusivity_groups=[(int(a), int(b)) for a, b in data["exclusivity_groups"]],
            n_e_target=int(data["n_e_target"]),
            degree_bounds=tuple(data.get("degree_bounds", (DEGREE_LOW, DEGREE_HIGH))),
        )


@dataclass
class EdgeSelection:
    selected: list[int]  # 0/1 indicator per edge
    objective: float
    achieved_n_e: int
    feasible: bool
    proven_optimal: bool = True
    nodes: int = 0

    @property
    def indices(self) -> list[int]:
        return [i for i, x in enumerate(self.selected) if x]


# ---------------------------------------------------------------------------
# Problem construction from an edge cloud
# ---------------------------------------------------------------------------


def edge_neighbors(edges: Sequence[tuple[int, int, float]]) -> list[list[int]]:
    """Omega_e: indices of edges sharing an endpoint with edge e."""
    incident: dict[int, list[int]] = {}
    for k, (i, j, _) in enumerate(edges):
        incident.setdefault(i, []).append(k)
        incident.setdefault(j, []).append(k)
    out = []
    for k, (i, j, _) in enumerate(edges):
        nb = set(incident[i]) | set(incident[j])
        nb.discard(k)
        out.append(sorted(nb))
    return out


def edge_costs(cloud: EdgeCloud) -> list[float]:
    return [1.0 / len(nb) if nb else C_MAX for nb in edge_neighbors(cloud.edges)]


def exclusive_pairs(cloud: EdgeCloud) -> list[tuple[int, int]]:
    """Edge pairs whose endpoints use the same blob pair in some camera."""
    by_key: dict[tuple[int, frozenset], list[int]] = {}
    for k, (i, j, _) in enumerate(cloud.edges):
        bi, bj = cloud.points[i].blobs, cloud.points[j].blobs
        for cam in set(bi) & set(bj):
            by_key.setdefault((cam, frozenset((bi[cam], bj[cam]))), []).append(k)
    pairs = set()
    for group in by_key.values():
        for a in range(len(group)):
            for b in range(a + 1, len(group)):
                pairs.add((group[a], group[b]))
    return sorted(pairs)


def build_problem(cloud: EdgeCloud, n_e_target: int) -> SelectionProblem:
    nb = edge_neighbors(cloud.edges)
    costs = [1.0 / len(s) if s else C_MAX for s in nb]
    return SelectionProblem(costs, nb, exclusive_pairs(cloud), n_e_target)


# ---------------------------------------------------------------------------
# Branch and bound
# ---------------------------------------------------------------------------


class _BudgetExceeded(Exception):
    pass


def _integer_costs(costs: Sequence[float]) -> list[int]:
    fracs = [Fraction(c) for c in costs]
    denom = 1
    for f in fracs:
        denom = denom * f.denominator // math.gcd(denom, f.denominator)
    return [int(f * denom) for f in fracs]


class _Search:
    def __init__(self, problem: SelectionProblem, target: int, max_nodes: int | None):
        self.m = problem.edge_count
        self.lo, self.hi = problem.degree_bounds
        self.K = target
        self.max_nodes = max_nodes
        self.cost = _integer_costs(problem.costs)
        self.nb = [list(s) for s in problem.neighbor_sets]
        self.conf: list[list[int]] = [[] for _ in range(self.m)]
        for a, b in problem.exclusivity_groups:
            self.conf[a].append(b)
            self.conf[b].append(a)
        self.order = sorted(range(self.m), key=lambda e: (self.cost[e], e))
        self.status = [0] * self.m
        self.sel_nb = [0] * self.m
        self.avail_nb = [len(s) for s in self.nb]
        self.sel_count = 0
        self.undecided = self.m
        self.sel_cost = 0
        self.trail: list[tuple[int, int]] = []
        self.best: tuple[int, tuple[int, ...]] | None = None
        self.nodes = 0

    # -- state changes -------------------------------------------------
    def _select(self, e):
        self.status[e] = 1
        self.trail.append((e, 1))
        self.sel_count += 1
        self.undecided -= 1
        self.sel_cost += self.cost[e]
        for f in self.nb[e]:
            self.sel_nb[f] += 1

    def _exclude(self, e):
        self.status[e] = -1
        self.trail.append((e, -1))
        self.undecided -= 1
        for f in self.nb[e]:
            self.avail_nb[f] -= 1

    def _undo(self, mark):
        while len(self.trail) > mark:
            e, s = self.trail.pop()
            self.status[e] = 0
            self.undecided += 1
            if s == 1:
                self.sel_count -= 1
                self.sel_cost -= self.cost[e]
                for f in self.nb[e]:
                    self.sel_nb[f] -= 1
            else:
                for f in self.nb[e]:
                    self.avail_nb[f] += 1

    def _propagate(self, queue: deque) -> bool:
        """Apply forced assignments; return False on contradiction."""
        status, nb, lo, hi = self.status, self.nb, self.lo, self.hi
        while queue:
            if self.sel_count > self.K or self.sel_count + self.undecided < self.K:
                return False
            e = queue.popleft()
            s = status[e]
            if s == 1:
                if self.sel_nb[e] > hi or self.avail_nb[e] < lo:
                    return False
                for f in self.conf[e]:
                    if status[f] == 1:
                        return False
                    if status[f] == 0:
                        self._exclude(f)
                        queue.extend(nb[f])
                if self.sel_nb[e] == hi:
                    for f in nb[e]:
                        if status[f] == 0:
                            self._exclude(f)
                            queue.append(f)
                            queue.extend(nb[f])
                elif self.avail_nb[e] == lo and self.sel_nb[e] < lo:
                    for f in nb[e]:
                        if status[f] == 0:
                            self._select(f)
                            queue.append(f)
                            queue.extend(nb[f])
            elif s == 0:
                if self.avail_nb[e] < lo or self.sel_nb[e] > hi:
                    self._exclude(e)
                    queue.extend(nb[e])
                elif self.sel_count == self.K:
                    self._exclude(e)
                    queue.extend(nb[e])
        return self.sel_count <= self.K and self.sel_count + self.undecided >= self.K

    # -- bounds ----------------------------------------------------------
    def _first_undecided(self, start):
        order, status = self.order, self.status
        for p in range(start, self.m):
            if status[order[p]] == 0:
                return p
        return self.m

    def _lower_bound(self, start):
        need = self.K - self.sel_count
        total = self.sel_cost
        if need == 0:
            return total
        order, status, cost = self.order, self.status, self.cost
        for p in range(start, self.m):
            e = order[p]
            if status[e] == 0:
                total += cost[e]
                need -= 1
                if need == 0:
                    return total
        return None

    def _lex_best_completion(self):
        need = self.K - self.sel_count
        out = []
        for e in range(self.m):
            s = self.status[e]
            if s == 1:
                out.append(e)
            elif s == 0 and need > 0:
                out.append(e)
                need -= 1
        return tuple(out)

    # -- search ----------------------------------------------------------
    def _record(self):
        sol = (self.sel_cost, tuple(e for e in range(self.m) if self.status[e] == 1))
        if self.best is None or sol < self.best:
            self.best = sol

    def _dfs(self, start):
        self.nodes += 1
        if self.max_nodes is not None and self.nodes > self.max_nodes:
            raise _BudgetExceeded
        if self.sel_count == self.K:
            # remaining edges are all excluded by propagation; check lower degree bounds
            if all(self.sel_nb[e] >= self.lo for e in range(self.m) if self.status[e] == 1):
                self._record()
            return
        lb = self._lower_bound(start)
        if lb is None:
            return
        if self.best is not None:
            if lb > self.best[0]:
                return
            if lb == self.best[0] and self._lex_best_completion() >= self.best[1]:
                return
        p = self._first_undecided(start)
        if p >= self.m:
            return
        e = self.order[p]
        for action in (self._select, self._exclude):
            mark = len(self.trail)
            action(e)
            queue = deque([e])
            queue.extend(self.nb[e])
            if self._propagate(queue):
                self._dfs(p + 1)
            self._undo(mark)

    def run(self):
        if self.K == 0:
            self.best = (0, ())
            return
        if self.K > self.m:
            return
        queue = deque(range(self.m))
        if self._propagate(queue):
            self._dfs(0)


def solve_exact_count(
    problem: SelectionProblem, target: int, max_nodes: int | None = None
) -> tuple[tuple[int, ...] | None, bool, int]:
    """Optimal index set with exactly ``target`` edges.

    Returns ``(indices or None, proven, nodes)``; ``proven`` is False when
    the node budget ran out (the incumbent, if any, is then returned).
    """
    search = _Search(problem, target, max_nodes)
    limit = max(sys.getrecursionlimit(), 4 * problem.edge_count + 1000)
    sys.setrecursionlimit(limit)
    proven = True
    try:
        search.run()
    except _BudgetExceeded:
        proven = False
    indices = search.best[1] if search.best is not None else None
    return indices, proven, search.nodes


def solve_selection(
    problem: SelectionProblem, max_nodes: int | None = None, floor_fraction: float = 0.5
) -> EdgeSelection:
    """Solve the edge-selection program, relaxing the target on infeasibility."""
    problem.validate()
    n_e = problem.n_e_target
    floor = math.floor(floor_fraction * n_e)
    total_nodes = 0
    proven_all = True
    for target in range(n_e, floor - 1, -1):
        indices, proven, nodes = solve_exact_count(problem, target, max_nodes)
        total_nodes += nodes
        proven_all &= proven
        if indices is not None:
            selected = [0] * problem.edge_count
            for i in indices:
                selected[i] = 1
            return EdgeSelection(
                selected=selected,
                objective=math.fsum(problem.costs[i] for i in indices),
                achieved_n_e=target,
                feasible=True,
                proven_optimal=proven_all,
                nodes=total_nodes,
            )
    return EdgeSelection(
        selected=[0] * problem.edge_count,
        objective=0.0,
        achieved_n_e=floor,
        feasible=False,
        proven_optimal=proven_all,
        nodes=total_nodes,
    )
