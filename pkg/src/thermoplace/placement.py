"""Optimal sensor placement over the interior candidate grid.

Candidates live on a uniform grid kept strictly farther than a margin from
the domain boundary.  Each candidate is scored by the time-averaged spatial
gradient of the temperature field (sum of first derivatives in 2D), taken
from either a finite-difference field or a trained surrogate.

Three selection models are solved exactly:

* Model 1 minimizes the summed absolute score of the selected sensors under
  count bounds alone (so it picks the n_min smallest scores);
* Model 2 adds a minimum pairwise distance d between selected sensors;
* Model 3 additionally charges an overlap cost when two selected sensors sit
  closer than d1, via the product linearization of s_i * (sum_j s_j c_i^j).

By default the overlap cost uses the absolute score and clamps at zero,
which keeps every per-sensor contribution nonnegative; the raw signed,
unclamped variant is available behind ``signed_costs`` for comparison.

Ties are always broken toward the lexicographically smallest sorted index
tuple, and every solver evaluates complete selections through one canonical
summation so branch-and-bound and exhaustive enumeration agree bit-exactly.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, InfeasibleError, RangeError, SizeGuardError
from .fdsolver import FieldSeries, interp_snapshot

#: exhaustive enumeration refuses instances beyond this many candidates
ENUMERATION_GUARD = 22

#: strict-interiority shift applied to the candidate bounding box
MARGIN_EPS = 1e-12


@dataclass(frozen=True)
class PlacementGrid:
    """Candidate coordinates (N, dim) with their grid shape and margin."""

    points: np.ndarray
    nx: int
    ny: int
    margin: float

    def __post_init__(self):
        object.__setattr__(self, "points",
                           np.asarray(self.points, dtype=float))
        if self.points.ndim != 2 or self.points.shape[0] != self.nx * self.ny:
            raise DomainError("points must be an (nx*ny, dim) array")

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def count(self) -> int:
        return self.points.shape[0]

    def min_spacing(self) -> float:
        d = pairwise_distances(self)
        return float(d[~np.eye(self.count, dtype=bool)].min())


def build_grid(dim: int, nx: int, ny: int = 1, margin: float = 0.05) -> PlacementGrid:
    """Uniform candidate grid strictly inside the margin-shrunk domain.

    1D grids span [margin, 1-margin] shifted inward by a machine-zero amount;
    2D grids are the product of two such axes (x fastest).
    """
    if dim not in (1, 2):
        raise DomainError(f"dim must be 1 or 2, got {dim}")
    if dim == 1:
        ny = 1
    if nx < 1 or ny < 1:
        raise DomainError("grid needs at least one point per axis")
    if not 0.0 <= margin < 0.5:
        raise DomainError(f"margin {margin} must lie in [0, 0.5)")
    lo, hi = margin + MARGIN_EPS, 1.0 - margin - MARGIN_EPS
    if lo >= hi:
        raise DomainError(f"margin {margin} leaves no interior room")

    def axis(n):
        return np.array([0.5]) if n == 1 else np.linspace(lo, hi, n)

    if dim == 1:
        pts = axis(nx)[:, None]
    else:
        X, Y = np.meshgrid(axis(nx), axis(ny), indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel()])
    return PlacementGrid(points=pts, nx=nx, ny=ny, margin=margin)


def pairwise_distances(grid: PlacementGrid) -> np.ndarray:
    diff = grid.points[:, None, :] - grid.points[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


@dataclass(frozen=True)
class ScoreField:
    """Per-candidate time-averaged gradient magnitudes and signed means."""

    abs_score: np.ndarray
    signed_score: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        for name in ("abs_score", "signed_score", "times"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=float))
        if self.abs_score.shape != self.signed_score.shape:
            raise DomainError("score arrays must match")
        if np.any(self.abs_score < 0):
            raise DomainError("absolute scores cannot be negative")


def score_field(source, grid: PlacementGrid, times) -> ScoreField:
    """Score candidates from a field series or a surrogate predictor.

    A FieldSeries source is differentiated with second-order central
    differences on its grid and interpolated at the candidates; any other
    source must expose ``divergence(points, t)`` (PinnPredictor does), which
    evaluates the analytic derivative jets.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise DomainError("need at least one scoring time")
    divs = np.empty((times.shape[0], grid.count))
    if isinstance(source, FieldSeries):
        if grid.dim != source.dim:
            raise DomainError("grid dimension does not match the field")
        for i, t in enumerate(times):
            snap = source.snapshot(t)
            if source.dim == 1:
                div = np.gradient(snap, source.xs)
            else:
                gx, gy = np.gradient(snap, source.xs, source.xs)
                div = gx + gy
            divs[i] = interp_snapshot(source.xs, div, grid.points)
    else:
        for i, t in enumerate(times):
            divs[i] = source.divergence(grid.points, float(t))
    return ScoreField(abs_score=np.abs(divs).mean(axis=0),
                      signed_score=divs.mean(axis=0), times=times)


@dataclass(frozen=True)
class PlacementConfig:
    """Sensor count bounds, distance constraints, and the big-M constant."""

    n_min: int = 5
    n_max: int = 10
    d: float = 0.05
    d1: float = 0.2
    big_m: float = 1000.0
    signed_costs: bool = False

    def __post_init__(self):
        if not 1 <= self.n_min <= self.n_max:
            raise DomainError(f"need 1 <= n_min <= n_max, got {self.n_min}, {self.n_max}")
        if not 0.0 <= self.d <= self.d1:
            raise DomainError(f"need 0 <= d <= d1, got d={self.d}, d1={self.d1}")
        if not self.big_m > 0:
            raise DomainError("big_m must be positive")


@dataclass(frozen=True)
class PlacementSolution:
    """Binary selection with its objective and solver statistics."""

    selection: np.ndarray
    objective: float
    model: int
    solver: str
    nodes: int
    evaluations: int

    def __post_init__(self):
        object.__setattr__(self, "selection",
                           np.asarray(self.selection, dtype=np.int8))

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.nonzero(self.selection)[0])


def overlap_cost(grid: PlacementGrid, scores: ScoreField, d1: float,
                 signed: bool = False) -> np.ndarray:
    """Cost matrix charging sensor i for a neighbor j inside radius d1.

    Default form: |score_i| * max(0, d1 - dist_ij), zero on the diagonal.
    ``signed`` switches to the raw signed score without clamping.
    """
    if d1 < 0:
        raise DomainError("d1 must be nonnegative")
    dist = pairwise_distances(grid)
    gap = d1 - dist
    if signed:
        c = scores.signed_score[:, None] * gap
    else:
        c = scores.abs_score[:, None] * np.maximum(gap, 0.0)
    np.fill_diagonal(c, 0.0)
    return c


def selection_objective(model: int, indices, abs_score: np.ndarray,
                        cost: Optional[np.ndarray]) -> float:
    """Canonical objective of a complete selection (fixed summation order)."""
    total = 0.0
    sel = sorted(int(i) for i in indices)
    for i in sel:
        term = float(abs_score[i])
        if model == 3:
            for j in sel:
                term += float(cost[i, j])
        total += term
    return total


def validate_solution(sol: PlacementSolution, grid: PlacementGrid,
                      cfg: PlacementConfig) -> bool:
    """Independent constraint check: count bounds and, for models 2/3, the
    pairwise distance floor."""
    idx = sol.indices
    if not cfg.n_min <= len(idx) <= cfg.n_max:
        return False
    if sol.model in (2, 3) and len(idx) > 1:
        dist = pairwise_distances(grid)
        for a, b in itertools.combinations(idx, 2):
            if dist[a, b] < cfg.d:
                return False
    return True


def solve_model1(scores: ScoreField, cfg: PlacementConfig) -> PlacementSolution:
    """Exact optimum of the count-only model.

    Absolute scores are nonnegative, so the optimum takes the n_min smallest
    scores, ties resolved toward lower indices.
    """
    n = scores.abs_score.shape[0]
    if cfg.n_min > n:
        raise InfeasibleError(
            f"n_min={cfg.n_min} exceeds the {n} candidates",
            n_min=cfg.n_min, independence_bound=n)
    order = np.lexsort((np.arange(n), scores.abs_score))
    chosen = np.sort(order[:cfg.n_min])
    sel = np.zeros(n, dtype=np.int8)
    sel[chosen] = 1
    obj = selection_objective(1, chosen, scores.abs_score, None)
    return PlacementSolution(selection=sel, objective=obj, model=1,
                             solver="analytic", nodes=0, evaluations=1)


def _max_independent_set(conflicts: np.ndarray, cap: int) -> int:
    """Size of the largest conflict-free subset (capped search)."""
    n = conflicts.shape[0]
    order = list(range(n))
    best = 0

    def extend(i, size, banned):
        nonlocal best
        if size > best:
            best = size
        if best >= cap or i >= n or size + (n - i) <= best:
            return
        if not banned[i]:
            nb = banned | conflicts[i]
            extend(i + 1, size + 1, nb)
        extend(i + 1, size, banned)

    extend(0, 0, np.zeros(n, dtype=bool))
    return best


def _infeasible(cfg: PlacementConfig, conflicts: np.ndarray) -> InfeasibleError:
    bound = _max_independent_set(conflicts, cfg.n_min)
    return InfeasibleError(
        f"no selection of n_min={cfg.n_min} sensors respects the distance "
        f"constraint; the conflict graph allows at most {bound}",
        n_min=cfg.n_min, independence_bound=bound)


def _model_inputs(model: int, scores: ScoreField, grid: PlacementGrid,
                  cfg: PlacementConfig):
    if model not in (1, 2, 3):
        raise DomainError(f"model must be 1, 2, or 3, got {model}")
    n = grid.count
    if scores.abs_score.shape[0] != n:
        raise DomainError("scores do not match the candidate grid")
    if cfg.n_min > n:
        raise InfeasibleError(f"n_min={cfg.n_min} exceeds the {n} candidates",
                              n_min=cfg.n_min, independence_bound=n)
    if model == 1:
        conflicts = np.zeros((n, n), dtype=bool)
    else:
        conflicts = pairwise_distances(grid) < cfg.d
        np.fill_diagonal(conflicts, False)
    cost = overlap_cost(grid, scores, cfg.d1, cfg.signed_costs) if model == 3 else None
    return conflicts, cost


def exhaustive_solve(model: int, scores: ScoreField, grid: PlacementGrid,
                     cfg: PlacementConfig) -> PlacementSolution:
    """Ground-truth enumeration of every count-feasible subset (N <= 22)."""
    n = grid.count
    if n > ENUMERATION_GUARD:
        raise SizeGuardError(
            f"{n} candidates exceed the enumeration guard {ENUMERATION_GUARD}")
    conflicts, cost = _model_inputs(model, scores, grid, cfg)
    abs_score = scores.abs_score
    best_obj = None
    best_idx = None
    evaluated = 0
    for k in range(cfg.n_min, min(cfg.n_max, n) + 1):
        combos = np.array(list(itertools.combinations(range(n), k)), dtype=int)
        if combos.size == 0:
            continue
        if model in (2, 3) and k > 1:
            ok = np.ones(combos.shape[0], dtype=bool)
            for a, b in itertools.combinations(range(k), 2):
                ok &= ~conflicts[combos[:, a], combos[:, b]]
            combos = combos[ok]
            if combos.shape[0] == 0:
                continue
        evaluated += combos.shape[0]
        obj = abs_score[combos].sum(axis=1)
        if model == 3:
            for a, b in itertools.combinations(range(k), 2):
                obj = obj + cost[combos[:, a], combos[:, b]]
                obj = obj + cost[combos[:, b], combos[:, a]]
        m = float(obj.min())
        window = 1e-9 * (1.0 + abs(m))
        for row in combos[obj <= m + window]:
            idx = tuple(int(i) for i in row)
            o = selection_objective(model, idx, abs_score, cost)
            if (best_obj is None or o < best_obj
                    or (o == best_obj and idx < best_idx)):
                best_obj, best_idx = o, idx
    if best_idx is None:
        raise _infeasible(cfg, conflicts)
    sel = np.zeros(n, dtype=np.int8)
    sel[list(best_idx)] = 1
    return PlacementSolution(selection=sel, objective=best_obj, model=model,
                             solver="exhaustive", nodes=0, evaluations=evaluated)


def bnb_solve(model: int, scores: ScoreField, grid: PlacementGrid,
              cfg: PlacementConfig) -> PlacementSolution:
    """Depth-first branch-and-bound, exact and tie-break identical to
    exhaustive enumeration.

    The lower bound adds, to the cost already committed, the smallest
    attainable marginal costs of the sensors still required; with clamped
    costs every marginal is nonnegative, which makes the bound admissible.
    Candidates are explored in ascending-score order, include branch first,
    and subtrees are pruned only when their bound strictly exceeds the
    incumbent (plus a tiny float guard), so equal-objective selections are
    still visited and the lexicographic tie-break is exact.
    """
    n = grid.count
    conflicts, cost = _model_inputs(model, scores, grid, cfg)
    abs_score = scores.abs_score
    if model == 3 and cost is not None and np.any(cost < 0):
        raise DomainError(
            "branch-and-bound requires nonnegative overlap costs; "
            "use exhaustive_solve for the signed variant")
    order = np.lexsort((np.arange(n), abs_score))
    pair_gain = cost + cost.T if model == 3 else None

    best_obj: Optional[float] = None
    best_idx: Optional[tuple] = None
    nodes = 0
    evaluated = 0
    chosen: list[int] = []

    # marginal[i] = abs_score[i] + overlap already charged against the chosen
    marginal = abs_score.astype(float).copy()
    banned = np.zeros(n, dtype=int)   # count of chosen conflicts banning i

    def consider_leaf():
        nonlocal best_obj, best_idx, evaluated
        if len(chosen) < cfg.n_min:
            return
        evaluated += 1
        idx = tuple(sorted(chosen))
        o = selection_objective(model, idx, abs_score, cost)
        if (best_obj is None or o < best_obj
                or (o == best_obj and idx < best_idx)):
            best_obj, best_idx = o, idx

    def lower_bound(pos):
        """Committed canonical cost plus cheapest completions to n_min."""
        committed = selection_objective(model, chosen, abs_score, cost)
        need = cfg.n_min - len(chosen)
        if need <= 0:
            return committed
        avail = [marginal[order[p]] for p in range(pos, n)
                 if banned[order[p]] == 0]
        if len(avail) < need:
            return None
        avail.sort()
        return committed + float(np.sum(avail[:need]))

    def dfs(pos):
        nonlocal nodes
        if pos >= n or len(chosen) >= cfg.n_max:
            return
        bound = lower_bound(pos)
        if bound is None:
            return
        if best_obj is not None and bound > best_obj + 1e-9 * (1.0 + abs(best_obj)):
            return
        nodes += 1
        i = int(order[pos])
        if banned[i] == 0:
            chosen.append(i)
            banned[conflicts[i]] += 1
            if model == 3:
                marginal[:] += pair_gain[i]
            if len(chosen) >= cfg.n_min:
                consider_leaf()
            dfs(pos + 1)
            if model == 3:
                marginal[:] -= pair_gain[i]
            banned[conflicts[i]] -= 1
            chosen.pop()
        dfs(pos + 1)

    dfs(0)
    if best_idx is None:
        raise _infeasible(cfg, conflicts)
    sel = np.zeros(n, dtype=np.int8)
    sel[list(best_idx)] = 1
    return PlacementSolution(selection=sel, objective=best_obj, model=model,
                             solver="branch-and-bound", nodes=nodes,
                             evaluations=evaluated)


def solve_model2(scores: ScoreField, grid: PlacementGrid,
                 cfg: PlacementConfig) -> PlacementSolution:
    """Exact optimum under the pairwise distance constraint."""
    return bnb_solve(2, scores, grid, cfg)


def solve_model3(scores: ScoreField, grid: PlacementGrid,
                 cfg: PlacementConfig) -> PlacementSolution:
    """Exact optimum including linearized overlap costs.

    The signed-cost variant can be negative, which breaks the
    branch-and-bound bound; those instances go through enumeration.
    """
    if cfg.signed_costs:
        return exhaustive_solve(3, scores, grid, cfg)
    return bnb_solve(3, scores, grid, cfg)


def write_placement_json(path, model: int, cfg: PlacementConfig,
                         grid: PlacementGrid, scores: ScoreField,
                         sol: PlacementSolution) -> None:
    doc = {
        "model": model,
        "config": {
            "n_min": cfg.n_min, "n_max": cfg.n_max, "d": cfg.d, "d1": cfg.d1,
            "big_m": cfg.big_m, "signed_costs": cfg.signed_costs,
        },
        "grid": {
            "nx": grid.nx, "ny": grid.ny, "margin": grid.margin,
            "points": [list(map(float, p)) for p in grid.points],
        },
        "abs_score": [float(v) for v in scores.abs_score],
        "signed_score": [float(v) for v in scores.signed_score],
        "times": [float(t) for t in scores.times],
        "selection": [int(v) for v in sol.selection],
        "selected_indices": list(sol.indices),
        "objective": sol.objective,
        "solver": sol.solver,
        "nodes": sol.nodes,
        "evaluations": sol.evaluations,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def write_placement_csv(path, grid: PlacementGrid, scores: ScoreField,
                        sol: PlacementSolution) -> None:
    import csv as _csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _csv.writer(fh)
        coords = ["x"] if grid.dim == 1 else ["x", "y"]
        w.writerow(coords + ["abs_score", "signed_score", "selected"])
        for i in range(grid.count):
            row = [repr(float(c)) for c in grid.points[i]]
            row += [repr(float(scores.abs_score[i])),
                    repr(float(scores.signed_score[i])),
                    int(sol.selection[i])]
            w.writerow(row)
