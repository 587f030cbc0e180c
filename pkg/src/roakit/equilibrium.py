"""Attractor-set bases and weights: multiple equilibria and limit cycles.

For a finite attractor set the quadratic-form basis is built from affine
factors (x_j - a_j), one per coordinate per attractor point: every basis
entry is a product of at most d factors that touches every attractor's
factor set, so the entry vanishes on the whole set by construction and
any PSD quadratic form over the basis is zero exactly there.

For general attractor sets (points plus discretized limit cycles) the
surrogate is shaped by a weight r(x), the squared distance to the set:
the fitted exponent is multiplied by r, which forces the surrogate to
vanish on the set regardless of the Gram matrix.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .dataset import lyapunov_value, to_regression
from .estimation import assemble_basic, extract_estimate
from .sdp import SolverConfig, solve

__all__ = [
    "EquilibriumSetBasis",
    "EquilibriumSet",
    "WeightFunction",
    "build_multiset_basis",
    "weight_r",
    "assemble_general",
    "classify_targets",
    "multi_equilibrium_estimate",
    "trace_limit_cycle",
]


@dataclass(frozen=True)
class EquilibriumSetBasis:
    """Products of affine factors vanishing on a finite attractor set.

    factor_pool holds deduplicated (coordinate, offset) pairs meaning
    (x_coord - offset); products are sorted multisets of pool indices.
    """

    n: int
    d: int
    attractor_points: tuple
    factor_pool: tuple
    products: tuple

    def __len__(self) -> int:
        return len(self.products)

    def matrix(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n:
            raise ValueError(f"states have shape {X.shape}, expected (*, {self.n})")
        coords = np.array([c for c, _ in self.factor_pool], dtype=int)
        offsets = np.array([o for _, o in self.factor_pool], dtype=float)
        F = X[:, coords] - offsets[None, :]
        out = np.empty((X.shape[0], len(self.products)))
        for j, prod in enumerate(self.products):
            col = np.ones(X.shape[0])
            for idx in prod:
                col = col * F[:, idx]
            out[:, j] = col
        return out

    def vector(self, x) -> np.ndarray:
        return self.matrix(np.asarray(x, dtype=float)[None, :])[0]

    def matrix_at(self, X, shift) -> np.ndarray:
        # offsets already place the attractors; an extra shift never applies
        return self.matrix(X)

    def vector_at(self, x, shift) -> np.ndarray:
        return self.vector(x)

    def to_json_dict(self) -> dict:
        return {
            "kind": "equilibrium_set",
            "n": self.n,
            "d": self.d,
            "attractors": [list(p) for p in self.attractor_points],
            "factor_pool": [[c, o] for c, o in self.factor_pool],
            "products": [list(p) for p in self.products],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "EquilibriumSetBasis":
        basis = build_multiset_basis(
            np.asarray(data["attractors"], dtype=float), int(data["d"])
        )
        stored = tuple(tuple(int(i) for i in p) for p in data["products"])
        if stored != basis.products:
            raise ValueError("stored product table does not match canonical enumeration")
        return basis


def build_multiset_basis(attractors, d: int) -> EquilibriumSetBasis:
    """Enumerate all factor multisets of size <= d that hit every attractor.

    The pool is the set union of per-attractor factor sets, so factors
    shared between attractors (equal coordinate values) enter once. The
    length comes from this enumeration; no closed form is assumed.
    """
    A = np.atleast_2d(np.asarray(attractors, dtype=float))
    if A.shape[0] < 1:
        raise ValueError("at least one attractor point required")
    if d < 1:
        raise ValueError("degree must be >= 1")
    if len({tuple(p) for p in A}) != A.shape[0]:
        raise ValueError("attractor points must be distinct")
    n = A.shape[1]
    l = A.shape[0]

    pool = sorted({(j, float(A[i, j])) for i in range(l) for j in range(n)})
    # which attractors each pool factor vanishes at
    covers = []
    for coord, offset in pool:
        covers.append(frozenset(i for i in range(l) if A[i, coord] == offset))

    everyone = frozenset(range(l))
    products = []
    for size in range(1, d + 1):
        for combo in itertools.combinations_with_replacement(range(len(pool)), size):
            hit = frozenset().union(*(covers[i] for i in combo))
            if hit == everyone:
                products.append(tuple(combo))
    if not products:
        raise ValueError(
            f"no product of degree <= {d} vanishes on all {l} attractors; increase d"
        )
    return EquilibriumSetBasis(
        n=n, d=d,
        attractor_points=tuple(tuple(float(v) for v in p) for p in A),
        factor_pool=tuple(pool),
        products=tuple(products),
    )


@dataclass(frozen=True)
class EquilibriumSet:
    """Finite points plus discretized limit cycles forming the attractor set."""

    points: np.ndarray                    # (p, n)
    cycles: tuple = ()                    # closed polylines, each (k_i >= 3, n)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, 0)
        else:
            pts = np.atleast_2d(pts)
        cycles = tuple(np.atleast_2d(np.asarray(c, dtype=float)) for c in self.cycles)
        for c in cycles:
            if c.shape[0] < 3:
                raise ValueError("cycle polylines need at least 3 vertices")
            if not np.all(np.isfinite(c)):
                raise ValueError("cycle coordinates must be finite")
        if not np.all(np.isfinite(pts)):
            raise ValueError("equilibrium points must be finite")
        if pts.shape[0] == 0 and not cycles:
            raise ValueError("equilibrium set must not be empty")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "cycles", cycles)

    @property
    def dim(self) -> int:
        return self.points.shape[1] if self.points.size else self.cycles[0].shape[1]

    def to_json_dict(self) -> dict:
        return {
            "points": [list(map(float, p)) for p in self.points],
            "cycles": [[list(map(float, v)) for v in c] for c in self.cycles],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "EquilibriumSet":
        return cls(points=np.asarray(data.get("points", []), dtype=float),
                   cycles=tuple(np.asarray(c, dtype=float) for c in data.get("cycles", [])))


def _segment_distance_sq(x: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        diff = x - a
        return float(diff @ diff)
    t = float((x - a) @ ab) / denom
    t = min(1.0, max(0.0, t))
    diff = x - (a + t * ab)
    return float(diff @ diff)


def weight_r(eq_set: EquilibriumSet, x, snap_tol: float = 1e-9) -> float:
    """Squared Euclidean distance to the attractor set; snapped to 0 near it.

    Cycle polylines contribute exact point-to-segment distances over their
    closed edge list.
    """
    x = np.asarray(x, dtype=float)
    best = np.inf
    if eq_set.points.size:
        d = eq_set.points - x[None, :]
        best = float(np.min(np.einsum("ij,ij->i", d, d)))
    for cycle in eq_set.cycles:
        k = cycle.shape[0]
        for i in range(k):
            d2 = _segment_distance_sq(x, cycle[i], cycle[(i + 1) % k])
            if d2 < best:
                best = d2
    return 0.0 if best < snap_tol ** 2 else best


@dataclass(frozen=True)
class WeightFunction:
    """Callable squared-distance weight around an attractor set."""

    reference_set: EquilibriumSet
    snap_tol: float = 1e-9

    def __call__(self, x) -> float:
        return weight_r(self.reference_set, x, self.snap_tol)

    def to_json_dict(self) -> dict:
        d = self.reference_set.to_json_dict()
        d["snap_tol"] = self.snap_tol
        return d

    @classmethod
    def from_json_dict(cls, data: dict) -> "WeightFunction":
        return cls(reference_set=EquilibriumSet.from_json_dict(data),
                   snap_tol=float(data.get("snap_tol", 1e-9)))


def assemble_general(points, basis, weight):
    """Weighted regression: targets divided by r(x_i) before assembly.

    Points sitting on the attractor set (r below the snap tolerance) have
    no finite target and are rejected with a diagnostic; exclude them
    upstream.
    """
    r = np.array([float(weight(p.x)) for p in points])
    snap = getattr(weight, "snap_tol", 1e-9)
    on_set = r <= snap ** 2
    if np.any(on_set):
        raise ValueError(
            f"{int(on_set.sum())} regression points lie on the attractor set "
            f"(weight <= {snap ** 2:.1e}); remove them before assembly"
        )
    return assemble_basic(points, basis, shift=None, weights=r)


def classify_targets(trajectories, attractors, capture_radius: float = 1e-2):
    """Assign each convergent trajectory the nearest attractor of its endpoint.

    Returns (classified, excluded): classified is a list of (trajectory,
    attractor index); excluded counts convergent trajectories whose final
    sample is not within capture_radius of any listed attractor.
    """
    A = np.atleast_2d(np.asarray(attractors, dtype=float))
    classified = []
    excluded = 0
    for traj in trajectories:
        if not traj.is_convergent:
            continue
        final = traj.samples[-1]
        dists = np.linalg.norm(A - final[None, :], axis=1)
        k = int(np.argmin(dists))
        if dists[k] <= capture_radius:
            classified.append((traj, k))
        else:
            excluded += 1
    return classified, excluded


def multi_equilibrium_estimate(trajectories, attractors, d: int,
                               config: SolverConfig | None = None,
                               capture_radius: float = 1e-2,
                               provenance: dict | None = None):
    """Full multi-attractor pipeline over a trajectory batch.

    Each convergent trajectory is shifted by its own target attractor when
    accumulating its value; the basis vanishes on the whole attractor set,
    so no global shift applies. Returns (estimate, solution, info).
    """
    A = np.atleast_2d(np.asarray(attractors, dtype=float))
    classified, excluded = classify_targets(trajectories, A, capture_radius)
    if not classified:
        raise ValueError("no convergent trajectory reaches a listed attractor")
    pairs = [
        (traj.x0.copy(), lyapunov_value(traj, shift=A[k]))
        for traj, k in classified
    ]
    points = to_regression(pairs)
    basis = build_multiset_basis(A, d)
    problem = assemble_basic(points, basis)
    solution = solve(problem, config or SolverConfig())
    info = {
        "n_used": len(classified),
        "n_excluded_targets": excluded,
        "targets": [k for _, k in classified],
    }
    est = extract_estimate(
        solution, basis, np.zeros(A.shape[1]), points,
        provenance=dict(provenance or {}, excluded_targets=excluded),
    )
    return est, solution, info


def _refine_return(field, state, target, window: float, rounds: int = 3,
                   substeps: int = 100) -> float:
    """Closest approach of the orbit from `state` to `target` within `window`.

    Repeatedly re-integrates a shrinking bracket with a 100x finer step,
    so the achievable resolution is window / substeps**rounds.
    """
    from .dynamics import rk4_step

    cur = tuple(target * 0.0 + np.asarray(state, dtype=float))
    best = float(np.linalg.norm(np.asarray(cur) - target))
    for _ in range(rounds):
        h = window / substeps
        states = [cur]
        for _k in range(substeps):
            states.append(rk4_step(field, states[-1], h))
        dists = [float(np.linalg.norm(np.asarray(s) - target)) for s in states]
        k = int(np.argmin(dists))
        best = min(best, dists[k])
        cur = states[max(0, k - 1)]
        window = 2.0 * h
    return best


def trace_limit_cycle(system, x0, cfg, transient_time: float = 30.0,
                      search_time: float = 20.0, return_tol: float = 1e-6):
    """Discretize a stable limit cycle as a closed polyline.

    Integrates past a transient, locates the nearest return to the
    recording start, and certifies the period by refining the closest
    approach below return_tol. Deliberately minimal; for anything
    delicate supply the polyline yourself.
    """
    from .dataset import StateBox
    from .dynamics import IntegratorConfig, integrate

    span = np.full(system.dimension, 1e6)
    wide = StateBox(-span, span)
    settle = integrate(
        system, x0,
        IntegratorConfig(dt=cfg.dt, run_time=transient_time, record_stride=cfg.record_stride),
        wide,
    )
    start = settle.samples[-1]
    orbit = integrate(
        system, start,
        IntegratorConfig(dt=cfg.dt, run_time=search_time, record_stride=1),
        wide,
    )
    pts = orbit.samples
    min_steps = 10
    if pts.shape[0] <= min_steps + 2:
        raise ValueError("search window too short for a return search")
    dists = np.linalg.norm(pts[min_steps:] - pts[0][None, :], axis=1)
    k = int(np.argmin(dists)) + min_steps
    gap = _refine_return(system.field, pts[k - 1], pts[0], window=2.0 * cfg.dt)
    if gap > return_tol:
        raise ValueError(
            f"no return within {return_tol:g} (closest approach {gap:.3e}); "
            "longer transient or finer step needed"
        )
    return pts[:k]
