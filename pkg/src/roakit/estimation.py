"""Sublevel-set estimation: problem assembly, extraction, and evaluation.

The fit maps basis vectors z_i = Z(x_i - shift) to targets y_i through a
quadratic form z^T P z with P constrained to the PSD cone:

    maximize sum_i gamma_i  s.t.  |z_i^T P z_i - y_i| <= -gamma_i,  P >= 0

an L1 regression written with one aux scalar per point. The estimated
surrogate is V*(x) = 10^(z^T P* z) - 1 and the region estimate is its
sublevel set at gamma* = max_i V*(x_i) over the convergent sample.

Divergent initial conditions are kept out of the estimate by an epigraph
encoding of `min over divergent quadratic values > max over convergent
ones`: a single aux scalar t with

    z_d^T P z_d >= t + margin   for every divergent IC
    t >= z_j^T P z_j            for every convergent IC

(the strict inequality is closed with a configurable positive margin).
A convergent trajectory therefore contributes three constraints and a
divergent one contributes one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import CONVERGENT, DIVERGENT, RegressionDataset, StateBox, sample_initial_conditions
from .io import canonical_digest
from .numerics import MonomialBasis, nearest_psd, psd_check, symmetric_eigenvalues, symmetrize
from .sdp import SdpProblem, SdpSolution, SolverConfig, solve, violation_report

__all__ = [
    "LyapunovEstimate",
    "LevelSetGrid",
    "VstarHistogram",
    "ValidationResult",
    "assemble_basic",
    "assemble_with_divergent",
    "extract_estimate",
    "membership",
    "level_set_grid",
    "vstar_histogram",
    "validate",
    "solve_divergent_soft",
]

DEFAULT_MARGIN = 1e-6


def _basis_vectors(basis, X, shift) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return basis.matrix_at(X, np.asarray(shift, dtype=float))


def _effective_targets(points, weights):
    y = np.array([p.y for p in points], dtype=float)
    if weights is None:
        weights = np.array([1.0 if p.weight is None else p.weight for p in points])
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (len(points),):
            raise ValueError("weights must align with points")
    if np.any(weights <= 0.0):
        raise ValueError("weights must be positive")
    return y / weights


def assemble_basic(points, basis, shift=None, weights=None) -> SdpProblem:
    """L1 regression problem: one aux gamma per point, two rows per point."""
    if len(points) == 0:
        raise ValueError("at least one convergent regression point is required")
    n = points[0].x.shape[0]
    shift = np.zeros(n) if shift is None else np.asarray(shift, dtype=float)
    y = _effective_targets(points, weights)
    Z = _basis_vectors(basis, [p.x for p in points], shift)
    q = Z.shape[1]
    m = len(points)

    A = np.empty((2 * m, q, q))
    B = np.zeros((2 * m, m))
    c = np.empty(2 * m)
    outer = np.einsum("ij,ik->ijk", Z, Z)
    A[0::2] = outer
    A[1::2] = -outer
    B[0::2, np.arange(m)] = -1.0
    B[1::2, np.arange(m)] = -1.0
    c[0::2] = y
    c[1::2] = -y
    g = -np.ones(m)
    return SdpProblem(q=q, n_aux=m, obj_matrix=np.zeros((q, q)), obj_aux=g, A=A, B=B, c=c)


def assemble_with_divergent(points, divergent_ics, basis, shift=None,
                            margin: float = DEFAULT_MARGIN, weights=None) -> SdpProblem:
    """Regression rows plus the divergent-exclusion epigraph constraints.

    Aux layout: gammas for the m points, then the single threshold t.
    Row layout: 2m regression rows, s exclusion rows, m coupling rows.
    Falls back to the plain regression problem when no divergent ICs exist.
    """
    divergent_ics = np.asarray(divergent_ics, dtype=float)
    if divergent_ics.size == 0:
        return assemble_basic(points, basis, shift=shift, weights=weights)
    base = assemble_basic(points, basis, shift=shift, weights=weights)
    n = points[0].x.shape[0]
    shift = np.zeros(n) if shift is None else np.asarray(shift, dtype=float)
    if margin <= 0.0:
        raise ValueError("margin must be positive (it closes a strict inequality)")

    Zc = _basis_vectors(basis, [p.x for p in points], shift)
    Zd = _basis_vectors(basis, divergent_ics, shift)
    q = base.q
    m = len(points)
    s = Zd.shape[0]
    na = m + 1

    A = np.empty((2 * m + s + m, q, q))
    B = np.zeros((A.shape[0], na))
    c = np.empty(A.shape[0])
    A[: 2 * m] = base.A
    B[: 2 * m, :m] = base.B
    c[: 2 * m] = base.c
    outer_d = np.einsum("ij,ik->ijk", Zd, Zd)
    A[2 * m: 2 * m + s] = outer_d
    B[2 * m: 2 * m + s, m] = -1.0
    c[2 * m: 2 * m + s] = margin
    outer_c = np.einsum("ij,ik->ijk", Zc, Zc)
    A[2 * m + s:] = -outer_c
    B[2 * m + s:, m] = 1.0
    c[2 * m + s:] = 0.0
    g = np.concatenate([-np.ones(m), [0.0]])
    return SdpProblem(q=q, n_aux=na, obj_matrix=np.zeros((q, q)), obj_aux=g, A=A, B=B, c=c)


@dataclass
class LyapunovEstimate:
    """Fitted surrogate plus the level that defines the region estimate."""

    basis: object                 # MonomialBasis or EquilibriumSetBasis
    gram: np.ndarray              # P*
    shift: np.ndarray
    gamma_star: float
    weight: object = None         # optional set-distance weight (general pipeline)
    status: str = "unknown"
    provenance: dict = field(default_factory=dict)
    degenerate: bool = False
    degenerate_reason: str | None = None

    def quad_values(self, X) -> np.ndarray:
        Z = _basis_vectors(self.basis, X, self.shift)
        return np.einsum("ij,jk,ik->i", Z, self.gram, Z)

    def vstar_values(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        expo = self.quad_values(X)
        if self.weight is not None:
            expo = expo * np.array([self.weight(x) for x in X])
        with np.errstate(over="ignore"):
            return np.power(10.0, expo) - 1.0

    def vstar(self, x) -> float:
        return float(self.vstar_values(np.asarray(x, dtype=float)[None, :])[0])

    def contains(self, x) -> bool:
        return bool(self.vstar(x) <= self.gamma_star)

    def contains_many(self, X) -> np.ndarray:
        return self.vstar_values(X) <= self.gamma_star

    def eigenvalues(self) -> np.ndarray:
        return symmetric_eigenvalues(self.gram)

    def psd_diagnostic(self, tol: float = 0.0) -> tuple[bool, float]:
        return psd_check(self.eigenvalues(), tol)

    def projected_psd(self) -> "LyapunovEstimate":
        """Copy with the Gram matrix replaced by its nearest PSD projection."""
        out = LyapunovEstimate(
            basis=self.basis, gram=nearest_psd(self.gram), shift=self.shift.copy(),
            gamma_star=self.gamma_star, weight=self.weight, status=self.status,
            provenance=dict(self.provenance, psd_projected=True),
            degenerate=self.degenerate, degenerate_reason=self.degenerate_reason,
        )
        return out

    def to_json_dict(self) -> dict:
        return {
            "basis": self.basis.to_json_dict(),
            "P": self.gram.tolist(),
            "shift": self.shift.tolist(),
            "gamma_star": self.gamma_star,
            "eigenvalues": self.eigenvalues().tolist(),
            "status": self.status,
            "weight_set": None if self.weight is None else self.weight.to_json_dict(),
            "provenance": self.provenance,
            "degenerate": self.degenerate,
            "degenerate_reason": self.degenerate_reason,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "LyapunovEstimate":
        bdata = data["basis"]
        if bdata.get("kind", "monomial") == "monomial":
            basis = MonomialBasis.from_json_dict(bdata)
        else:
            from .equilibrium import EquilibriumSetBasis

            basis = EquilibriumSetBasis.from_json_dict(bdata)
        weight = None
        if data.get("weight_set") is not None:
            from .equilibrium import WeightFunction

            weight = WeightFunction.from_json_dict(data["weight_set"])
        return cls(
            basis=basis,
            gram=symmetrize(np.asarray(data["P"], dtype=float)),
            shift=np.asarray(data["shift"], dtype=float),
            gamma_star=float(data["gamma_star"]),
            weight=weight,
            status=data.get("status", "unknown"),
            provenance=data.get("provenance", {}),
            degenerate=bool(data.get("degenerate", False)),
            degenerate_reason=data.get("degenerate_reason"),
        )


def extract_estimate(solution: SdpSolution, basis, shift, points,
                     weight=None, provenance=None) -> LyapunovEstimate:
    """Build the estimate from a solver result, recomputing gamma*.

    gamma* is always recomputed from the convergent points so the stored
    level and the stored Gram matrix can never drift apart. Solver failure
    modes produce a flagged (degenerate) estimate, not an error: reports
    must be able to show them.
    """
    n = points[0].x.shape[0] if points else len(np.atleast_1d(shift))
    shift = np.zeros(n) if shift is None else np.asarray(shift, dtype=float)
    est = LyapunovEstimate(
        basis=basis,
        gram=symmetrize(solution.P),
        shift=shift,
        gamma_star=-np.inf,
        weight=weight,
        status=solution.status,
        provenance=dict(provenance or {}),
    )
    est.provenance.setdefault("solver", {})
    est.provenance["solver"] = {
        "status": solution.status,
        "iterations": solution.iterations,
        "max_violation": solution.max_violation,
        "objective": solution.objective,
    }
    if points:
        values = est.vstar_values(np.array([p.x for p in points]))
        est.gamma_star = float(values.max())
    if not np.any(est.gram):
        est.degenerate = True
        est.degenerate_reason = "zero Gram matrix: estimate accepts every state"
    if not np.isfinite(est.gamma_star):
        est.degenerate = True
        est.degenerate_reason = est.degenerate_reason or "gamma* is not finite"
    return est


def membership(est: LyapunovEstimate, x) -> bool:
    """x belongs to the estimated region iff V*(x) <= gamma*."""
    return est.contains(x)


def solve_divergent_soft(points, divergent_ics, basis, shift=None,
                         margin: float = DEFAULT_MARGIN,
                         config: SolverConfig | None = None,
                         max_rounds: int = 4):
    """Exclusion with retreat: drop the worst-violated divergent rows and re-solve.

    The hard problem guarantees every divergent IC sits outside the
    estimate but is often infeasible at fixed degree. This mode re-solves
    with the unsatisfiable exclusion rows removed, keeping the divergent
    count inside the estimate small instead of failing. Returns
    (solution, kept_divergent_ics, n_excluded).
    """
    cfg = config or SolverConfig()
    kept = np.asarray(divergent_ics, dtype=float)
    n_excluded = 0
    for _ in range(max_rounds):
        problem = assemble_with_divergent(points, kept, basis, shift=shift, margin=margin)
        solution = solve(problem, cfg)
        if solution.is_optimal or kept.size == 0:
            return solution, kept, n_excluded
        m = len(points)
        s = kept.shape[0]
        rep = violation_report(problem, solution.P, solution.aux)
        excl = rep.violations[2 * m: 2 * m + s]
        bad = excl > cfg.tol
        if not np.any(bad):
            return solution, kept, n_excluded
        n_excluded += int(bad.sum())
        kept = kept[~bad]
    return solution, kept, n_excluded


# ---------------------------------------------------------------------------
# Evaluation artifacts


@dataclass
class LevelSetGrid:
    axis_indices: tuple[int, int]
    axis_names: tuple[str, str]
    x_values: np.ndarray
    y_values: np.ndarray
    vstar: np.ndarray            # (ny, nx), row-major over (y, x)
    member: np.ndarray           # same shape, bool
    fixed_coords: dict

    def member_count(self) -> int:
        return int(self.member.sum())

    def rows(self):
        for iy, yv in enumerate(self.y_values):
            for ix, xv in enumerate(self.x_values):
                yield (float(xv), float(yv), float(self.vstar[iy, ix]), bool(self.member[iy, ix]))


def level_set_grid(est: LyapunovEstimate, fixed_coords: dict, free_axes,
                   bounds, resolution) -> LevelSetGrid:
    """Evaluate V* and membership over a 2-D slice of the state space.

    fixed_coords maps axis index -> value for every coordinate not in
    free_axes; bounds is ((x_lo, x_hi), (y_lo, y_hi)) for the two free
    axes and resolution is (nx, ny).
    """
    ax = tuple(int(a) for a in free_axes)
    if len(ax) != 2 or ax[0] == ax[1]:
        raise ValueError("exactly two distinct free axes required")
    n = est.shift.shape[0]
    fixed = {int(k): float(v) for k, v in fixed_coords.items()}
    if set(fixed) & set(ax):
        raise ValueError("free axes overlap fixed coordinates")
    if set(fixed) | set(ax) != set(range(n)):
        raise ValueError("fixed coordinates plus free axes must cover every axis")

    (x_lo, x_hi), (y_lo, y_hi) = bounds
    nx, ny = (int(r) for r in resolution)
    if nx < 1 or ny < 1:
        raise ValueError("resolution must be >= 1 per axis")
    x_vals = np.linspace(x_lo, x_hi, nx) if nx > 1 else np.array([(x_lo + x_hi) / 2.0])
    y_vals = np.linspace(y_lo, y_hi, ny) if ny > 1 else np.array([(y_lo + y_hi) / 2.0])

    X = np.empty((ny * nx, n))
    for k, v in fixed.items():
        X[:, k] = v
    gx, gy = np.meshgrid(x_vals, y_vals)
    X[:, ax[0]] = gx.ravel()
    X[:, ax[1]] = gy.ravel()
    v = est.vstar_values(X).reshape(ny, nx)
    member = v <= est.gamma_star
    names = tuple(f"x{a}" for a in ax)
    return LevelSetGrid(axis_indices=ax, axis_names=names, x_values=x_vals,
                        y_values=y_vals, vstar=v, member=member, fixed_coords=fixed)


@dataclass
class VstarHistogram:
    """Sparse class-wise histogram: only occupied bins are stored.

    Bin k covers [k*bin_width, (k+1)*bin_width); edges are therefore
    aligned to multiples of the bin width by construction. V* values can
    span many orders of magnitude, so dense storage is not an option.
    """

    bin_width: float
    bin_indices: np.ndarray        # sorted occupied bin numbers
    convergent_counts: np.ndarray
    divergent_counts: np.ndarray
    outside_count: int
    gamma_star: float
    n_nonfinite: int = 0           # off-scale values (still counted as outside)

    @property
    def edges(self) -> np.ndarray:
        """Left edges of the occupied bins."""
        return self.bin_indices * self.bin_width

    def rows(self):
        for k, cc, dc in zip(self.bin_indices, self.convergent_counts, self.divergent_counts):
            lo = k * self.bin_width
            yield (float(lo), float(lo + self.bin_width), int(cc), int(dc))


def vstar_histogram(est: LyapunovEstimate, convergent_ics, divergent_ics,
                    bin_width: float) -> VstarHistogram:
    """Histogram of V* for both IC classes plus the divergent-outside count."""
    if bin_width <= 0.0:
        raise ValueError("bin_width must be positive")
    n = est.shift.shape[0]
    conv = np.atleast_2d(np.asarray(convergent_ics, dtype=float)) if np.size(convergent_ics) else np.zeros((0, n))
    div = np.atleast_2d(np.asarray(divergent_ics, dtype=float)) if np.size(divergent_ics) else np.zeros((0, n))
    v_conv = est.vstar_values(conv) if conv.shape[0] else np.zeros(0)
    v_div = est.vstar_values(div) if div.shape[0] else np.zeros(0)

    def bin_of(v):
        return np.floor(v[np.isfinite(v)] / bin_width).astype(np.int64)

    kc, kd = bin_of(v_conv), bin_of(v_div)
    occupied = np.unique(np.concatenate([kc, kd]))
    cc = np.array([np.count_nonzero(kc == k) for k in occupied], dtype=np.int64)
    dc = np.array([np.count_nonzero(kd == k) for k in occupied], dtype=np.int64)
    outside = int(np.count_nonzero(v_div > est.gamma_star))
    nonfinite = int(np.count_nonzero(~np.isfinite(v_conv)) + np.count_nonzero(~np.isfinite(v_div)))
    return VstarHistogram(bin_width=float(bin_width), bin_indices=occupied,
                          convergent_counts=cc, divergent_counts=dc,
                          outside_count=outside, gamma_star=est.gamma_star,
                          n_nonfinite=nonfinite)


@dataclass
class ValidationResult:
    true_in: int
    false_in: int
    true_out: int
    false_out: int

    @property
    def total(self) -> int:
        return self.true_in + self.false_in + self.true_out + self.false_out

    @property
    def accuracy(self) -> float:
        return (self.true_in + self.true_out) / self.total if self.total else float("nan")

    def to_json_dict(self) -> dict:
        return {"true_in": self.true_in, "false_in": self.false_in,
                "true_out": self.true_out, "false_out": self.false_out,
                "accuracy": self.accuracy if self.total else None}


def _ground_truth_in_region(traj, est: LyapunovEstimate, capture_radius: float) -> bool:
    """A trajectory counts as inside iff it stayed within limits and, when the
    estimate targets a specific attractor set, ended near that set."""
    if not traj.is_convergent:
        return False
    final = traj.samples[-1]
    targets = getattr(est.basis, "attractor_points", None)
    if targets is not None:
        d = min(float(np.linalg.norm(final - np.asarray(t))) for t in targets)
        return d <= capture_radius
    if est.weight is not None:
        return float(est.weight(final)) <= capture_radius ** 2
    return True


def validate(est: LyapunovEstimate, system, box: StateBox, count: int, seed: int,
             cfg, limits: StateBox, capture_radius: float = 1e-2) -> ValidationResult:
    """Fresh-IC confusion matrix: estimate membership vs integration outcome."""
    from .dynamics import integrate

    res = ValidationResult(0, 0, 0, 0)
    if count < 1:
        return res
    ics = sample_initial_conditions(box, count, seed)
    for x0 in ics:
        traj = integrate(system, x0, cfg, limits)
        actual_in = _ground_truth_in_region(traj, est, capture_radius)
        predicted_in = est.contains(x0)
        if predicted_in and actual_in:
            res.true_in += 1
        elif predicted_in and not actual_in:
            res.false_in += 1
        elif not predicted_in and not actual_in:
            res.true_out += 1
        else:
            res.false_out += 1
    return res


def dataset_digest(dataset: RegressionDataset) -> str:
    return canonical_digest(dataset.to_json_dict())
