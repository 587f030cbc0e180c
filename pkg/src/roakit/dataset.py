"""Trajectory containers and the transforms that turn them into regression data.

A simulated trajectory with samples a(j), j = 0..K, spaced dt_sample apart,
is assigned the accumulated value

    V(x0) = sum_j ||a(j) - shift||^2 * dt_sample

which approximates the integral of the squared distance to the attractor
along the solution. Convergent initial conditions map to regression targets
y = log10(1 + V); divergent ones are kept only as exclusion points.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CONVERGENT",
    "DIVERGENT",
    "StateBox",
    "Trajectory",
    "RegressionPoint",
    "RegressionDataset",
    "TruncationWarning",
    "lyapunov_value",
    "partition_trajectory",
    "to_regression",
    "sample_initial_conditions",
    "equal_time_cuts",
    "build_regression_dataset",
    "save_batch",
    "load_batch",
]

CONVERGENT = "convergent"
DIVERGENT = "divergent"


class TruncationWarning(UserWarning):
    """The neglected tail of a truncated trajectory integral may be significant."""


@dataclass(frozen=True)
class StateBox:
    """Axis-aligned box of per-coordinate (min, max) bounds."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("box must satisfy min <= max per coordinate")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_pairs(cls, pairs) -> "StateBox":
        arr = np.asarray(pairs, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError("expected a list of (min, max) pairs")
        return cls(arr[:, 0], arr[:, 1])

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(np.isfinite(x)) and np.all(x >= self.lo) and np.all(x <= self.hi))

    def require_strict(self):
        """Sampling boxes need min < max on every coordinate."""
        if np.any(self.lo >= self.hi):
            raise ValueError("box must satisfy min < max per coordinate")

    def to_pairs(self) -> list:
        return [[float(a), float(b)] for a, b in zip(self.lo, self.hi)]


@dataclass
class Trajectory:
    """Time-sampled solution from one initial condition."""

    x0: np.ndarray
    samples: np.ndarray          # (K+1, n), samples[0] == x0
    dt: float                    # integrator step
    stride: int                  # steps between recorded samples
    label: str                   # CONVERGENT or DIVERGENT
    exit_time: float | None = None
    target: int | None = None    # attractor index for multi-equilibrium runs
    diagnostic: str | None = None
    traj_id: int = 0

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2 or self.samples.shape[0] < 1:
            raise ValueError("samples must be a (K+1, n) array with K >= 0")
        if not np.array_equal(self.samples[0], self.x0):
            raise ValueError("samples[0] must equal x0")
        if self.label not in (CONVERGENT, DIVERGENT):
            raise ValueError(f"unknown label {self.label!r}")
        if self.dt <= 0 or self.stride < 1:
            raise ValueError("dt must be positive and stride >= 1")

    @property
    def dt_sample(self) -> float:
        return self.dt * self.stride

    @property
    def is_convergent(self) -> bool:
        return self.label == CONVERGENT


@dataclass(frozen=True)
class RegressionPoint:
    x: np.ndarray
    y: float
    weight: float | None = None   # general-set pipeline divides targets by this

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        object.__setattr__(self, "x", x)
        if not np.isfinite(self.y):
            raise ValueError("regression target must be finite")
        if self.weight is None and self.y < 0.0:
            raise ValueError("unweighted regression targets must be nonnegative")


def lyapunov_value(traj: Trajectory, shift=None) -> float:
    """Accumulated squared distance to `shift` along a convergent trajectory.

    Riemann sum over all recorded samples with weight dt_sample. `shift`
    defaults to the origin; passing the attractor location makes the
    integrand vanish there, which is what sublevel-set estimates need.
    """
    if not traj.is_convergent:
        raise ValueError("divergent trajectories carry no accumulated value")
    sq = _squared_distances(traj.samples, shift)
    return float(sq.sum() * traj.dt_sample)


def _squared_distances(samples: np.ndarray, shift) -> np.ndarray:
    if shift is None:
        diff = samples
    else:
        diff = samples - np.asarray(shift, dtype=float)[None, :]
    return np.einsum("ij,ij->i", diff, diff)


def partition_trajectory(traj: Trajectory, cut_indices, shift=None) -> list[tuple[np.ndarray, float]]:
    """Mid-trajectory states reused as extra initial conditions.

    For each cut index M the pair (a(M), suffix value from M to K) is
    emitted. All tail sums come from one reverse pass, so the full value
    decomposes exactly as prefix(M) + suffix(M).
    """
    if not traj.is_convergent:
        raise ValueError("divergent trajectories cannot be partitioned")
    K = traj.samples.shape[0] - 1
    sq = _squared_distances(traj.samples, shift)
    suffix = np.cumsum(sq[::-1])[::-1] * traj.dt_sample
    out = []
    for m in cut_indices:
        m = int(m)
        if not 1 <= m <= K:
            raise ValueError(f"cut index {m} outside 1..{K}")
        out.append((traj.samples[m].copy(), float(suffix[m])))
    return out


def equal_time_cuts(n_samples: int, parts: int = 3) -> list[int]:
    """Cut indices splitting 0..K into `parts` equal time spans."""
    K = n_samples - 1
    cuts = {int(round(K * k / parts)) for k in range(1, parts)}
    return sorted(m for m in cuts if 1 <= m <= K)


def to_regression(points, weights=None) -> list[RegressionPoint]:
    """Map (state, V) pairs to regression points with y = log10(1 + V)."""
    out = []
    for idx, (x, v) in enumerate(points):
        if v < 0.0:
            raise ValueError(f"negative accumulated value {v} at point {idx}")
        w = None if weights is None else float(weights[idx])
        out.append(RegressionPoint(x=np.asarray(x, dtype=float), y=float(np.log10(1.0 + v)), weight=w))
    return out


def sample_initial_conditions(box: StateBox, count: int, seed: int) -> np.ndarray:
    """Uniform independent samples in the box; deterministic per seed."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    return rng.uniform(box.lo, box.hi, size=(count, box.dim))


@dataclass
class RegressionDataset:
    """Regression inputs assembled from a trajectory batch."""

    shift: np.ndarray
    points: list[RegressionPoint]
    divergent_ics: np.ndarray           # (s, n); empty (0, n) when none
    n_convergent_trajectories: int = 0
    n_partition_points: int = 0
    n_truncation_flags: int = 0

    def convergent_states(self) -> np.ndarray:
        return np.array([p.x for p in self.points], dtype=float)

    def targets(self) -> np.ndarray:
        return np.array([p.y for p in self.points], dtype=float)

    def to_json_dict(self) -> dict:
        return {
            "basis_shift": [float(v) for v in self.shift],
            "points": [
                {"x": [float(v) for v in p.x], "y": p.y, "label": CONVERGENT}
                for p in self.points
            ],
            "divergent_ics": [[float(v) for v in x] for x in self.divergent_ics],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "RegressionDataset":
        shift = np.asarray(data["basis_shift"], dtype=float)
        points = [
            RegressionPoint(x=np.asarray(rec["x"], dtype=float), y=float(rec["y"]))
            for rec in data["points"]
        ]
        div = np.asarray(data["divergent_ics"], dtype=float)
        if div.size == 0:
            div = np.zeros((0, shift.shape[0]))
        return cls(shift=shift, points=points, divergent_ics=div,
                   n_convergent_trajectories=len(points))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh)

    @classmethod
    def load(cls, path) -> "RegressionDataset":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


def build_regression_dataset(
    trajectories,
    shift=None,
    partition: bool | None = None,
    partition_parts: int = 3,
    partition_limit: int = 500,
    truncation_ratio: float = 1e-3,
) -> RegressionDataset:
    """Assemble regression points and divergent ICs from a batch.

    partition=None enables equal-time partitioning automatically when the
    convergent set has at most `partition_limit` trajectories; partitioning
    a large batch only biases the sample toward the attractor.
    """
    trajectories = list(trajectories)
    convergent = [t for t in trajectories if t.is_convergent]
    divergent = [t for t in trajectories if not t.is_convergent]
    if partition is None:
        partition = 0 < len(convergent) <= partition_limit

    n = trajectories[0].samples.shape[1] if trajectories else 0
    shift_arr = np.zeros(n) if shift is None else np.asarray(shift, dtype=float)

    pairs: list[tuple[np.ndarray, float]] = []
    n_partition = 0
    n_flagged = 0
    for traj in convergent:
        total = lyapunov_value(traj, shift_arr)
        tail = float(_squared_distances(traj.samples[-1:], shift_arr)[0] * traj.dt_sample)
        if tail > truncation_ratio * total and total > 0.0:
            n_flagged += 1
        pairs.append((traj.x0.copy(), total))
        if partition:
            cuts = equal_time_cuts(traj.samples.shape[0], partition_parts)
            extra = partition_trajectory(traj, cuts, shift_arr)
            n_partition += len(extra)
            pairs.extend(extra)
    if n_flagged:
        warnings.warn(
            f"{n_flagged} trajectories have a truncated tail above "
            f"{truncation_ratio:g} of their accumulated value; consider a longer run time",
            TruncationWarning,
            stacklevel=2,
        )

    points = to_regression(pairs)
    div_ics = (
        np.array([t.x0 for t in divergent], dtype=float)
        if divergent else np.zeros((0, n))
    )
    return RegressionDataset(
        shift=shift_arr,
        points=points,
        divergent_ics=div_ics,
        n_convergent_trajectories=len(convergent),
        n_partition_points=n_partition,
        n_truncation_flags=n_flagged,
    )


def _trajectory_record(traj: Trajectory) -> dict:
    return {
        "id": traj.traj_id,
        "x0": [float(v) for v in traj.x0],
        "label": traj.label,
        "dt": traj.dt,
        "stride": traj.stride,
        "samples": [[float(v) for v in row] for row in traj.samples],
        "exit_time": traj.exit_time,
    }


def save_batch(trajectories, path) -> None:
    """Write a trajectory batch as JSON-lines, one record per trajectory."""
    with open(path, "w", encoding="utf-8") as fh:
        for traj in trajectories:
            fh.write(json.dumps(_trajectory_record(traj)) + "\n")


def load_batch(path) -> list[Trajectory]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.append(Trajectory(
                x0=np.asarray(rec["x0"], dtype=float),
                samples=np.asarray(rec["samples"], dtype=float),
                dt=float(rec["dt"]),
                stride=int(rec["stride"]),
                label=rec["label"],
                exit_time=rec["exit_time"],
                traj_id=int(rec["id"]),
            ))
    return out
