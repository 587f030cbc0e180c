"""ODE system definitions and a fixed-step RK4 integrator.

Three systems are bundled: the Van der Pol oscillator in reverse time
(single stable focus surrounded by a repelling limit cycle), a damped
pendulum with the angle measured from the inverted position (stable
wells at (+/-pi, 0)), and the 4-state longitudinal dynamics of the NASA
GTM scale aircraft with a pluggable aerodynamic coefficient model.

The integrator is deliberately fixed-step: the downstream accumulated
values are Riemann sums over uniformly spaced samples, so reproducible
sample spacing matters more than adaptive error control.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import CONVERGENT, DIVERGENT, StateBox, Trajectory

__all__ = [
    "SingularStateError",
    "TrimError",
    "GtmParameters",
    "AeroCoefficientModel",
    "IntegratorConfig",
    "OdeSystem",
    "gtm_vector_field",
    "vdp_reverse_vector_field",
    "pendulum_vector_field",
    "rk4_step",
    "integrate",
    "integrate_batch",
    "default_integrator_config",
    "surrogate_aero",
    "zero_aero",
    "load_aero_model",
    "save_aero_model",
    "find_gtm_trim",
    "vdp_reverse_system",
    "pendulum_system",
    "gtm_system",
    "gtm_ic_bounds",
    "gtm_trajectory_limits",
]


class SingularStateError(ValueError):
    """Vector field evaluated at a state where it is undefined (e.g. V_A <= 0)."""


class TrimError(RuntimeError):
    """Trim search failed to converge."""


# ---------------------------------------------------------------------------
# GTM parameters and aerodynamic coefficient models


@dataclass(frozen=True)
class GtmParameters:
    """Constant parameters of the GTM longitudinal model plus fixed controls.

    Defaults are the published constants of the 5.5%-scale aircraft.
    Controls are held constant over a run: eta is elevator deflection
    (rad, negative deflection pitches up), thrust in newtons along the
    body x-axis.
    """

    wing_area: float = 0.550          # S [m^2]
    chord: float = 0.280              # mean aerodynamic chord [m]
    mass: float = 26.190              # [kg]
    inertia_yy: float = 5.768         # [kg m^2]
    engine_offset: float = 0.100      # l_t, engine vertical displacement [m]
    x_cg: float = -1.450              # [m]
    z_cg: float = -0.300              # [m]
    x_cg_ref: float = -1.460          # [m]
    z_cg_ref: float = -0.290          # [m]
    air_density: float = 1.200        # [kg/m^3]
    gravity: float = 9.810            # [m/s^2]
    eta: float = 0.0                  # elevator [rad]
    thrust: float = 20.0              # F [N]

    def __post_init__(self):
        for name in ("wing_area", "chord", "mass", "inertia_yy",
                     "engine_offset", "air_density", "gravity"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")


def _compile_terms(terms):
    """Fold a term list into a plain arithmetic lambda; this sits on the
    integrator hot path, where a generic power loop costs ~5x more."""
    if not terms:
        return lambda a, e, q: 0.0

    def factor(var, exp):
        if exp <= 4:
            return "*".join([var] * exp)
        return f"{var}**{exp}"

    parts = []
    for (i, j, k), c in terms:
        bits = [repr(c)] + [factor(v, p) for v, p in (("a", i), ("e", j), ("q", k)) if p > 0]
        parts.append("*".join(bits))
    return eval("lambda a, e, q: " + " + ".join(parts), {"__builtins__": {}})


class _PiecewisePolynomial:
    """Polynomial in (alpha, eta, qhat), optionally piecewise in alpha.

    pieces: list of (alpha_lo, alpha_hi, terms) sorted by alpha_lo, where
    terms is a list of ((i, j, k), coeff). Outside the covered alpha range
    the nearest edge piece extrapolates.
    """

    def __init__(self, pieces):
        self.pieces = sorted(
            ((float(lo), float(hi), [((int(i), int(j), int(k)), float(c))
                                     for (i, j, k), c in terms])
             for lo, hi, terms in pieces),
            key=lambda p: p[0],
        )
        if not self.pieces:
            raise ValueError("at least one piece required")
        self._breaks = [p[0] for p in self.pieces[1:]]
        self._evals = [_compile_terms(terms) for _lo, _hi, terms in self.pieces]

    def piece_index(self, alpha: float) -> int:
        idx = 0
        for b in self._breaks:
            if alpha >= b:
                idx += 1
            else:
                break
        return idx

    def piece_for(self, alpha: float):
        return self.pieces[self.piece_index(alpha)]

    def __call__(self, alpha: float, eta: float, qhat: float) -> float:
        return self._evals[self.piece_index(alpha)](alpha, eta, qhat)

    def to_json(self):
        return [
            {"alpha": [lo, hi], "terms": [[list(e), c] for e, c in terms]}
            for lo, hi, terms in self.pieces
        ]

    @classmethod
    def from_json(cls, data):
        if isinstance(data, dict):            # single-piece shorthand
            data = [data]
        pieces = []
        for rec in data:
            lo, hi = rec.get("alpha", (-math.inf, math.inf))
            terms = [(tuple(e), c) for e, c in rec["terms"]]
            pieces.append((lo, hi, terms))
        return cls(pieces)


_COEFF_NAMES = ("CD", "CL", "Cm", "CX", "CZ")


@dataclass(frozen=True)
class AeroCoefficientModel:
    """Dimensionless aerodynamic coefficients as functions of (alpha, eta, qhat)."""

    cd: _PiecewisePolynomial
    cl: _PiecewisePolynomial
    cm: _PiecewisePolynomial
    cx: _PiecewisePolynomial
    cz: _PiecewisePolynomial
    validity: dict = field(default_factory=dict)
    name: str = "aero"

    def coefficients(self, alpha: float, eta: float, qhat: float):
        return (self.cd(alpha, eta, qhat), self.cl(alpha, eta, qhat),
                self.cm(alpha, eta, qhat), self.cx(alpha, eta, qhat),
                self.cz(alpha, eta, qhat))

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "validity": {k: list(v) for k, v in self.validity.items()},
            "coefficients": {
                name: poly.to_json()
                for name, poly in zip(_COEFF_NAMES, (self.cd, self.cl, self.cm, self.cx, self.cz))
            },
        }


def _check_piece_continuity(poly: _PiecewisePolynomial, validity: dict, tol: float = 1e-6):
    """Adjacent pieces must agree at their shared alpha breakpoint."""
    eta_lo, eta_hi = validity.get("eta", (-0.5, 0.5))
    q_lo, q_hi = validity.get("qhat", (-1.0, 1.0))
    probes = [(e, q)
              for e in np.linspace(eta_lo, eta_hi, 3)
              for q in np.linspace(q_lo, q_hi, 3)]
    for left, right in zip(poly.pieces, poly.pieces[1:]):
        b = right[0]
        if not math.isfinite(b):
            continue

        def eval_terms(terms, a, e, q):
            return sum(c * a ** i * e ** j * q ** k for (i, j, k), c in terms)

        for e, q in probes:
            gap = abs(eval_terms(left[2], b, e, q) - eval_terms(right[2], b, e, q))
            if gap > tol:
                raise ValueError(
                    f"piecewise coefficient discontinuous at alpha={b}: gap {gap:.3e}"
                )


def load_aero_model(source) -> AeroCoefficientModel:
    """Load a coefficient model from a JSON file path or an already-parsed dict."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, encoding="utf-8") as fh:
            data = json.load(fh)
    else:
        data = source
    validity = {k: tuple(float(v) for v in vv) for k, vv in data.get("validity", {}).items()}
    polys = {}
    for name in _COEFF_NAMES:
        if name not in data["coefficients"]:
            raise ValueError(f"aero model missing coefficient {name}")
        poly = _PiecewisePolynomial.from_json(data["coefficients"][name])
        _check_piece_continuity(poly, validity)
        polys[name] = poly
    return AeroCoefficientModel(
        cd=polys["CD"], cl=polys["CL"], cm=polys["Cm"],
        cx=polys["CX"], cz=polys["CZ"],
        validity=validity, name=data.get("name", "aero"),
    )


def save_aero_model(model: AeroCoefficientModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_json_dict(), fh, indent=2)


def _shifted_quadratic(c0: float, c1: float, c2: float, u0: float):
    """Coefficients in a of c0 + c1*(a - u0) + c2*(a - u0)^2."""
    return (c0 - c1 * u0 + c2 * u0 * u0, c1 - 2.0 * c2 * u0, c2)


def _alpha_terms(coeffs):
    return [((i, 0, 0), c) for i, c in enumerate(coeffs) if c != 0.0]


def surrogate_aero() -> AeroCoefficientModel:
    """Bundled low-order coefficient model so GTM runs work end to end.

    Linear lift with a stall-like rolloff past |alpha| = 0.35 rad,
    quadratic drag rising toward a bluff-body value at 90 deg, statically
    stable pitching moment with strong pitch-rate damping. This is a
    plausible stand-in, not a fit to wind-tunnel data; GTM results with it
    are exercised by property-based checks only.
    """
    a_b = 0.35          # stall break [rad]
    big = math.pi
    # lift: 4.5*a inside, quadratic rolloff outside, odd in alpha
    cl_in = (0.0, 4.5, 0.0)
    r0, r1, r2 = _shifted_quadratic(4.5 * a_b, -1.8, 0.35, a_b)
    cl_right = (r0, r1, r2)
    cl_left = (-r0, r1, -r2)
    # drag: 0.02 + 1.5*a^2 inside, flattening quadratic outside, even in alpha
    cd_in = (0.02, 0.0, 1.5)
    s0, s1, s2 = _shifted_quadratic(0.02 + 1.5 * a_b * a_b, 1.9, -0.45, a_b)
    cd_right = (s0, s1, s2)
    cd_left = (s0, -s1, s2)

    def three_piece(left, inner, right, sign=1.0):
        return _PiecewisePolynomial([
            (-big, -a_b, _alpha_terms([sign * c for c in left])),
            (-a_b, a_b, _alpha_terms([sign * c for c in inner])),
            (a_b, big, _alpha_terms([sign * c for c in right])),
        ])

    cm = _PiecewisePolynomial([(-big, big, [
        ((0, 0, 0), 0.06), ((1, 0, 0), -0.7), ((0, 1, 0), -1.3), ((0, 0, 1), -40.0),
    ])])
    model = AeroCoefficientModel(
        cd=three_piece(cd_left, cd_in, cd_right),
        cl=three_piece(cl_left, cl_in, cl_right),
        cm=cm,
        cx=three_piece(cd_left, cd_in, cd_right, sign=-1.0),
        cz=three_piece(cl_left, cl_in, cl_right, sign=-1.0),
        validity={"alpha": (-big, big), "eta": (-0.6, 0.6), "qhat": (-2.0, 2.0)},
        name="surrogate",
    )
    # run the model through the loader path so the bundled model obeys the
    # same continuity contract as file-loaded ones
    return load_aero_model(model.to_json_dict())


def zero_aero() -> AeroCoefficientModel:
    """All coefficients identically zero; used to isolate gravity and thrust."""
    zero = [{"alpha": [-math.pi, math.pi], "terms": [[[0, 0, 0], 0.0]]}]
    return load_aero_model({
        "name": "zero",
        "validity": {"alpha": (-math.pi, math.pi), "eta": (-1.0, 1.0), "qhat": (-2.0, 2.0)},
        "coefficients": {name: zero for name in _COEFF_NAMES},
    })


# ---------------------------------------------------------------------------
# Vector fields


def _gtm_rates(x, p: GtmParameters, aero: AeroCoefficientModel):
    v, gamma, q, alpha = x
    if v <= 0.0:
        raise SingularStateError(f"airspeed must be positive, got V_A={v}")
    qhat = p.chord * q / (2.0 * v)
    cd, cl, cm, cx, cz = aero.coefficients(alpha, p.eta, qhat)
    pres = 0.5 * p.air_density * p.wing_area * v * v
    sin_g, cos_g = math.sin(gamma), math.cos(gamma)
    v_dot = (p.thrust * math.cos(alpha) - pres * cd - p.mass * p.gravity * sin_g) / p.mass
    gamma_dot = (p.thrust * math.sin(alpha) + pres * cl - p.mass * p.gravity * cos_g) / (p.mass * v)
    q_dot = (
        p.engine_offset * p.thrust
        + pres * p.chord * cm
        - pres * cz * (p.x_cg_ref - p.x_cg)
        + pres * cx * (p.z_cg_ref - p.z_cg)
    ) / p.inertia_yy
    alpha_dot = q - gamma_dot
    return (v_dot, gamma_dot, q_dot, alpha_dot)


def gtm_vector_field(x, params: GtmParameters, aero: AeroCoefficientModel) -> np.ndarray:
    """Rates (V_A_dot, gamma_dot, q_dot, alpha_dot) of the longitudinal dynamics."""
    x = np.asarray(x, dtype=float)
    if x.shape != (4,):
        raise ValueError(f"GTM state must have 4 coordinates, got shape {x.shape}")
    return np.asarray(_gtm_rates(tuple(x), params, aero))


def _vdp_reverse_rates(x):
    x1, x2 = x
    u = x1 + 1.0
    w = x2 - 2.0
    return (-w, u + w * (u * u - 1.0))


def vdp_reverse_vector_field(x) -> np.ndarray:
    """Reverse-time Van der Pol field, stable focus at (-1, 2)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (2,):
        raise ValueError(f"state must have 2 coordinates, got shape {x.shape}")
    return np.asarray(_vdp_reverse_rates(tuple(x)))


def _pendulum_rates(x, damping):
    x1, x2 = x
    return (x2, math.sin(x1) - damping * x2)


def pendulum_vector_field(x, damping: float = 0.5) -> np.ndarray:
    """Damped pendulum, angle from the inverted position; wells at (+/-pi, 0)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (2,):
        raise ValueError(f"state must have 2 coordinates, got shape {x.shape}")
    return np.asarray(_pendulum_rates(tuple(x), damping))


# ---------------------------------------------------------------------------
# Systems and the integrator


@dataclass(frozen=True)
class OdeSystem:
    """An autonomous ODE with declared equilibria.

    `field` maps a state tuple to a rate tuple; it must be pure. Declared
    equilibria are verified at construction to satisfy ||f(e)|| <= 1e-8.
    """

    name: str
    dimension: int
    field: callable
    equilibria: tuple = ()
    state_names: tuple = ()
    state_units: tuple = ()

    def __post_init__(self):
        eqs = tuple(tuple(float(v) for v in e) for e in self.equilibria)
        object.__setattr__(self, "equilibria", eqs)
        for e in eqs:
            if len(e) != self.dimension:
                raise ValueError(f"equilibrium {e} has wrong dimension")
            resid = math.sqrt(sum(f * f for f in self.field(e)))
            if resid > 1e-8:
                raise ValueError(
                    f"declared equilibrium {e} has residual {resid:.3e} > 1e-8"
                )

    def f(self, x) -> np.ndarray:
        return np.asarray(self.field(tuple(np.asarray(x, dtype=float))))

    @property
    def attractor(self) -> np.ndarray:
        """First declared equilibrium, the default shift target."""
        if not self.equilibria:
            raise ValueError(f"system {self.name} declares no equilibria")
        return np.asarray(self.equilibria[0])


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step RK4 configuration."""

    dt: float = 0.01
    run_time: float = 30.0
    record_stride: int = 10
    method: str = "rk4"

    def __post_init__(self):
        if self.method != "rk4":
            raise ValueError(f"unsupported method {self.method!r}")
        if self.dt <= 0.0 or self.run_time <= 0.0:
            raise ValueError("dt and run_time must be positive")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        n = round(self.run_time / self.dt)
        if abs(n * self.dt - self.run_time) > 1e-9 * max(1.0, self.run_time):
            raise ValueError("run_time must be an integer number of steps")

    @property
    def n_steps(self) -> int:
        return round(self.run_time / self.dt)


def rk4_step(f, x, dt: float):
    """One classical Runge-Kutta step for a tuple-valued field."""
    k1 = f(x)
    k2 = f(tuple(xi + 0.5 * dt * k for xi, k in zip(x, k1)))
    k3 = f(tuple(xi + 0.5 * dt * k for xi, k in zip(x, k2)))
    k4 = f(tuple(xi + dt * k for xi, k in zip(x, k3)))
    return tuple(
        xi + (dt / 6.0) * (a + 2.0 * (b + c) + d)
        for xi, a, b, c, d in zip(x, k1, k2, k3, k4)
    )


def integrate(system: OdeSystem, x0, cfg: IntegratorConfig, limits: StateBox,
              traj_id: int = 0) -> Trajectory:
    """Integrate until run_time or until the state leaves the limit box.

    Samples are recorded every `record_stride` steps starting from x0.
    The trajectory is labeled divergent when a state exits the box, turns
    non-finite, or the field raises mid-run; the exit time is recorded.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (system.dimension,):
        raise ValueError(f"x0 has shape {x0.shape}, expected ({system.dimension},)")
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    if limits.dim != system.dimension:
        raise ValueError("limit box dimension does not match the system")

    f = system.field
    dt = cfg.dt
    stride = cfg.record_stride
    lo = tuple(limits.lo)
    hi = tuple(limits.hi)

    samples = [tuple(x0)]
    if not limits.contains(x0):
        return Trajectory(x0=x0, samples=np.asarray(samples), dt=dt, stride=stride,
                          label=DIVERGENT, exit_time=0.0, traj_id=traj_id)

    state = tuple(x0)
    label = CONVERGENT
    exit_time = None
    diagnostic = None
    for k in range(1, cfg.n_steps + 1):
        try:
            state = rk4_step(f, state, dt)
        except (SingularStateError, OverflowError, ValueError, ZeroDivisionError) as exc:
            label = DIVERGENT
            exit_time = k * dt
            diagnostic = f"field evaluation failed: {exc}"
            break
        ok = True
        for xi, a, b in zip(state, lo, hi):
            if not (a <= xi <= b) or xi != xi:
                ok = False
                break
        if not ok:
            label = DIVERGENT
            exit_time = k * dt
            break
        if k % stride == 0:
            samples.append(state)

    return Trajectory(x0=x0, samples=np.asarray(samples), dt=dt, stride=stride,
                      label=label, exit_time=exit_time, diagnostic=diagnostic,
                      traj_id=traj_id)


def integrate_batch(system: OdeSystem, ics, cfg: IntegratorConfig, limits: StateBox):
    """Integrate many initial conditions; ids follow the row order."""
    return [integrate(system, x0, cfg, limits, traj_id=i) for i, x0 in enumerate(ics)]


# ---------------------------------------------------------------------------
# System factories


def vdp_reverse_system() -> OdeSystem:
    return OdeSystem(
        name="vdp_reverse",
        dimension=2,
        field=_vdp_reverse_rates,
        equilibria=((-1.0, 2.0),),
        state_names=("x1", "x2"),
        state_units=("1", "1"),
    )


def pendulum_system(damping: float = 0.5) -> OdeSystem:
    def rates(x, _c=float(damping)):
        return _pendulum_rates(x, _c)

    return OdeSystem(
        name="pendulum",
        dimension=2,
        field=rates,
        equilibria=((-math.pi, 0.0), (math.pi, 0.0)),
        state_names=("angle", "rate"),
        state_units=("rad", "rad/s"),
    )


def find_gtm_trim(params: GtmParameters, aero: AeroCoefficientModel,
                  guess=(45.0, 0.0, 0.0, 0.08), tol: float = 1e-11,
                  max_iter: int = 60) -> np.ndarray:
    """Newton search for the equilibrium under the fixed controls."""
    x = np.asarray(guess, dtype=float)

    def f(v):
        return np.asarray(_gtm_rates(tuple(v), params, aero))

    for _ in range(max_iter):
        r = f(x)
        if np.linalg.norm(r) <= tol:
            return x
        J = np.empty((4, 4))
        for j in range(4):
            h = 1e-7 * max(1.0, abs(x[j]))
            xp = x.copy(); xp[j] += h
            xm = x.copy(); xm[j] -= h
            J[:, j] = (f(xp) - f(xm)) / (2.0 * h)
        try:
            step = np.linalg.solve(J, r)
        except np.linalg.LinAlgError as exc:
            raise TrimError(f"singular Jacobian during trim search: {exc}") from exc
        # backtracking keeps the airspeed positive and the residual shrinking
        t = 1.0
        nr = np.linalg.norm(r)
        for _bt in range(30):
            cand = x - t * step
            if cand[0] > 0.0:
                try:
                    if np.linalg.norm(f(cand)) < nr:
                        break
                except SingularStateError:
                    pass
            t *= 0.5
        else:
            raise TrimError("trim line search stalled")
        x = x - t * step
    r = f(x)
    if np.linalg.norm(r) <= 1e-9:
        return x
    raise TrimError(f"trim search did not converge, residual {np.linalg.norm(r):.3e}")


def gtm_system(params: GtmParameters | None = None,
               aero: AeroCoefficientModel | None = None,
               trim_guess=(45.0, 0.0, 0.0, 0.08)) -> OdeSystem:
    """GTM longitudinal system with its trim point declared as equilibrium."""
    params = params or GtmParameters()
    aero = aero or surrogate_aero()
    trim = find_gtm_trim(params, aero, guess=trim_guess)

    def rates(x, _p=params, _a=aero):
        return _gtm_rates(x, _p, _a)

    return OdeSystem(
        name="gtm",
        dimension=4,
        field=rates,
        equilibria=(tuple(trim),),
        state_names=("V_A", "gamma_A", "q", "alpha"),
        state_units=("m/s", "rad", "rad/s", "rad"),
    )


def gtm_ic_bounds() -> StateBox:
    """Published initial-condition bounds, in state order [V_A, gamma_A, q, alpha]."""
    d = math.radians
    return StateBox.from_pairs([
        [5.0, 100.0],
        [d(-20.0), d(20.0)],
        [d(-1200.0), d(1200.0)],
        [d(-100.0), d(100.0)],
    ])


def gtm_trajectory_limits() -> StateBox:
    """Published divergence limits, in state order [V_A, gamma_A, q, alpha]."""
    d = math.radians
    return StateBox.from_pairs([
        [0.0, 300.0],
        [d(-45.0), d(45.0)],
        [d(-2500.0), d(2500.0)],
        [d(-180.0), d(180.0)],
    ])


_SYSTEM_DEFAULT_CONFIG = {
    "vdp_reverse": IntegratorConfig(dt=0.01, run_time=30.0, record_stride=10),
    "pendulum": IntegratorConfig(dt=0.01, run_time=30.0, record_stride=10),
    "gtm": IntegratorConfig(dt=0.01, run_time=100.0, record_stride=10),
}


def default_integrator_config(system_name: str) -> IntegratorConfig:
    return _SYSTEM_DEFAULT_CONFIG.get(system_name, IntegratorConfig())
