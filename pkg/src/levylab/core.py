"""Core data model: jump measures, triplets, compensation functions, paths.

State space is ``R^d`` plus a distinguished cemetery point ``DELTA``.  Paths
absorbed at the cemetery stay there; the absorption time is recorded
explicitly instead of being encoded in a float sentinel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import gammaln

from .errors import ConfigurationError, QuadratureError, ValidationError


class Cemetery:
    """The absorbing cemetery state; a single shared instance is used."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "DELTA"


DELTA = Cemetery()


def sphere_surface_area(dim: int) -> float:
    """Surface measure of the unit sphere in R^dim.

    Computed through log-gamma so large dimensions do not overflow.
    """
    if dim < 1:
        raise ValidationError("dimension must be >= 1")
    return float(np.exp(np.log(2.0) + 0.5 * dim * np.log(np.pi) - gammaln(0.5 * dim)))


def as_point(a, dim: int | None = None) -> np.ndarray:
    """Coerce a scalar or sequence to a 1-d float point."""
    arr = np.atleast_1d(np.asarray(a, dtype=float))
    if arr.ndim != 1:
        raise ValidationError(f"a point must be one-dimensional, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ValidationError(f"expected a point in R^{dim}, got R^{arr.shape[0]}")
    return arr


# ---------------------------------------------------------------------------
# Jump measures
# ---------------------------------------------------------------------------


class JumpMeasure:
    """A jump measure with tail-mass and truncated-second-moment queries.

    Subclasses must be finite on the complement of every ball around the
    base point and integrate ``min(1, |b-a|^2)``.
    """

    dim: int

    def tail_mass(self, r: float, a=None) -> float:
        raise NotImplementedError

    def truncated_second_moment(self, r: float, a=None) -> float:
        raise NotImplementedError

    def mass_at(self, a) -> float:
        """Point mass at ``a`` (must be zero for a valid triplet at ``a``)."""
        return 0.0

    @property
    def is_radially_symmetric(self) -> bool:
        return False


@dataclass(frozen=True)
class Atoms(JumpMeasure):
    """Finitely many atoms at absolute locations, optionally including DELTA.

    Locations are absolute points of the state space; relative jump vectors
    for a base point ``a`` are obtained with :meth:`jumps_from`.
    """

    points: np.ndarray  # (k, dim)
    masses: np.ndarray  # (k,)
    delta_mass: float = 0.0
    dim: int = 1

    def __init__(self, atoms: Sequence[tuple] = (), dim: int | None = None,
                 delta_mass: float = 0.0):
        pts, ms, dmass = [], [], float(delta_mass)
        for loc, mass in atoms:
            if mass <= 0:
                raise ValidationError("atom masses must be positive")
            if loc is DELTA:
                dmass += float(mass)
            else:
                pts.append(np.atleast_1d(np.asarray(loc, dtype=float)))
                ms.append(float(mass))
        if dmass < 0:
            raise ValidationError("cemetery mass must be nonnegative")
        if pts:
            d = pts[0].shape[0]
            if any(p.shape[0] != d for p in pts):
                raise ValidationError("all atom locations must share one dimension")
        else:
            d = dim if dim is not None else 1
        if dim is not None and dim != d:
            raise ValidationError(f"atoms live in R^{d}, but dim={dim} was given")
        object.__setattr__(self, "points", np.array(pts, dtype=float).reshape(len(pts), d))
        object.__setattr__(self, "masses", np.asarray(ms, dtype=float))
        object.__setattr__(self, "delta_mass", dmass)
        object.__setattr__(self, "dim", d)

    def _dists(self, a) -> np.ndarray:
        a = as_point(a, self.dim) if a is not None else np.zeros(self.dim)
        if len(self.masses) == 0:
            return np.zeros(0)
        return np.linalg.norm(self.points - a, axis=1)

    def tail_mass(self, r: float, a=None) -> float:
        if r <= 0:
            raise ValidationError("radius must be positive")
        d = self._dists(a)
        # The cemetery sits at infinite distance, so its mass is always in the tail.
        return float(np.sum(self.masses[d > r])) + self.delta_mass

    def truncated_second_moment(self, r: float, a=None) -> float:
        if r <= 0:
            raise ValidationError("radius must be positive")
        d = self._dists(a)
        keep = (d > 0) & (d <= r)
        return float(np.sum(self.masses[keep] * d[keep] ** 2))

    def mass_at(self, a) -> float:
        d = self._dists(a)
        return float(np.sum(self.masses[d == 0.0]))

    def total_mass(self) -> float:
        return float(np.sum(self.masses)) + self.delta_mass

    def jumps_from(self, a) -> tuple[np.ndarray, np.ndarray, float]:
        """Relative jump vectors, their masses, and the cemetery mass."""
        a = as_point(a, self.dim)
        return self.points - a, self.masses.copy(), self.delta_mass


@dataclass(frozen=True)
class StableLike(JumpMeasure):
    """Radial density ``c |h|^(-dim-alpha)`` around the base point.

    ``min_radius`` truncates the density below a positive radius, which
    turns the measure into a finite one; the untruncated case requires
    ``alpha < 2`` for the compensated mass to be finite.
    """

    c: float
    alpha: float
    dim: int = 1
    min_radius: float = 0.0

    def __post_init__(self):
        if self.c < 0:
            raise ValidationError("scale c must be nonnegative")
        if not (0.0 < self.alpha < 2.0):
            raise ValidationError(
                f"stable index must lie in (0, 2); alpha={self.alpha} makes the "
                "compensated mass integral diverge"
            )
        if self.min_radius < 0:
            raise ValidationError("min_radius must be nonnegative")

    @property
    def surface(self) -> float:
        return sphere_surface_area(self.dim)

    @property
    def is_radially_symmetric(self) -> bool:
        return True

    def density(self, h: np.ndarray) -> np.ndarray:
        h = np.atleast_2d(h)
        r = np.linalg.norm(h, axis=1)
        out = np.zeros_like(r)
        live = r > max(self.min_radius, 0.0)
        out[live] = self.c * r[live] ** (-self.dim - self.alpha)
        return out

    def tail_mass(self, r: float, a=None) -> float:
        if r <= 0:
            raise ValidationError("radius must be positive")
        r_eff = max(r, self.min_radius)
        return self.c * self.surface * r_eff ** (-self.alpha) / self.alpha

    def truncated_second_moment(self, r: float, a=None) -> float:
        if r <= 0:
            raise ValidationError("radius must be positive")
        if r <= self.min_radius:
            return 0.0
        lo = self.min_radius
        return (
            self.c * self.surface * (r ** (2.0 - self.alpha) - lo ** (2.0 - self.alpha))
            / (2.0 - self.alpha)
        )

    def total_mass(self) -> float:
        if self.min_radius <= 0.0:
            return math.inf if self.c > 0 else 0.0
        return self.tail_mass(self.min_radius)

    def sample_tail(self, rng: np.random.Generator, size: int, r: float) -> np.ndarray:
        """Draw jumps from the normalized restriction to ``|h| > r``.

        The radial law has an inverse CDF in closed form; directions are
        uniform on the sphere.
        """
        from . import rng as _rng

        r0 = max(r, self.min_radius)
        if r0 <= 0:
            raise ValidationError("tail sampling needs a positive radius")
        u = _rng.uniform_open_closed(rng, size)
        radii = r0 * u ** (-1.0 / self.alpha)
        dirs = _rng.unit_sphere(rng, size, self.dim)
        return dirs * radii[:, None]


@dataclass(frozen=True)
class UserDensity(JumpMeasure):
    """User-supplied jump density on R^dim minus the origin.

    ``density`` maps an (m, dim) array of jump vectors to densities.  The
    tail sampler is mandatory for simulation; tail-mass and second-moment
    callables are used when given, otherwise one-dimensional quadrature is
    attempted.
    """

    density: Callable[[np.ndarray], np.ndarray]
    dim: int = 1
    tail_sampler: Optional[Callable[[np.random.Generator, int, float], np.ndarray]] = None
    tail_mass_fn: Optional[Callable[[float], float]] = None
    second_moment_fn: Optional[Callable[[float], float]] = None
    symmetric: bool = False

    @property
    def is_radially_symmetric(self) -> bool:
        return self.symmetric

    def _require_1d(self, what: str):
        if self.dim != 1:
            raise ConfigurationError(
                f"{what} for a user density needs dim=1 or an explicit callable"
            )

    def tail_mass(self, r: float, a=None) -> float:
        if r <= 0:
            raise ValidationError("radius must be positive")
        if self.tail_mass_fn is not None:
            return float(self.tail_mass_fn(r))
        self._require_1d("tail mass")
        from scipy.integrate import quad

        def rho(x):
            return float(self.density(np.array([[x]]))[0])

        upper, err_u = quad(rho, r, np.inf, epsabs=1e-11, epsrel=1e-9, limit=200)
        lower, err_l = quad(lambda x: rho(-x), r, np.inf, epsabs=1e-11, epsrel=1e-9, limit=200)
        total = upper + lower
        if err_u + err_l > 1e-8 * (1.0 + abs(total)):
            raise QuadratureError(
                "tail-mass quadrature did not converge",
                estimate=total, previous=None, tolerance=err_u + err_l,
            )
        return total

    def truncated_second_moment(self, r: float, a=None) -> float:
        if r <= 0:
            raise ValidationError("radius must be positive")
        if self.second_moment_fn is not None:
            return float(self.second_moment_fn(r))
        self._require_1d("second moment")
        from scipy.integrate import quad

        def rho2(x):
            return x * x * float(self.density(np.array([[x]]))[0])

        up, err_u = quad(rho2, 0.0, r, epsabs=1e-11, epsrel=1e-9, limit=200)
        lo, err_l = quad(lambda x: rho2(-x), 0.0, r, epsabs=1e-11, epsrel=1e-9, limit=200)
        total = up + lo
        if err_u + err_l > 1e-8 * (1.0 + abs(total)):
            raise QuadratureError(
                "second-moment quadrature did not converge",
                estimate=total, previous=None, tolerance=err_u + err_l,
            )
        return total

    def sample_tail(self, rng: np.random.Generator, size: int, r: float) -> np.ndarray:
        if self.tail_sampler is None:
            raise ConfigurationError("this user density has no tail sampler")
        out = np.asarray(self.tail_sampler(rng, size, r), dtype=float)
        return out.reshape(size, self.dim)


# Module-level wrappers matching the operation names used across the package.

def tail_mass(nu: JumpMeasure, r: float, a=None) -> float:
    """Mass of the jump measure beyond radius ``r`` from the base point."""
    return nu.tail_mass(r, a)


def truncated_second_moment(nu: JumpMeasure, r: float, a=None) -> float:
    """Second moment of jumps with ``0 < |b-a| <= r``."""
    return nu.truncated_second_moment(r, a)


# ---------------------------------------------------------------------------
# Compensation functions
# ---------------------------------------------------------------------------


class CompensationFunction:
    """A bounded truncation of the jump used to compensate small jumps.

    Called with a base point ``a`` (shape (d,)) and target points ``b``
    (shape (m, d)); the cemetery contributes zero, which callers encode by
    passing only finite targets and handling cemetery mass separately.
    """

    name = "custom"
    bound: float = math.inf

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def radial_kinks(self) -> tuple[float, ...]:
        """Radii at which h -> chi(a, a+h) is not smooth."""
        return ()

    def is_odd(self) -> bool:
        """Whether h -> chi(a, a+h) is odd in h (true for both defaults)."""
        return False

    def pairwise(self, b: np.ndarray, c: np.ndarray) -> np.ndarray:
        """chi evaluated row-by-row on pairs (b_i, c_i)."""
        out = np.empty_like(np.atleast_2d(c), dtype=float)
        for i in range(out.shape[0]):
            out[i] = self(b[i], c[i][None, :])[0]
        return out

    def abs_bound_beyond(self, r: float) -> float:
        """Upper bound for |chi(a, b)| over |b - a| >= r."""
        return self.bound


class Chi1(CompensationFunction):
    """Smooth compensation (b-a) / (1 + |b-a|^2); valid for every jump measure."""

    name = "chi1"
    bound = 0.5

    def __call__(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.atleast_2d(np.asarray(b, dtype=float))
        h = b - a
        return h / (1.0 + np.sum(h * h, axis=1))[:, None]

    def is_odd(self):
        return True

    def pairwise(self, b, c):
        h = np.atleast_2d(c) - np.atleast_2d(b)
        return h / (1.0 + np.sum(h * h, axis=1))[:, None]

    def abs_bound_beyond(self, r):
        # |h| / (1 + |h|^2) peaks at 1/2 and decays like 1/|h| afterwards.
        return 0.5 if r <= 1.0 else r / (1.0 + r * r)


class Chi2(CompensationFunction):
    """Hard cutoff (b-a) 1_{|b-a| < 1}; needs no jump mass exactly on the unit sphere."""

    name = "chi2"
    bound = 1.0

    def __call__(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.atleast_2d(np.asarray(b, dtype=float))
        h = b - a
        inside = np.linalg.norm(h, axis=1) < 1.0
        return h * inside[:, None]

    def radial_kinks(self):
        return (1.0,)

    def is_odd(self):
        return True

    def pairwise(self, b, c):
        h = np.atleast_2d(c) - np.atleast_2d(b)
        inside = np.linalg.norm(h, axis=1) < 1.0
        return h * inside[:, None]

    def abs_bound_beyond(self, r):
        return 1.0 if r < 1.0 else 0.0


class CustomChi(CompensationFunction):
    def __init__(self, fn, bound: float, name: str = "custom", kinks=()):
        self._fn = fn
        self.bound = float(bound)
        self.name = name
        self._kinks = tuple(kinks)

    def __call__(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.atleast_2d(np.asarray(b, dtype=float))
        return np.atleast_2d(np.asarray(self._fn(a, b), dtype=float))

    def radial_kinks(self):
        return self._kinks


def compensation_by_name(name: str) -> CompensationFunction:
    try:
        return {"chi1": Chi1(), "chi2": Chi2()}[name]
    except KeyError:
        raise ValidationError(f"unknown compensation function {name!r}") from None


# ---------------------------------------------------------------------------
# Triplets and triplet fields
# ---------------------------------------------------------------------------

GAMMA_SYMMETRY_RTOL = 1e-12
GAMMA_EIGEN_FLOOR = 1e-10


@dataclass(frozen=True)
class LevyTriplet:
    """Drift vector, diffusion matrix and jump measure at one point.

    The diffusion matrix must be symmetric (relative tolerance 1e-12) and
    positive semi-definite up to an eigenvalue floor of ``-1e-10 ||gamma||``.
    """

    drift: np.ndarray
    gamma: np.ndarray
    jumps: Optional[JumpMeasure] = None
    _checked: bool = field(default=True, repr=False, compare=False)

    def __init__(self, drift, gamma, jumps: Optional[JumpMeasure] = None, *, _checked=True):
        drift = np.atleast_1d(np.asarray(drift, dtype=float))
        gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "_checked", _checked)
        d = drift.shape[0]
        if gamma.shape != (d, d):
            raise ValidationError(
                f"gamma must be {d}x{d} to match the drift, got {gamma.shape}"
            )
        if jumps is not None and jumps.dim != d:
            raise ValidationError("jump measure dimension does not match the drift")
        if _checked:
            self._validate()

    def _validate(self):
        g = self.gamma
        scale = float(np.max(np.abs(g))) if g.size else 0.0
        if scale > 0.0:
            asym = float(np.max(np.abs(g - g.T)))
            if asym > GAMMA_SYMMETRY_RTOL * scale:
                raise ValidationError(
                    f"gamma is not symmetric (max asymmetry {asym:.3e} vs scale {scale:.3e})"
                )
            eigs = np.linalg.eigvalsh(0.5 * (g + g.T))
            if float(eigs.min()) < -GAMMA_EIGEN_FLOOR * scale:
                raise ValidationError(
                    f"gamma is not positive semi-definite (min eigenvalue {eigs.min():.3e})"
                )

    @staticmethod
    def unchecked(drift, gamma, jumps=None) -> "LevyTriplet":
        """Skip validity checks; for diagnostics that probe invalid operators."""
        return LevyTriplet(drift, gamma, jumps, _checked=False)

    @property
    def dim(self) -> int:
        return self.drift.shape[0]


class TripletField:
    """A map from points of R^d to triplets, with continuity metadata.

    Measure conventions follow the rest of the package: atom locations are
    absolute target points, radial densities are centred at the queried
    point.
    """

    def __init__(self, fn: Callable[[np.ndarray], LevyTriplet], dim: int,
                 claimed_continuous: bool = True):
        self._fn = fn
        self.dim = dim
        self.claimed_continuous = claimed_continuous

    def __call__(self, a) -> LevyTriplet:
        return self._fn(as_point(a, self.dim))

    @property
    def is_constant(self) -> bool:
        return False


class ConstantTripletField(TripletField):
    """The same triplet at every point; simulators use a vectorized fast path."""

    def __init__(self, triplet: LevyTriplet):
        super().__init__(lambda a: triplet, triplet.dim, claimed_continuous=True)
        self.triplet = triplet

    @property
    def is_constant(self) -> bool:
        return True


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathRecord:
    """A cadlag sample path on R^d plus cemetery, absorbed after explosion.

    ``states`` rows with ``times >= xi`` are dead; accessors return DELTA
    for them and their stored float values are never consumed.
    """

    times: np.ndarray
    states: np.ndarray
    xi: float = math.inf
    truncated: bool = False

    def __init__(self, times, states, xi=math.inf, truncated=False):
        times = np.asarray(times, dtype=float)
        states = np.asarray(states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if times.ndim != 1 or states.shape[0] != times.shape[0]:
            raise ValidationError("times and states must align")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValidationError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "xi", float(xi))
        object.__setattr__(self, "truncated", bool(truncated))

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def alive(self) -> np.ndarray:
        return self.times < self.xi

    def state_at(self, i: int):
        if self.times[i] >= self.xi:
            return DELTA
        return self.states[i]

    def check_absorption(self) -> bool:
        """True when no state after the explosion time is marked alive."""
        return bool(np.all(~self.alive[self.times >= self.xi]))


class PathBatch:
    """Paths sharing one output time grid, stored as a dense array."""

    def __init__(self, times, states, xi=None, truncated=None):
        self.times = np.asarray(times, dtype=float)
        states = np.asarray(states, dtype=float)
        if states.ndim == 2:
            states = states[:, :, None]
        self.states = states
        n = states.shape[0]
        self.xi = np.full(n, math.inf) if xi is None else np.asarray(xi, dtype=float)
        self.truncated = (
            np.zeros(n, dtype=bool) if truncated is None else np.asarray(truncated, dtype=bool)
        )
        if self.states.shape[1] != self.times.shape[0]:
            raise ValidationError("state array does not match the time grid")

    def __len__(self):
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    def __getitem__(self, i: int) -> PathRecord:
        return PathRecord(self.times, self.states[i], xi=self.xi[i],
                          truncated=bool(self.truncated[i]))

    def alive_at_index(self, j: int) -> np.ndarray:
        return self.times[j] < self.xi

    def marginal(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """States of paths still alive at time ``t`` (floor-index on the grid)."""
        j = int(np.searchsorted(self.times, t + 1e-12, side="right") - 1)
        if j < 0:
            raise ValidationError(f"time {t} precedes the output grid")
        alive = self.alive_at_index(j)
        return self.states[alive, j, :], alive

    def blank_dead(self) -> None:
        """Overwrite states at and after absorption with NaN so they cannot leak."""
        dead = self.times[None, :] >= self.xi[:, None]
        if np.any(dead):
            self.states[dead] = np.nan


def resolve_start(start, dim: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """Materialize ``m`` starting points from a point or a sampler callable."""
    if callable(start):
        pts = np.asarray(start(rng, m), dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape != (m, dim):
            raise ValidationError(f"start sampler must return shape ({m}, {dim})")
        return pts
    return np.tile(as_point(start, dim), (m, 1))


@dataclass(frozen=True)
class SchemeConfig:
    """Determinism contract for batch simulation.

    ``grid`` is the output time grid (defaults to 101 equispaced points on
    [0, T]); ``block_size`` fixes the path-block decomposition so results do
    not depend on the worker count.
    """

    paths: int = 1000
    seed: int = 0
    grid: Optional[np.ndarray] = None
    escape_radius: float = 1e6
    threads: int = 1
    block_size: int = 16384

    def __post_init__(self):
        if self.paths < 1:
            raise ValidationError("paths must be >= 1")
        if self.escape_radius <= 0:
            raise ValidationError("escape radius must be positive")
        if self.threads < 1:
            raise ValidationError("threads must be >= 1")
        if self.block_size < 1:
            raise ValidationError("block_size must be >= 1")

    def output_grid(self, horizon: float) -> np.ndarray:
        if self.grid is not None:
            g = np.asarray(self.grid, dtype=float)
            if g.ndim != 1 or g.size == 0 or np.any(np.diff(g) <= 0) or g[0] < 0:
                raise ValidationError("grid must be a strictly increasing array of times >= 0")
            if g[-1] > horizon * (1 + 1e-12):
                raise ValidationError("grid extends beyond the horizon")
            return g
        return np.linspace(0.0, horizon, 101)

    def with_(self, **kw) -> "SchemeConfig":
        return replace(self, **kw)


# ---------------------------------------------------------------------------
# JSON configuration
# ---------------------------------------------------------------------------


def jump_measure_from_config(cfg: dict | None, dim: int) -> Optional[JumpMeasure]:
    """Build a jump measure from its JSON description.

    Supported kinds: ``none``, ``stable`` (fields c, alpha, optional
    min_radius) and ``atoms`` (list of {point, mass}, optional delta_mass;
    a point may be the string "DELTA").
    """
    if cfg is None:
        return None
    kind = cfg.get("kind")
    if kind in (None, "none"):
        return None
    if kind == "stable":
        return StableLike(
            c=float(cfg["c"]), alpha=float(cfg["alpha"]), dim=dim,
            min_radius=float(cfg.get("min_radius", 0.0)),
        )
    if kind == "atoms":
        atoms = []
        for entry in cfg.get("atoms", []):
            point = entry["point"]
            if isinstance(point, str):
                if point.upper() != "DELTA":
                    raise ValidationError(f"unknown atom location {point!r}")
                atoms.append((DELTA, float(entry["mass"])))
            else:
                atoms.append((np.asarray(point, dtype=float), float(entry["mass"])))
        return Atoms(atoms, dim=dim, delta_mass=float(cfg.get("delta_mass", 0.0)))
    raise ValidationError(f"unknown jump measure kind {kind!r}")


def triplet_from_config(cfg: dict) -> LevyTriplet:
    """Build a constant triplet from {"drift": [...], "gamma": [[...]], "nu": {...}}."""
    drift = np.asarray(cfg.get("drift", [0.0]), dtype=float)
    dim = drift.shape[0]
    gamma = np.asarray(cfg.get("gamma", np.zeros((dim, dim))), dtype=float)
    nu = jump_measure_from_config(cfg.get("nu"), dim)
    return LevyTriplet(drift, gamma, nu)


# ---------------------------------------------------------------------------
# Hypothesis checks on (field, chi) pairs
# ---------------------------------------------------------------------------


@dataclass
class HypothesisReport:
    """Sampled validity report for a triplet field and compensation function.

    ``second_order_ok`` covers the quadratic closeness of chi to the
    identity jump on the sampled compact; ``triplet_ok`` covers pointwise
    triplet validity; ``modulus_ok`` covers the vanishing small-jump modulus
    together with continuity of chi on a set of full measure.  A ``None``
    verdict means the property could not be decided for the given variant.
    """

    second_order_ok: bool
    second_order_constant: float
    triplet_ok: bool
    modulus_ok: Optional[bool]
    modulus_profile: list[tuple[float, float]]
    violations: list[str]

    @property
    def all_ok(self) -> bool:
        return self.second_order_ok and self.triplet_ok and (self.modulus_ok is not False)

    def to_dict(self) -> dict:
        return {
            "second_order_ok": self.second_order_ok,
            "second_order_constant": self.second_order_constant,
            "triplet_ok": self.triplet_ok,
            "modulus_ok": self.modulus_ok,
            "modulus_profile": self.modulus_profile,
            "violations": self.violations,
        }


SECOND_ORDER_CAP = 1e6


def validate_hypotheses(field: TripletField, chi: CompensationFunction,
                        low, high, samples: int = 10_000, seed: int = 0) -> HypothesisReport:
    """Monte Carlo spot-check of the validity conditions on a compact box.

    The compactness quantifiers are sampled, not proved: ``samples`` pairs
    of points in the box drive the second-order ratio, a dyadic sweep of
    separations drives the small-jump modulus, and a subsample of base
    points drives the pointwise triplet checks.
    """
    from . import rng as _rng

    low = as_point(low, field.dim)
    high = as_point(high, field.dim)
    if np.any(high <= low):
        raise ValidationError("the box must have positive extent")
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    gen = _rng.stream(seed, namespace=_rng.SCRATCH)
    violations: list[str] = []

    # Second-order closeness of chi on the box.
    b = gen.uniform(low, high, size=(samples, field.dim))
    cpts = gen.uniform(low, high, size=(samples, field.dim))
    ratios = _second_order_ratios(chi, b, cpts)
    c_k = float(np.max(ratios)) if ratios.size else 0.0
    second_ok = bool(np.isfinite(c_k) and c_k <= SECOND_ORDER_CAP)
    if not second_ok:
        violations.append(f"second-order ratio reached {c_k:.3e}")

    # Vanishing modulus on dyadic separation scales.
    profile = []
    base = gen.uniform(low, high, size=(min(samples, 2000), field.dim))
    span = float(np.min(high - low))
    for j in range(9):
        eps = span * 0.5 ** (j + 1)
        dirs = _rng.unit_sphere(gen, base.shape[0], field.dim)
        radii = gen.uniform(0.0, eps, size=base.shape[0])
        cpts_j = base + dirs * radii[:, None]
        np.clip(cpts_j, low, high, out=cpts_j)
        r = _second_order_ratios(chi, base, cpts_j)
        profile.append((eps, float(np.max(r)) if r.size else 0.0))
    first, last = profile[0][1], profile[-1][1]
    modulus_decays = last <= 0.1 * first + 1e-9

    # Pointwise triplet validity at sampled base points.
    n_base = min(samples, 64)
    pts = gen.uniform(low, high, size=(n_base, field.dim))
    triplet_ok = True
    continuity_ok: Optional[bool] = True
    for a in pts:
        try:
            trip = field(a)
        except ValidationError as exc:
            triplet_ok = False
            violations.append(f"triplet invalid at {a.tolist()}: {exc}")
            continue
        nu = trip.jumps
        if nu is None:
            continue
        # Atom locations are absolute, so the forbidden point mass sits at a
        # itself; density variants never charge single points.
        if nu.mass_at(a) > 0:
            triplet_ok = False
            violations.append(f"jump measure charges the base point at {a.tolist()}")
        try:
            compensated = nu.truncated_second_moment(1.0, a) + nu.tail_mass(1.0, a)
        except (ValidationError, QuadratureError) as exc:
            triplet_ok = False
            violations.append(f"compensated mass check failed at {a.tolist()}: {exc}")
            continue
        if not np.isfinite(compensated):
            triplet_ok = False
            violations.append(f"compensated mass infinite at {a.tolist()}")
        ok = _chi_continuity_ok(chi, nu, a)
        if ok is False:
            continuity_ok = False
            violations.append(
                f"jump measure charges a discontinuity sphere of {chi.name} at {a.tolist()}"
            )
        elif ok is None and continuity_ok is True:
            continuity_ok = None

    if continuity_ok is False:
        modulus_ok: Optional[bool] = False
    elif continuity_ok is None:
        modulus_ok = None if modulus_decays else False
    else:
        modulus_ok = bool(modulus_decays)
    if modulus_ok is False and continuity_ok is not False:
        violations.append("small-jump modulus did not decay on the dyadic sweep")

    return HypothesisReport(
        second_order_ok=second_ok,
        second_order_constant=c_k,
        triplet_ok=triplet_ok,
        modulus_ok=modulus_ok,
        modulus_profile=profile,
        violations=violations,
    )


def _second_order_ratios(chi, b, c) -> np.ndarray:
    h = c - b
    norms = np.linalg.norm(h, axis=1)
    keep = norms > 1e-12
    if not np.any(keep):
        return np.zeros(0)
    vals = chi.pairwise(b[keep], c[keep])
    dev = np.linalg.norm(vals - h[keep], axis=1)
    return dev / norms[keep] ** 2


def _chi_continuity_ok(chi, nu, a) -> Optional[bool]:
    """Whether nu puts zero mass on the discontinuity set of chi at (a, .)."""
    if isinstance(chi, Chi1):
        return True
    if isinstance(chi, Chi2):
        kink = 1.0
        if isinstance(nu, Atoms):
            d = nu._dists(a)
            return not bool(np.any(np.abs(d - kink) <= 1e-12))
        if isinstance(nu, (StableLike, UserDensity)):
            return True  # absolutely continuous: spheres are null sets
        return None
    return None
