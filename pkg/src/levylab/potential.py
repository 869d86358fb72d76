"""One-dimensional diffusion in a potential and its two-point discrete scheme.

The scheme solves, at each state ``a``, for step sizes ``psi_up`` and
``psi_down`` making the double exponential integral

    phi(a, h) = 2 * int_a^{a+h} int_a^b exp(V(b) - V(c)) dc db

equal to the squared time step, then moves up with probability

    p(a) = int_{a-psi_down}^{a} e^V / int_{a-psi_down}^{a+psi_up} e^V.

Piecewise-constant and piecewise-linear potentials are integrated in closed
form cell by cell.  Short-span queries (phi, p, psi) walk only the cells
they touch, anchored at the query point, so no precision is lost to large
cumulative offsets; long-span integrals use global cumulative tables.  All
exponentials are rescaled by the window extrema, so only genuinely
overflowing windows fail.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import rng as _rng
from .core import PathBatch, SchemeConfig, resolve_start
from .errors import (
    PotentialOverflowError,
    RangeError,
    SchemeStepError,
    ValidationError,
)

PSI_REL_TOL = 1e-12
BRACKET_CAP_FACTOR = 2 ** 10
MAX_TABLE_SHIFT = 600.0  # beyond this the rescaled integrals would denormalize
LOG_FLOAT_MAX = math.log(np.finfo(float).max)
MAX_WALK_CELLS = 1 << 14


def _phi1(z):
    """(e^z - 1) / z, stable near zero."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < 1e-6
    zs = z[small]
    out[small] = 1.0 + zs / 2.0 + zs * zs / 6.0
    zb = z[~small]
    out[~small] = np.expm1(zb) / zb
    return out


def _phi2(z):
    """(e^z - 1 - z) / z^2, stable near zero."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < 1e-5
    zs = z[small]
    out[small] = 0.5 + zs / 6.0 + zs * zs / 24.0
    zb = z[~small]
    out[~small] = (np.expm1(zb) - zb) / (zb * zb)
    return out


@dataclass
class _CellData:
    """Per-cell closed-form data: breakpoints, left values, slopes, shifts."""

    bounds: np.ndarray   # (n+1,)
    left_value: np.ndarray  # (n,)
    slope: np.ndarray    # (n,)
    splus: float
    sminus: float

    @property
    def shift(self) -> float:
        return self.splus + self.sminus

    def locate(self, x: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.bounds, x, side="right") - 1
        return np.clip(idx, 0, self.left_value.size - 1)

    def locate_left(self, x: np.ndarray) -> np.ndarray:
        """Cell index when approaching ``x`` from the left."""
        idx = np.searchsorted(self.bounds, x, side="left") - 1
        return np.clip(idx, 0, self.left_value.size - 1)


class Potential:
    """Base class: a measurable scalar potential with locally integrable e^{|V|}."""

    domain: tuple[float, float] = (-math.inf, math.inf)

    def value(self, x) -> np.ndarray:
        raise NotImplementedError

    def breakpoints(self, lo: float, hi: float) -> np.ndarray:
        """Discontinuity / kink locations inside (lo, hi)."""
        return np.empty(0)

    def cells(self) -> Optional[_CellData]:
        return None

    def check_window(self, lo: float, hi: float) -> None:
        lo_d, hi_d = self.domain
        if lo < lo_d - 1e-12 or hi > hi_d + 1e-12:
            raise RangeError(
                f"query window [{lo}, {hi}] leaves the potential domain [{lo_d}, {hi_d}]"
            )


@dataclass(frozen=True)
class PiecewiseConstantPotential(Potential):
    """Right-continuous lattice potential built from per-site increments.

    ``q[k]`` is the jump of the potential at lattice point ``k * mesh``: the
    value on ``[k mesh, (k+1) mesh)`` for k >= 1 is the prefix sum of
    increments 1..k, zero on ``[0, mesh)``, and minus the backward sum for
    negative cells.
    """

    mesh: float
    q: np.ndarray
    k_min: int
    offset: float = 0.0

    def __init__(self, mesh: float, q, k_min: int, offset: float = 0.0):
        if mesh <= 0:
            raise ValidationError("the mesh must be positive")
        q = np.asarray(q, dtype=float)
        if q.ndim != 1 or q.size == 0:
            raise ValidationError("q must be a nonempty 1-d array")
        k_min = int(k_min)
        k_max = k_min + q.size - 1
        if k_min > 1 or k_max < 0:
            raise ValidationError(
                "the increment window must reach the origin (k_min <= 1 and k_max >= 0)"
            )
        object.__setattr__(self, "mesh", float(mesh))
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "k_min", k_min)
        object.__setattr__(self, "offset", float(offset))
        object.__setattr__(self, "_cache", {})

    @property
    def k_max(self) -> int:
        return self.k_min + self.q.size - 1

    @property
    def cell_lo(self) -> int:
        return self.k_min - 1 if self.k_min <= 0 else 0

    @property
    def cell_hi(self) -> int:
        return self.k_max if self.k_max >= 1 else 0

    @property
    def domain(self) -> tuple[float, float]:
        return (self.cell_lo * self.mesh, (self.cell_hi + 1) * self.mesh)

    def increment_at(self, k: int) -> float:
        if k < self.k_min or k > self.k_max:
            raise RangeError(
                f"increment index {k} outside the window [{self.k_min}, {self.k_max}]"
            )
        return float(self.q[k - self.k_min])

    def cell_values(self) -> np.ndarray:
        """Potential value per cell, cells ``cell_lo .. cell_hi``."""
        if "cells" not in self._cache:
            lo, hi = self.cell_lo, self.cell_hi
            vals = np.zeros(hi - lo + 1)
            if hi >= 1:
                vals[1 - lo:] = np.cumsum(self.q[1 - self.k_min: hi + 1 - self.k_min])
            if lo <= -1:
                # cells -1, -2, ..., lo carry -(q_0), -(q_0 + q_{-1}), ...
                seg = self.q[(lo + 1) - self.k_min: 1 - self.k_min][::-1]
                back = -np.cumsum(seg)
                vals[: -lo] = back[::-1]
            vals += self.offset
            self._cache["cells"] = vals
        return self._cache["cells"]

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        self.check_window(float(np.min(x)), float(np.max(x)))
        j = np.floor(x / self.mesh + 1e-12).astype(int)
        j = np.clip(j, self.cell_lo, self.cell_hi)
        return self.cell_values()[j - self.cell_lo]

    def breakpoints(self, lo: float, hi: float) -> np.ndarray:
        k0 = int(np.ceil(lo / self.mesh))
        k1 = int(np.floor(hi / self.mesh))
        return np.arange(k0, k1 + 1) * self.mesh

    def cells(self) -> _CellData:
        if "celldata" not in self._cache:
            vals = self.cell_values()
            n = vals.size
            bounds = (np.arange(n + 1) + self.cell_lo) * self.mesh
            self._cache["celldata"] = _CellData(
                bounds=bounds, left_value=vals, slope=np.zeros(n),
                splus=float(np.max(vals)), sminus=float(np.max(-vals)),
            )
            if self._cache["celldata"].shift > MAX_TABLE_SHIFT:
                raise PotentialOverflowError(
                    "window oscillation of the potential exceeds the double-precision "
                    "budget for rescaled exponentials"
                )
        return self._cache["celldata"]


@dataclass(frozen=True)
class GridPotential(Potential):
    """Piecewise-linear interpolation of (knot, value) samples.

    The admissible class is far larger (any measurable V with locally
    integrable e^{|V|}); sampling onto a grid is a deliberate representation
    restriction.
    """

    knots: np.ndarray
    values: np.ndarray

    def __init__(self, knots, values):
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        if knots.ndim != 1 or knots.size < 2 or knots.shape != values.shape:
            raise ValidationError("need at least two aligned knots and values")
        if np.any(np.diff(knots) <= 0):
            raise ValidationError("knots must be strictly increasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_cache", {})

    @property
    def domain(self) -> tuple[float, float]:
        return (float(self.knots[0]), float(self.knots[-1]))

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        self.check_window(float(np.min(x)), float(np.max(x)))
        return np.interp(x, self.knots, self.values)

    def breakpoints(self, lo: float, hi: float) -> np.ndarray:
        k = self.knots
        return k[(k > lo) & (k < hi)]

    def cells(self) -> _CellData:
        if "celldata" not in self._cache:
            w = np.diff(self.knots)
            self._cache["celldata"] = _CellData(
                bounds=self.knots, left_value=self.values[:-1],
                slope=np.diff(self.values) / w,
                splus=float(np.max(self.values)), sminus=float(np.max(-self.values)),
            )
            if self._cache["celldata"].shift > MAX_TABLE_SHIFT:
                raise PotentialOverflowError(
                    "window oscillation of the potential exceeds the double-precision "
                    "budget for rescaled exponentials"
                )
        return self._cache["celldata"]


class CallablePotential(Potential):
    """Arbitrary callable potential; integrals use adaptive quadrature.

    The locally-integrable-exponential requirement is spot-checked by
    sampling the queried window; genuinely singular potentials should be
    represented on a grid instead.
    """

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray],
                 domain: tuple[float, float] = (-math.inf, math.inf)):
        self.fn = fn
        self.domain = (float(domain[0]), float(domain[1]))
        self._checked_windows: list[tuple[float, float]] = []

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        self.check_window(float(np.min(x)), float(np.max(x)))
        return np.asarray(self.fn(x), dtype=float)

    def integrability_check(self, lo: float, hi: float) -> None:
        for a, b in self._checked_windows:
            if a <= lo and hi <= b:
                return
        sample = self.value(np.linspace(lo, hi, 257))
        if not np.all(np.isfinite(sample)):
            raise ValidationError(
                f"potential is not finite on [{lo}, {hi}]; e^|V| cannot be integrable"
            )
        self._checked_windows.append((lo, hi))


def constant_potential(level: float = 0.0, lo: float = -100.0, hi: float = 100.0,
                       mesh: float = 1.0) -> PiecewiseConstantPotential:
    """A constant potential represented exactly on a lattice window."""
    k_lo = int(np.floor(lo / mesh)) - 1
    k_hi = int(np.ceil(hi / mesh)) + 1
    return PiecewiseConstantPotential(mesh, np.zeros(k_hi - k_lo + 1), k_lo, offset=level)


def zero_potential(mesh: float, k_min: int, k_max: int) -> PiecewiseConstantPotential:
    return PiecewiseConstantPotential(mesh, np.zeros(k_max - k_min + 1), k_min)


# ---------------------------------------------------------------------------
# Local cell walks: phi, p and short exponential integrals
# ---------------------------------------------------------------------------


def _walk_phi(cd: _CellData, a: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Rescaled phi/2: int over [a, a+h] of e^{V(b)-s+} int e^{-V(c)-s-},
    walked cell by cell from ``a`` so all terms stay local-sized."""
    n_q = a.size
    res = np.zeros(n_q)
    w_acc = np.zeros(n_q)
    e_s = math.exp(-cd.shift)
    for sgn, mask0 in ((1.0, h > 0), (-1.0, h < 0)):
        if not np.any(mask0):
            continue
        active = np.nonzero(mask0)[0]
        pos = a[active].copy()
        remaining = np.abs(h[active])
        cell = cd.locate(pos) if sgn > 0 else cd.locate_left(pos)
        guard = 0
        while active.size:
            guard += 1
            if guard > MAX_WALK_CELLS:
                raise RangeError("cell walk exceeded its budget; query spans too many cells")
            if sgn > 0:
                room = cd.bounds[cell + 1] - pos
            else:
                room = pos - cd.bounds[cell]
            length = np.minimum(np.maximum(room, 0.0), remaining)
            m = cd.slope[cell]
            v_edge = cd.left_value[cell] + m * (pos - cd.bounds[cell])
            ep_f = np.exp(v_edge - cd.splus)
            em_f = np.exp(-v_edge - cd.sminus)
            z = sgn * m * length
            ep_piece = ep_f * length * _phi1(z)
            em_piece = em_f * length * _phi1(-z)
            res[active] += ep_piece * w_acc[active] + e_s * length * length * _phi2(z)
            w_acc[active] += em_piece
            pos = pos + sgn * length
            remaining = remaining - length
            done = remaining <= 1e-300
            if np.any(done):
                keep = ~done
                active = active[keep]
                pos = pos[keep]
                remaining = remaining[keep]
                cell = cell[keep]
            cell = cell + (1 if sgn > 0 else -1)
            if active.size and (np.any(cell < 0) or np.any(cell >= cd.left_value.size)):
                raise RangeError("phi walk left the potential window")
    return res


def _walk_exp(cd: _CellData, lo: np.ndarray, hi: np.ndarray, sign: float) -> np.ndarray:
    """Rescaled int_{lo}^{hi} e^{sign V - shift} db via a rightward cell walk."""
    n_q = lo.size
    out = np.zeros(n_q)
    active = np.nonzero(hi > lo)[0]
    pos = lo[active].copy()
    remaining = (hi - lo)[active]
    cell = cd.locate(pos)
    shift = cd.splus if sign > 0 else cd.sminus
    guard = 0
    while active.size:
        guard += 1
        if guard > MAX_WALK_CELLS:
            raise RangeError("cell walk exceeded its budget; query spans too many cells")
        room = cd.bounds[cell + 1] - pos
        length = np.minimum(np.maximum(room, 0.0), remaining)
        m = cd.slope[cell]
        v_edge = cd.left_value[cell] + m * (pos - cd.bounds[cell])
        f = np.exp(sign * v_edge - shift)
        out[active] += f * length * _phi1(sign * m * length)
        pos = pos + length
        remaining = remaining - length
        done = remaining <= 1e-300
        if np.any(done):
            keep = ~done
            active = active[keep]
            pos = pos[keep]
            remaining = remaining[keep]
            cell = cell[keep]
        cell = cell + 1
        if active.size and np.any(cell >= cd.left_value.size):
            raise RangeError("integral walk left the potential window")
    return out


# ---------------------------------------------------------------------------
# Public primitives
# ---------------------------------------------------------------------------


def exp_integral(V: Potential, a1: float, a2: float, sign: str = "+") -> float:
    """int_{a1}^{a2} e^{+-V(b)} db, closed form per cell for table-backed V."""
    if a2 < a1:
        raise ValidationError("need a1 <= a2")
    if sign not in ("+", "-"):
        raise ValidationError("sign must be '+' or '-'")
    V.check_window(a1, a2)
    s = 1.0 if sign == "+" else -1.0
    cd = V.cells()
    if cd is not None:
        raw = float(_walk_exp(cd, np.array([a1]), np.array([a2]), s)[0])
        shift = cd.splus if s > 0 else cd.sminus
        if raw <= 0.0:
            return 0.0
        log_val = shift + math.log(raw)
        if log_val > LOG_FLOAT_MAX:
            raise PotentialOverflowError(
                f"exp integral over [{a1}, {a2}] overflows double precision"
            )
        return math.exp(log_val)

    assert isinstance(V, CallablePotential)
    if a2 == a1:
        return 0.0
    V.integrability_check(a1, a2)
    xs = np.linspace(a1, a2, 257)
    shift = float(np.max(s * V.value(xs)))
    from scipy.integrate import quad

    val, _ = quad(lambda x: math.exp(s * float(V.value(np.array([x]))[0]) - shift),
                  a1, a2, epsabs=1e-13, epsrel=1e-11, limit=400)
    if val <= 0.0:
        return 0.0
    log_val = shift + math.log(val)
    if log_val > LOG_FLOAT_MAX:
        raise PotentialOverflowError(
            f"exp integral over [{a1}, {a2}] overflows double precision"
        )
    return math.exp(log_val)


def phi_eval(V: Potential, a, h):
    """The oriented double integral 2 int_a^{a+h} int_a^b e^{V(b)-V(c)} dc db.

    Nonnegative for either sign of ``h``; exact (cell-closed-form) for
    lattice and grid potentials.
    """
    scalar = np.isscalar(a) and np.isscalar(h)
    a_arr, h_arr = np.broadcast_arrays(np.atleast_1d(np.asarray(a, dtype=float)),
                                       np.atleast_1d(np.asarray(h, dtype=float)))
    a_arr = np.ascontiguousarray(a_arr, dtype=float)
    h_arr = np.ascontiguousarray(h_arr, dtype=float)
    cd = V.cells()
    if cd is not None:
        b_arr = a_arr + h_arr
        lo = float(min(np.min(a_arr), np.min(b_arr)))
        hi = float(max(np.max(a_arr), np.max(b_arr)))
        V.check_window(lo, hi)
        res = _walk_phi(cd, a_arr, h_arr)
        out = np.zeros_like(res)
        pos = res > 0.0
        log_vals = cd.shift + np.log(res[pos]) + math.log(2.0)
        if np.any(log_vals > LOG_FLOAT_MAX):
            raise PotentialOverflowError("phi overflows double precision")
        out[pos] = np.exp(log_vals)
        return float(out[0]) if scalar else out

    out = np.array([_phi_callable(V, float(ai), float(hi_))
                    for ai, hi_ in zip(a_arr.ravel(), h_arr.ravel())])
    out = out.reshape(a_arr.shape)
    return float(out[0]) if scalar else out


def _phi_callable(V: Potential, a: float, h: float) -> float:
    if h == 0.0:
        return 0.0
    from scipy.integrate import quad

    lo, hi = (a, a + h) if h > 0 else (a + h, a)
    V.check_window(lo, hi)
    if isinstance(V, CallablePotential):
        V.integrability_check(lo, hi)

    def inner(b):
        return exp_integral(V, a, b, "-") if h > 0 else -exp_integral(V, b, a, "-")

    def outer(b):
        return math.exp(float(V.value(np.array([b]))[0])) * inner(b)

    val, _ = quad(outer, a, a + h, epsabs=1e-14, epsrel=1e-12, limit=200)
    return 2.0 * val


def psi_solve(V: Potential, a: float, eps: float, side: str = "up") -> float:
    """The unique positive step with phi(a, +-psi) equal to the squared step.

    Monotone bisection; the bracket starts at twice the step and doubles
    until the target is covered, with a doubling cap flagging pathological
    potentials.
    """
    if side not in ("up", "down"):
        raise ValidationError("side must be 'up' or 'down'")
    return float(psi_solve_many(V, np.array([a]), eps, side)[0])


def psi_solve_many(V: Potential, a: np.ndarray, eps: float, side: str) -> np.ndarray:
    if eps <= 0:
        raise ValidationError("the step parameter must be positive")
    a = np.asarray(a, dtype=float)
    sgn = 1.0 if side == "up" else -1.0
    target = eps * eps
    hi = np.full(a.shape, 2.0 * eps)
    cap = BRACKET_CAP_FACTOR * eps
    while True:
        vals = phi_eval(V, a, sgn * hi)
        short = vals < target
        if not np.any(short):
            break
        hi[short] *= 2.0
        over = hi > cap * (1 + 1e-12)
        if np.any(over):
            bad = float(a[over][0])
            raise SchemeStepError(
                f"psi bracket expansion exceeded {BRACKET_CAP_FACTOR} steps at "
                f"position {bad}; the potential is pathological for this step size"
            )
    lo = np.zeros_like(hi)
    tol = PSI_REL_TOL * eps
    while float(np.max(hi - lo)) > tol:
        mid = 0.5 * (lo + hi)
        vals = phi_eval(V, a, sgn * mid)
        less = vals < target
        lo = np.where(less, mid, lo)
        hi = np.where(less, hi, mid)
    return 0.5 * (lo + hi)


def p_eval(V: Potential, a: float, psi_up: float, psi_down: float) -> float:
    """Up-move probability: e^V mass left of ``a`` over the whole step window."""
    return float(p_eval_many(V, np.array([a]),
                             np.array([psi_up]), np.array([psi_down]))[0])


def p_eval_many(V: Potential, a: np.ndarray, psi_up: np.ndarray,
                psi_down: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    psi_up = np.asarray(psi_up, dtype=float)
    psi_down = np.asarray(psi_down, dtype=float)
    if np.any(psi_up <= 0) or np.any(psi_down <= 0):
        raise ValidationError("step sizes must be positive")
    cd = V.cells()
    if cd is not None:
        V.check_window(float(np.min(a - psi_down)), float(np.max(a + psi_up)))
        num = _walk_exp(cd, a - psi_down, a, 1.0)
        den = num + _walk_exp(cd, a, a + psi_up, 1.0)
    else:
        num = np.array([exp_integral(V, ai - d, ai, "+") for ai, d in zip(a, psi_down)])
        den = num + np.array([exp_integral(V, ai, ai + u, "+")
                              for ai, u in zip(a, psi_up)])
    if np.any(den <= 0):
        raise ValidationError("degenerate step window: zero exponential mass")
    p = num / den
    if np.any((p <= 0) | (p >= 1)):
        raise ValidationError("transition probability left (0, 1); check the window")
    return p


# ---------------------------------------------------------------------------
# Chain simulation
# ---------------------------------------------------------------------------


def potential_chain_simulate(V: Potential, start, eps: float, horizon: float,
                             config: SchemeConfig) -> PathBatch:
    """Run the two-point scheme and emit the embedding t -> X_{floor(t/eps^2)}.

    Lattice-aligned piecewise-constant potentials with lattice starts reduce
    exactly to a nearest-neighbour walk; the reduction is verified per site
    against the solver before being used.  Paths that would leave the
    potential's window (or the escape radius) are absorbed at the cemetery.
    """
    if horizon <= 0:
        raise ValidationError("the horizon must be positive")
    if eps <= 0:
        raise ValidationError("the step parameter must be positive")
    dt = eps * eps
    grid = config.output_grid(horizon)
    n_steps = int(np.ceil(horizon / dt))
    capture = np.minimum(np.floor(grid / dt + 1e-12).astype(int), n_steps)

    V.cells()  # materialize closed-form tables before any worker touches them
    lattice = _lattice_tables(V, eps, start, n_steps)
    out = np.empty((config.paths, grid.size, 1))
    xi = np.full(config.paths, np.inf)

    def run_block(block):
        lo_i, hi_i, idx = block
        m = hi_i - lo_i
        gen = _rng.stream(config.seed, idx, _rng.PATHS)
        x = resolve_start(start, 1, m, gen)[:, 0]
        alive = np.ones(m, dtype=bool)
        block_xi = np.full(m, np.inf)
        if lattice is not None:
            site_lo, p_table = lattice
            sites = np.rint(x / eps).astype(int)
            for k in range(n_steps + 1):
                for j in np.nonzero(capture == k)[0]:
                    out[lo_i:hi_i, j, 0] = sites * eps
                if k == n_steps:
                    break
                if not np.any(alive):
                    continue
                live = np.nonzero(alive)[0]
                rel = sites[live] - site_lo
                u = gen.random(live.size)
                sites[live] = sites[live] + np.where(u < p_table[rel], 1, -1)
                gone = ((sites[live] <= site_lo) | (sites[live] >= site_lo + p_table.size - 1)
                        | (np.abs(sites[live] * eps) > config.escape_radius))
                if np.any(gone):
                    dead_rows = live[gone]
                    alive[dead_rows] = False
                    block_xi[dead_rows] = (k + 1) * dt
        else:
            lo_d, hi_d = V.domain
            margin = 8.0 * eps
            for k in range(n_steps + 1):
                for j in np.nonzero(capture == k)[0]:
                    out[lo_i:hi_i, j, 0] = x
                if k == n_steps:
                    break
                if not np.any(alive):
                    continue
                live = np.nonzero(alive)[0]
                try:
                    psiu = psi_solve_many(V, x[live], eps, "up")
                    psid = psi_solve_many(V, x[live], eps, "down")
                    p = p_eval_many(V, x[live], psiu, psid)
                except RangeError as exc:
                    raise SchemeStepError(
                        f"step solve left the potential window near positions "
                        f"[{float(np.min(x[live]))}, {float(np.max(x[live]))}]: {exc}"
                    ) from exc
                u = gen.random(live.size)
                x[live] = np.where(u < p, x[live] + psiu, x[live] - psid)
                gone = ((np.abs(x[live]) > config.escape_radius)
                        | (x[live] < lo_d + margin) | (x[live] > hi_d - margin))
                if np.any(gone):
                    dead_rows = live[gone]
                    alive[dead_rows] = False
                    block_xi[dead_rows] = (k + 1) * dt
        xi[lo_i:hi_i] = block_xi

    blocks = _rng.path_blocks(config.paths, config.block_size)
    if config.threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            list(pool.map(run_block, blocks))
    else:
        for b in blocks:
            run_block(b)

    batch = PathBatch(grid, out, xi=xi)
    batch.blank_dead()
    return batch


def _lattice_tables(V: Potential, eps: float, start, n_steps: int):
    """Site-indexed up-probabilities when the scheme reduces to a lattice walk.

    Returns (site_lo, p_table) or None when the reduction does not apply;
    used only after verifying psi_up = psi_down = eps at every reachable
    site through the generic solver.
    """
    if not isinstance(V, PiecewiseConstantPotential):
        return None
    if abs(V.mesh - eps) > 1e-12 * eps:
        return None
    if callable(start):
        return None
    s = float(np.atleast_1d(np.asarray(start, dtype=float))[0])
    site0 = np.rint(s / eps)
    if abs(s - site0 * eps) > 1e-9 * eps:
        return None
    reach_lo = int(site0) - n_steps - 1
    reach_hi = int(site0) + n_steps + 1
    # Keep sites whose initial psi bracket (two cells each way) stays inside
    # the window; at aligned sites the bracket never expands further.
    site_lo = max(reach_lo, V.cell_lo + 2)
    site_hi = min(reach_hi, V.cell_hi - 1)
    if site_hi < site_lo:
        return None
    sites = np.arange(site_lo, site_hi + 1)
    pos = sites * eps
    psiu = psi_solve_many(V, pos, eps, "up")
    psid = psi_solve_many(V, pos, eps, "down")
    if (np.max(np.abs(psiu - eps)) > 1e-9 * eps
            or np.max(np.abs(psid - eps)) > 1e-9 * eps):
        return None
    p_table = p_eval_many(V, pos, psiu, psid)
    return site_lo, p_table


# ---------------------------------------------------------------------------
# Test-function transport and the potential-space distance
# ---------------------------------------------------------------------------


def transport_test_function(V: Potential, f0: float, s0: float,
                            g: Callable[[np.ndarray], np.ndarray],
                            interval: tuple[float, float],
                            resolution: int = 4097) -> Callable[[np.ndarray], np.ndarray]:
    """Reconstruct f with f(0) = f0, (e^{-V} f')(0) = s0 and the potential
    operator mapping f to g.

    Integrates f(x) = f0 + int_0^x e^{V(b)} (s0 + 2 int_0^b e^{-V} g) db on
    a dense grid (midpoint per cell, exact for cell-constant exponentials);
    the returned callable interpolates linearly between grid nodes.
    """
    lo, hi = float(interval[0]), float(interval[1])
    if not (lo <= 0.0 <= hi):
        raise ValidationError("the reconstruction interval must contain zero")
    V.check_window(lo, hi)
    base = np.linspace(lo, hi, resolution)
    nodes = np.unique(np.concatenate([base, V.breakpoints(lo, hi), [0.0]]))
    mids = 0.5 * (nodes[:-1] + nodes[1:])
    widths = np.diff(nodes)
    vm = V.value(mids)
    gm = np.asarray(g(mids), dtype=float)

    # Cumulative J(x) = int_0^x e^{-V} g, anchored at the zero node.
    inc_j = np.exp(-vm) * gm * widths
    j_nodes = np.concatenate([[0.0], np.cumsum(inc_j)])
    i0 = int(np.searchsorted(nodes, 0.0))
    j_nodes -= j_nodes[i0]

    # f increments: e^{V(mid)} (s0 + J_i + J_{i+1}) width   (trapezoid in J).
    inc_f = np.exp(vm) * (s0 * widths + (j_nodes[:-1] + j_nodes[1:]) * widths)
    f_nodes = np.concatenate([[0.0], np.cumsum(inc_f)])
    f_nodes -= f_nodes[i0]
    f_nodes += f0

    def f(x):
        x = np.asarray(x, dtype=float)
        if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
            raise RangeError("evaluation outside the reconstruction interval")
        return np.interp(x, nodes, f_nodes)

    return f


@dataclass(frozen=True)
class PotentialDistance:
    """Window distance between two potentials through their exponentials."""

    window: float
    value: float


def potential_distance(V: Potential, Vn: Potential, window: float,
                       tol_abs: float = 1e-10, tol_rel: float = 1e-8) -> PotentialDistance:
    """int_{-M}^{M} max(|e^V - e^{Vn}|, |e^{-V} - e^{-Vn}|) da."""
    if window <= 0:
        raise ValidationError("the window must be positive")
    from .operators import refine_midpoint

    lo, hi = -window, window
    V.check_window(lo, hi)
    Vn.check_window(lo, hi)
    cuts = np.unique(np.concatenate([
        [lo, hi], V.breakpoints(lo, hi), Vn.breakpoints(lo, hi)]))

    def integrand(x):
        va = V.value(x)
        vb = Vn.value(x)
        return np.maximum(np.abs(np.exp(va) - np.exp(vb)),
                          np.abs(np.exp(-va) - np.exp(-vb)))

    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        total += refine_midpoint(integrand, float(a), float(b),
                                 tol_abs / max(len(cuts) - 1, 1), tol_rel, start=4)
    return PotentialDistance(window=window, value=total)
