"""Explicit simulation scheme for symmetric stable-type dynamics.

The single-step transition from a point ``a`` at scale ``n`` draws a uniform
sphere direction and an inverse-power radius; its law is exactly the
normalized truncation of the radial density ``c(a) |h|^{-d-alpha(a)}`` to
radii above a closed-form threshold.  Composing steps and embedding with the
floor clock ``t -> Z_{floor(n t)}`` approximates the continuous dynamics.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import rng as _rng
from .core import (
    LevyTriplet,
    PathBatch,
    SchemeConfig,
    StableLike,
    TripletField,
    as_point,
    resolve_start,
    sphere_surface_area,
)
from .errors import DegenerateStateError, ValidationError


@dataclass(frozen=True)
class StableField:
    """State-dependent scale ``c >= 0`` and index ``alpha in (0, 2)``.

    Both callables take an (m, d) array of points and return (m,) arrays;
    scalars are accepted and broadcast.
    """

    c: Callable[[np.ndarray], np.ndarray]
    alpha: Callable[[np.ndarray], np.ndarray]
    dim: int = 1

    @staticmethod
    def constant(c: float, alpha: float, dim: int = 1) -> "StableField":
        return StableField(lambda x: np.full(x.shape[0], float(c)),
                           lambda x: np.full(x.shape[0], float(alpha)), dim)

    def evaluate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        points = np.atleast_2d(points)
        c = np.broadcast_to(np.asarray(self.c(points), dtype=float), (points.shape[0],)).copy()
        a = np.broadcast_to(np.asarray(self.alpha(points), dtype=float), (points.shape[0],)).copy()
        if np.any(c < 0):
            raise ValidationError("the scale function must be nonnegative")
        if np.any((a <= 0) | (a >= 2)):
            raise ValidationError("the stability index must stay inside (0, 2)")
        return c, a


def stable_threshold(field: StableField, a, n: float) -> float:
    """Truncation radius below which the single-step law carries no mass.

    Cutting the radial density (c(a)/n) |h|^(-d-alpha(a)) at this radius
    makes it integrate to one, i.e. the step law is a probability measure.
    """
    a = as_point(a, field.dim)
    c, alpha = field.evaluate(a[None, :])
    if c[0] == 0.0:
        raise DegenerateStateError(f"no jump mass at state {a.tolist()} (c = 0)")
    s = sphere_surface_area(field.dim)
    return float((c[0] * s / (n * alpha[0])) ** (1.0 / alpha[0]))


def stable_jump_magnitude(c, alpha, dim: int, n: float, u) -> np.ndarray:
    """Radius of a single step given the uniform variate ``u`` in (0, 1]."""
    s = sphere_surface_area(dim)
    c = np.asarray(c, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    u = np.asarray(u, dtype=float)
    return (c * s / (n * alpha * u)) ** (1.0 / alpha)


def stable_tail_probability(c: float, alpha: float, dim: int, n: float, r) -> np.ndarray:
    """P(|step| > r) for the single-step law; capped at one below the threshold."""
    s = sphere_surface_area(dim)
    r = np.asarray(r, dtype=float)
    return np.minimum(1.0, c * s / (n * alpha * r ** alpha))


def stable_jump_sample(field: StableField, a, n: float, rng: np.random.Generator):
    """One draw of the next state from ``a``; exact sampling of the step law."""
    a = as_point(a, field.dim)
    c, alpha = field.evaluate(a[None, :])
    if c[0] == 0.0:
        raise DegenerateStateError(f"no jump mass at state {a.tolist()} (c = 0)")
    q = _rng.unit_sphere(rng, 1, field.dim)[0]
    u = _rng.uniform_open_closed(rng, 1)[0]
    mag = stable_jump_magnitude(c[0], alpha[0], field.dim, n, u)
    return a + q * mag


def stable_chain_simulate(field: StableField, start, n: float, horizon: float,
                          config: SchemeConfig) -> PathBatch:
    """Simulate the stable-type chain and emit its floor-time embedding.

    ``ceil(n * horizon)`` steps are taken per path; the returned batch holds
    the embedding t -> Z_{floor(n t)} sampled on the configured output grid.
    States with zero scale hold their position for the step; paths beyond
    the escape radius are absorbed at the cemetery.
    """
    if horizon <= 0:
        raise ValidationError("the horizon must be positive")
    if n < 1:
        raise ValidationError("the scale n must be at least 1")
    grid = config.output_grid(horizon)
    n_steps = int(np.ceil(n * horizon))
    eps = 1.0 / n
    # Step index at which each grid time is captured (right-continuous floor).
    capture = np.minimum(np.floor(grid * n + 1e-12).astype(int), n_steps)

    out = np.empty((config.paths, grid.size, field.dim))
    xi = np.full(config.paths, np.inf)
    blocks = _rng.path_blocks(config.paths, config.block_size)

    def run_block(block):
        lo, hi, idx = block
        m = hi - lo
        gen = _rng.stream(config.seed, idx, _rng.PATHS)
        x = resolve_start(start, field.dim, m, gen)
        alive = np.ones(m, dtype=bool)
        block_xi = np.full(m, np.inf)
        for k in range(n_steps + 1):
            for j in np.nonzero(capture == k)[0]:
                out[lo:hi, j, :] = x
            if k == n_steps:
                break
            if np.any(alive):
                live = np.nonzero(alive)[0]
                c, alpha = field.evaluate(x[live])
                q = _rng.unit_sphere(gen, live.size, field.dim)
                u = _rng.uniform_open_closed(gen, live.size)
                moving = c > 0.0
                mag = np.zeros(live.size)
                if np.any(moving):
                    mag[moving] = stable_jump_magnitude(
                        c[moving], alpha[moving], field.dim, n, u[moving])
                x[live] = x[live] + q * mag[:, None]
                escaped = np.linalg.norm(x[live], axis=1) > config.escape_radius
                if np.any(escaped):
                    dead = live[escaped]
                    alive[dead] = False
                    block_xi[dead] = (k + 1) * eps
        xi[lo:hi] = block_xi

    if config.threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            list(pool.map(run_block, blocks))
    else:
        for b in blocks:
            run_block(b)

    batch = PathBatch(grid, out, xi=xi)
    batch.blank_dead()
    return batch


def stable_triplet_field(field: StableField) -> TripletField:
    """The drift-free, diffusion-free triplet field of the stable dynamics."""

    def fn(a: np.ndarray) -> LevyTriplet:
        c, alpha = field.evaluate(a[None, :])
        d = field.dim
        return LevyTriplet(np.zeros(d), np.zeros((d, d)),
                           StableLike(c=float(c[0]), alpha=float(alpha[0]), dim=d))

    return TripletField(fn, field.dim, claimed_continuous=True)


def scheme_triplet_field(field: StableField, n: float) -> TripletField:
    """Triplet field of the normalized single-step law at scale ``n``.

    The step law, scaled by ``n`` and with the point mass at the base point
    removed, is the radial density truncated below the step threshold with
    zero drift (by symmetry) and zero diffusion; feeding these fields to the
    convergence checkers probes the scheme's generator gap directly.
    """

    def fn(a: np.ndarray) -> LevyTriplet:
        c, alpha = field.evaluate(a[None, :])
        d = field.dim
        if c[0] == 0.0:
            return LevyTriplet(np.zeros(d), np.zeros((d, d)), None)
        rmin = stable_threshold(field, a, n)
        nu = StableLike(c=float(c[0]), alpha=float(alpha[0]), dim=d, min_radius=rmin)
        return LevyTriplet(np.zeros(d), np.zeros((d, d)), nu)

    return TripletField(fn, field.dim, claimed_continuous=True)
