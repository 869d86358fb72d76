"""Random walks in a random environment and their quenched diffusion limits.

An environment is a family of per-site log-odds increments ``q_k``; the
walk at site k steps right with probability 1/(e^{q_k} + 1).  The same
increments define a piecewise-constant potential, and conditionally on the
draw the rescaled walk and the potential scheme's chain have identical
lattice laws, which ``quenched_cross_validate`` exploits as a consistency
oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import rng as _rng
from .core import PathBatch, SchemeConfig
from .diagnostics import ks_distance, wasserstein1
from .errors import ConfigurationError, ValidationError
from .potential import (
    PiecewiseConstantPotential,
    p_eval_many,
    potential_chain_simulate,
    psi_solve_many,
)

MAX_WINDOW_SITES = 20_000_000


class EnvironmentSpec:
    """Sampler of per-site increments for one scale of the scheme."""

    def sample(self, rng: np.random.Generator, eps: float, k_lo: int, k_hi: int) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class IIDScaled(EnvironmentSpec):
    """Independent increments ``sqrt(eps) * q_k`` with centred base draws.

    ``base`` draws from the unscaled distribution, which must have mean zero
    and the declared variance.
    """

    base: Callable[[np.random.Generator, int], np.ndarray]
    sigma2: float = 1.0

    @staticmethod
    def normal(sigma: float = 1.0) -> "IIDScaled":
        s = float(sigma)
        return IIDScaled(base=lambda rng, n: s * rng.standard_normal(n), sigma2=s * s)

    @staticmethod
    def rademacher(sigma: float = 1.0) -> "IIDScaled":
        s = float(sigma)
        return IIDScaled(
            base=lambda rng, n: s * np.where(rng.random(n) < 0.5, -1.0, 1.0),
            sigma2=s * s,
        )

    def __post_init__(self):
        if not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
            raise ValidationError("the base distribution needs a finite positive variance")

    def sample(self, rng, eps, k_lo, k_hi):
        return math.sqrt(eps) * np.asarray(self.base(rng, k_hi - k_lo + 1), dtype=float)


@dataclass(frozen=True)
class BernoulliPoisson(EnvironmentSpec):
    """Increments equal to ``q`` with probability ``lam * eps``, else zero."""

    q: float
    lam: float

    def __post_init__(self):
        if self.lam <= 0:
            raise ValidationError("the rate must be positive")

    def sample(self, rng, eps, k_lo, k_hi):
        prob = self.lam * eps
        if prob > 1.0:
            raise ValidationError(
                f"lam * eps = {prob:.3g} exceeds one; decrease eps or the rate"
            )
        n = k_hi - k_lo + 1
        return np.where(rng.random(n) < prob, self.q, 0.0)


@dataclass(frozen=True)
class CustomEnvironment(EnvironmentSpec):
    """User-supplied sampler (rng, eps, k_lo, k_hi) -> increments array."""

    sampler: Callable[[np.random.Generator, float, int, int], np.ndarray]

    def sample(self, rng, eps, k_lo, k_hi):
        out = np.asarray(self.sampler(rng, eps, k_lo, k_hi), dtype=float)
        if out.shape != (k_hi - k_lo + 1,):
            raise ValidationError("custom environment sampler returned a wrong shape")
        return out


def potential_from_q(q, eps: float, k_min: int = 0) -> PiecewiseConstantPotential:
    """The piecewise-constant potential generated by increments over a window.

    ``q[i]`` is the increment at lattice index ``k_min + i``; the potential
    is zero on ``[0, eps)`` and accumulates increments outward.  Evaluation
    outside the covered window raises a range error.
    """
    return PiecewiseConstantPotential(eps, q, k_min)


@dataclass
class QuenchedRun:
    """One environment draw together with the walks it generated."""

    eps: float
    k_min: int
    q: np.ndarray
    potential: PiecewiseConstantPotential
    walks: PathBatch
    start_site: int
    environment_seed: int
    path_seed: int

    @property
    def window(self) -> tuple[int, int]:
        return (self.k_min, self.k_min + self.q.size - 1)


def _walk_lattice(q: np.ndarray, k_min: int, start_site: int, n_steps: int,
                  eps: float, config: SchemeConfig, grid: np.ndarray,
                  path_seed: int) -> PathBatch:
    """Vectorized nearest-neighbour walk; output rescaled by eps.

    Right probability at site k is 1/(e^{q_k} + 1}); leaving the q-window
    absorbs the path at the cemetery.
    """
    p_right = 1.0 / (np.exp(q) + 1.0)
    n_sites = q.size
    dt = eps * eps
    capture = np.minimum(np.floor(grid / dt + 1e-12).astype(int), n_steps)
    out = np.empty((config.paths, grid.size, 1))
    xi = np.full(config.paths, np.inf)

    blocks = _rng.path_blocks(config.paths, config.block_size)
    for lo_i, hi_i, idx in blocks:
        m = hi_i - lo_i
        gen = _rng.stream(path_seed, idx, _rng.PATHS)
        sites = np.full(m, start_site)
        alive = np.ones(m, dtype=bool)
        block_xi = np.full(m, np.inf)
        for k in range(n_steps + 1):
            for j in np.nonzero(capture == k)[0]:
                out[lo_i:hi_i, j, 0] = sites * eps
            if k == n_steps:
                break
            if not np.any(alive):
                continue
            live = np.nonzero(alive)[0]
            rel = sites[live] - k_min
            u = gen.random(live.size)
            sites[live] = sites[live] + np.where(u < p_right[rel], 1, -1)
            gone = (sites[live] < k_min) | (sites[live] > k_min + n_sites - 1)
            if np.any(gone):
                dead = live[gone]
                alive[dead] = False
                block_xi[dead] = (k + 1) * dt
        xi[lo_i:hi_i] = block_xi

    batch = PathBatch(grid, out, xi=xi)
    batch.blank_dead()
    return batch


def rwre_simulate(env: EnvironmentSpec, eps: float, start_site: int, horizon: float,
                  environments: int, config: SchemeConfig) -> list[QuenchedRun]:
    """Sample environments and run a quenched walk batch inside each.

    The window is sized so walks cannot leave it (a nearest-neighbour walk
    moves at most one site per step), holding the exit probability at zero;
    a memory cap converts oversize windows into a configuration error.
    Environments are drawn sequentially from the master seed; paths within
    an environment use independent per-block streams.
    """
    if horizon <= 0:
        raise ValidationError("the horizon must be positive")
    if environments < 1:
        raise ValidationError("need at least one environment")
    n_steps = int(np.ceil(horizon / (eps * eps)))
    radius = n_steps + 1
    if 2 * radius + 1 > MAX_WINDOW_SITES:
        raise ConfigurationError(
            f"the walk window needs {2 * radius + 1} sites and exceeds the memory cap; "
            "increase eps or shorten the horizon"
        )
    k_lo = start_site - radius
    k_hi = start_site + radius
    grid = config.output_grid(horizon)

    runs = []
    for e_idx in range(environments):
        env_gen = _rng.stream(config.seed, e_idx, _rng.ENVIRONMENTS)
        q = env.sample(env_gen, eps, k_lo, k_hi)
        potential = potential_from_q(q, eps, k_min=k_lo)
        path_seed = config.seed + 1_000_003 * (e_idx + 1)
        walks = _walk_lattice(q, k_lo, start_site, n_steps, eps, config, grid, path_seed)
        runs.append(QuenchedRun(
            eps=eps, k_min=k_lo, q=q, potential=potential, walks=walks,
            start_site=start_site, environment_seed=e_idx, path_seed=path_seed,
        ))
    return runs


@dataclass
class CrossValidationReport:
    """Agreement between the lattice walk and the potential scheme under one
    environment draw."""

    kernel_max_dev: float
    psi_max_dev: float
    ks_stat: float
    ks_p_value: float
    wasserstein: float
    lattice_start: bool
    sites_checked: int

    def to_dict(self) -> dict:
        return {
            "kernel_max_dev": self.kernel_max_dev,
            "psi_max_dev": self.psi_max_dev,
            "ks_stat": self.ks_stat,
            "ks_p_value": self.ks_p_value,
            "wasserstein": self.wasserstein,
            "lattice_start": self.lattice_start,
            "sites_checked": self.sites_checked,
        }


def quenched_cross_validate(run: QuenchedRun, t: float, paths: int,
                            seed: Optional[int] = None,
                            site_probe: int = 200) -> CrossValidationReport:
    """Run the potential scheme in the run's own potential and compare laws.

    On lattice starts the two transition kernels coincide exactly, so the
    kernel deviation is a solver-consistency check and the marginal
    comparison carries pure Monte Carlo noise.
    """
    eps = run.eps
    if t <= 0:
        raise ValidationError("the comparison time must be positive")
    times = run.walks.times
    if t > times[-1] + 1e-12:
        raise ValidationError("comparison time beyond the walk horizon")

    # Kernel check on sites around the start.
    k_lo, k_hi = run.window
    probe_lo = max(k_lo + 1, run.start_site - site_probe)
    probe_hi = min(k_hi - 1, run.start_site + site_probe)
    sites = np.arange(probe_lo, probe_hi + 1)
    pos = sites * eps
    psiu = psi_solve_many(run.potential, pos, eps, "up")
    psid = psi_solve_many(run.potential, pos, eps, "down")
    psi_dev = float(max(np.max(np.abs(psiu - eps)), np.max(np.abs(psid - eps))))
    p_scheme = p_eval_many(run.potential, pos, psiu, psid)
    p_walk = 1.0 / (np.exp(run.q[sites - run.k_min]) + 1.0)
    kernel_dev = float(np.max(np.abs(p_scheme - p_walk)))

    cfg = SchemeConfig(paths=paths, seed=run.path_seed + 7 if seed is None else seed,
                       grid=times)
    scheme = potential_chain_simulate(run.potential, run.start_site * eps, eps,
                                      float(times[-1]), cfg)
    a, _ = run.walks.marginal(t)
    b, _ = scheme.marginal(t)
    if paths < len(run.walks):
        a = a[:paths]
    stat, p_value = ks_distance(a[:, 0], b[:, 0])
    w1 = wasserstein1(a[:, 0], b[:, 0])
    return CrossValidationReport(
        kernel_max_dev=kernel_dev, psi_max_dev=psi_dev,
        ks_stat=stat, ks_p_value=p_value, wasserstein=w1,
        lattice_start=True, sites_checked=sites.size,
    )
