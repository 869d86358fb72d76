"""Discrete-to-continuous time embeddings and the random-clock diagnostic.

A discrete chain becomes a continuous-time path either through the floor
clock (x(t) = chain[floor(t / eps)]) or through Poissonization, where the
k-th step happens at the k-th arrival of a unit-rate Poisson process run at
speed 1/eps.  The two are pathwise coupled through the piecewise-affine
clock built from the same exponential holding times, and the probability
that this clock deviates from the identity admits an explicit bound that
``doob_bound_check`` verifies empirically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .core import PathRecord
from .errors import RangeError, ValidationError


def _chain_states(chain) -> np.ndarray:
    states = np.asarray(chain, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    if states.ndim != 2 or states.shape[0] < 1:
        raise ValidationError("a chain must be a nonempty (steps, dim) array")
    return states


def floor_embed(chain, eps: float, grid) -> PathRecord:
    """x(t) = chain[floor(t / eps)]; right-continuous, constant on steps."""
    if eps <= 0:
        raise ValidationError("eps must be positive")
    states = _chain_states(chain)
    grid = np.asarray(grid, dtype=float)
    idx = np.floor(grid / eps + 1e-12).astype(int)
    if np.any(idx < 0) or np.any(idx >= states.shape[0]):
        raise RangeError(
            f"grid reaches step {int(idx.max())} but the chain has {states.shape[0]} states"
        )
    return PathRecord(grid, states[idx])


def poissonize(chain, eps: float, rng: np.random.Generator, grid) -> PathRecord:
    """x(t) = chain[N(t / eps)] for a unit-rate Poisson counter N.

    When the horizon needs more arrivals than the chain has states, the
    record is truncated at the last representable grid time and flagged.
    """
    if eps <= 0:
        raise ValidationError("eps must be positive")
    states = _chain_states(chain)
    grid = np.asarray(grid, dtype=float)
    n_states = states.shape[0]
    holding = _rng.exponential(rng, n_states)
    arrivals = np.cumsum(holding)
    counts = np.searchsorted(arrivals, grid / eps, side="right")
    ok = counts <= n_states - 1
    truncated = not bool(np.all(ok))
    if truncated:
        grid = grid[ok]
        counts = counts[ok]
        if grid.size == 0:
            raise RangeError("the chain was exhausted before the first grid time")
    return PathRecord(grid, states[counts], truncated=truncated)


def poissonize_with(chain, eps: float, holding: np.ndarray, grid) -> PathRecord:
    """Poissonization with externally supplied unit-exponential holding times."""
    states = _chain_states(chain)
    grid = np.asarray(grid, dtype=float)
    arrivals = np.cumsum(np.asarray(holding, dtype=float))
    counts = np.searchsorted(arrivals, grid / eps, side="right")
    if np.any(counts > states.shape[0] - 1):
        raise RangeError("not enough chain states for the requested horizon")
    return PathRecord(grid, states[counts])


def gamma_clock(holding: np.ndarray, eps: float, t) -> np.ndarray | float:
    """The piecewise-affine clock interpolating the rescaled arrival times.

    At knot times k*eps the clock equals eps times the k-th partial sum of
    the holding times; in between it interpolates with the next holding
    time.  Strictly increasing, zero at zero.
    """
    if eps <= 0:
        raise ValidationError("eps must be positive")
    holding = np.asarray(holding, dtype=float)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_arr < 0):
        raise ValidationError("times must be nonnegative")
    k = np.floor(t_arr / eps + 1e-12).astype(int)
    frac = t_arr / eps - k
    frac = np.where(frac < 0, 0.0, frac)
    if np.any(k + 1 > holding.size):
        raise RangeError(
            f"need {int(k.max()) + 1} holding times but only {holding.size} supplied"
        )
    partial = np.concatenate([[0.0], np.cumsum(holding)])
    out = eps * (partial[k] + frac * holding[np.minimum(k, holding.size - 1)])
    return float(out[0]) if np.isscalar(t) else out


def gamma_clock_inverse(holding: np.ndarray, eps: float, s) -> np.ndarray | float:
    """Inverse of the clock by binary search over its knots (it is piecewise
    affine and strictly increasing)."""
    holding = np.asarray(holding, dtype=float)
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    partial = eps * np.concatenate([[0.0], np.cumsum(holding)])
    k = np.searchsorted(partial, s_arr, side="right") - 1
    if np.any(k < 0) or np.any(k >= holding.size):
        raise RangeError("inverse clock query outside the covered range")
    frac = (s_arr - partial[k]) / (eps * holding[k])
    out = eps * (k + frac)
    return float(out[0]) if np.isscalar(s) else out


@dataclass(frozen=True)
class ClockBoundReport:
    """Empirical check of the clock-deviation probability bound."""

    eps: float
    horizon: float
    threshold: float
    trials: int
    bound: float
    frequency: float
    std_error: float

    @property
    def ok(self) -> bool:
        return self.frequency <= self.bound + 3.0 * self.std_error

    def to_dict(self) -> dict:
        return {
            "eps": self.eps, "horizon": self.horizon, "threshold": self.threshold,
            "trials": self.trials, "bound": self.bound, "frequency": self.frequency,
            "std_error": self.std_error, "ok": self.ok,
        }


def doob_bound_check(eps: float, horizon: float, threshold: float, trials: int,
                     seed: int = 0) -> ClockBoundReport:
    """Estimate P(sup_{s<=t} |clock(s) - s| >= threshold) and compare with
    the explicit bound 4 (t + eps) eps / threshold^2.

    The supremum over continuous time is dominated by the supremum over the
    clock's knots, which is what the Monte Carlo evaluates (conservative).
    """
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    if eps <= 0 or horizon <= 0 or threshold <= 0:
        raise ValidationError("eps, horizon and threshold must be positive")
    n_knots = int(np.ceil(horizon / eps))
    gen = _rng.stream(seed, namespace=_rng.CLOCKS)
    hits = 0
    chunk = max(1, min(trials, int(2e7) // max(n_knots, 1)))
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        e = _rng.exponential(gen, (m, n_knots))
        partial = np.cumsum(e, axis=1)
        dev = eps * np.max(np.abs(partial - np.arange(1, n_knots + 1)[None, :]), axis=1)
        hits += int(np.sum(dev >= threshold))
        done += m
    freq = hits / trials
    bound = 4.0 * (horizon + eps) * eps / threshold ** 2
    se = float(np.sqrt(max(freq * (1 - freq), 1.0 / trials) / trials))
    return ClockBoundReport(eps=eps, horizon=horizon, threshold=threshold,
                            trials=trials, bound=bound, frequency=freq, std_error=se)
