"""Monte-Carlo ensembles, empirical Young measures, and moment reports.

An ensemble is a pure function of (system, base seed, member count, path
configuration): member m integrates along the counter-based Brownian path
with seed base_seed XOR m, so any member trajectory can be regenerated on
demand instead of stored.  Summary series (energy, pathwise integrals) are
kept for every member; full states are retained at probe times only, with
opt-in retention of everything else.

The empirical Young measure is the collection of member field samples at the
probe points; its pairings <mu, f> are ensemble-probe averages, reported with
Monte-Carlo standard errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .basis import BasisSpec, default_grid
from .sde import GalerkinSystem, Trajectory, batch_increments, integrate_batch


class EnsembleError(ValueError):
    """Invalid ensemble configuration or request."""


def member_seeds(base_seed: int, n_members: int) -> np.ndarray:
    """Member seeds base_seed XOR index; pairwise distinct by construction."""
    return np.uint64(base_seed) ^ np.arange(n_members, dtype=np.uint64)


def gaussian_initial(scale: float, max_ksq: float = 2.0, decay: float = 1.0) -> Callable:
    """Sampler for random low-mode initial data, iid across members.

    Coefficients are independent N(0, (scale / (1+|k|^2)^decay)^2) on modes
    with |k|^2 <= max_ksq, zero elsewhere; drawn from a counter-based stream
    keyed by the member seed so the ensemble stays reproducible.
    """

    def sample(seeds: np.ndarray, basis: BasisSpec) -> np.ndarray:
        mask = basis.k_sq <= max_ksq
        sig = scale / (1.0 + basis.k_sq) ** decay * mask
        out = np.empty((len(seeds), basis.n_modes))
        for m, seed in enumerate(seeds):
            gen = np.random.Generator(
                np.random.Philox(key=np.array([int(seed), 0x1717], dtype=np.uint64))
            )
            out[m] = gen.normal(size=basis.n_modes) * sig
        return out

    return sample


def constant_initial(a0: np.ndarray) -> Callable:
    def sample(seeds: np.ndarray, basis: BasisSpec) -> np.ndarray:
        return np.tile(np.asarray(a0, dtype=np.float64), (len(seeds), 1))

    return sample


def _chunk_size(n_modes: int, nnz: int, n_steps: int) -> int:
    # keep the (chunk, nnz) contraction workspace near ~2.5e7 doubles
    per_member = max(nnz, 4 * n_modes, 1)
    return max(16, min(8192, int(2.5e7 / per_member)))


@dataclass
class Ensemble:
    """Summary arrays for M independent trajectories plus regeneration metadata.

    Time series arrays are saved on the thinned grid (save spacing
    store_every * dt); sup_energy and the pathwise integrals are accumulated
    at full step resolution.  blowup_step is -1 for members that stayed
    finite.
    """

    system: GalerkinSystem
    base_seed: int
    scheme: str
    dt: float
    n_steps: int
    store_every: int
    seeds: np.ndarray           # (M,)
    initial_states: np.ndarray  # (M, N)
    times: np.ndarray           # (n_save + 1,)
    energy: np.ndarray          # (n_save + 1, M)
    grad_energy: np.ndarray
    stoch_int: np.ndarray
    grad_int: np.ndarray
    sup_energy: np.ndarray      # (M,)
    final_states: np.ndarray    # (M, N)
    blowup_step: np.ndarray     # (M,)
    probe_times: np.ndarray     # (P,)
    probe_states: np.ndarray    # (P, M, N)

    @property
    def n_members(self) -> int:
        return self.seeds.size

    @property
    def n_saved(self) -> int:
        return self.times.size

    @property
    def saved_dt(self) -> float:
        return self.dt * self.store_every

    @property
    def t_final(self) -> float:
        return self.n_steps * self.dt

    def member_trajectory(self, m: int) -> Trajectory:
        """Regenerate member m at full resolution (bitwise reproducible)."""
        inc = batch_increments(self.seeds[m : m + 1], self.dt, self.n_steps,
                               self.system.n_brownian)
        out = integrate_batch(self.system, self.initial_states[m : m + 1], inc,
                              self.dt, self.scheme, store_every=1)
        blow = out["blowup_step"][0]
        return Trajectory(
            times=out["times"], states=out["states"][:, 0, :],
            energy=out["energy"][:, 0], grad_energy=out["grad_energy"][:, 0],
            stoch_int=out["stoch_int"][:, 0], grad_int=out["grad_int"][:, 0],
            increments=out["increments"][:, 0, :],
            seed=int(self.seeds[m]), dt=self.dt, store_every=1,
            scheme=self.scheme, nu=self.system.nu,
            blowup_time=None if blow < 0 else float(blow * self.dt),
        )

    def chunked_states(self) -> Iterator[tuple[slice, np.ndarray]]:
        """Regenerate full-resolution state series chunk by chunk.

        Yields (member slice, states (n_steps + 1, chunk, N)); deterministic
        order, independent of chunking.
        """
        chunk = _chunk_size(self.system.n_modes, self.system.conv.nnz, self.n_steps)
        for lo in range(0, self.n_members, chunk):
            sl = slice(lo, min(lo + chunk, self.n_members))
            inc = batch_increments(self.seeds[sl], self.dt, self.n_steps,
                                   self.system.n_brownian)
            out = integrate_batch(self.system, self.initial_states[sl], inc,
                                  self.dt, self.scheme, store_every=1,
                                  track_sup=False)
            yield sl, out["states"]

    def states_at(self, t: float) -> np.ndarray:
        """Member states (M, N) at a probe time."""
        idx = np.nonzero(np.isclose(self.probe_times, t, rtol=0.0, atol=1e-12))[0]
        if idx.size == 0:
            raise EnsembleError(f"time {t} is not in the probe schedule {self.probe_times}")
        return self.probe_states[idx[0]]


def run_ensemble(
    system: GalerkinSystem,
    initial: Callable | np.ndarray,
    n_members: int,
    base_seed: int,
    dt: float,
    n_steps: int,
    scheme: str = "euler_maruyama",
    store_every: int = 1,
    probe_times: tuple[float, ...] | None = None,
    threads: int = 1,
) -> Ensemble:
    """Integrate M independent members; deterministic given the base seed.

    `initial` is either a fixed coefficient vector or a sampler
    f(seeds, basis) -> (M, N).  Members run in contiguous chunks (optionally
    on a thread pool); all reductions are written by member index, so results
    are bitwise independent of chunking and scheduling.
    """
    if n_members < 1:
        raise EnsembleError(f"need at least one member, got {n_members}")
    seeds = member_seeds(base_seed, n_members)
    if callable(initial):
        a0 = initial(seeds, system.basis)
    else:
        a0 = np.tile(np.asarray(initial, dtype=np.float64), (n_members, 1))
    if a0.shape != (n_members, system.n_modes):
        raise EnsembleError(f"initial states have shape {a0.shape}")

    if probe_times is None:
        probe_times = (0.0, n_steps * dt)
    probe_times = np.asarray(sorted(set(float(t) for t in probe_times)))
    saved_dt = dt * store_every
    probe_idx = []
    for t in probe_times:
        j = int(round(t / saved_dt)) if saved_dt else 0
        if abs(j * saved_dt - t) > 1e-9 * max(1.0, abs(t)) or j > n_steps // max(store_every, 1):
            raise EnsembleError(f"probe time {t} is not on the saved grid")
        probe_idx.append(j)

    n_save = n_steps // store_every if n_steps else 0
    K = system.n_brownian
    times = np.arange(n_save + 1) * saved_dt
    energy = np.empty((n_save + 1, n_members))
    grad_energy = np.empty_like(energy)
    stoch_int = np.empty_like(energy)
    grad_int = np.empty_like(energy)
    sup_energy = np.empty(n_members)
    final_states = np.empty((n_members, system.n_modes))
    blowup = np.empty(n_members, dtype=np.int64)
    probe_states = np.empty((len(probe_times), n_members, system.n_modes))

    def run_chunk(sl: slice):
        inc = batch_increments(seeds[sl], dt, n_steps, K)
        out = integrate_batch(system, a0[sl], inc, dt, scheme, store_every)
        energy[:, sl] = out["energy"]
        grad_energy[:, sl] = out["grad_energy"]
        stoch_int[:, sl] = out["stoch_int"]
        grad_int[:, sl] = out["grad_int"]
        sup_energy[sl] = out["sup_energy"]
        final_states[sl] = out["states"][-1]
        blowup[sl] = out["blowup_step"]
        for p, j in enumerate(probe_idx):
            probe_states[p, sl] = out["states"][j]

    chunk = _chunk_size(system.n_modes, system.conv.nnz, n_steps)
    slices = [slice(lo, min(lo + chunk, n_members)) for lo in range(0, n_members, chunk)]
    if threads > 1 and len(slices) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_chunk, slices))
    else:
        for sl in slices:
            run_chunk(sl)

    return Ensemble(
        system=system, base_seed=base_seed, scheme=scheme, dt=dt,
        n_steps=n_steps, store_every=store_every, seeds=seeds,
        initial_states=a0, times=times, energy=energy,
        grad_energy=grad_energy, stoch_int=stoch_int, grad_int=grad_int,
        sup_energy=sup_energy, final_states=final_states, blowup_step=blowup,
        probe_times=probe_times, probe_states=probe_states,
    )


# -- empirical Young measures ---------------------------------------------------


@dataclass
class EmpiricalYoungMeasure:
    """Member field samples u^(m)(t, x) at the probe schedule.

    samples[p, m, g, :] is member m's velocity at probe time p and grid
    point g; the pairing <mu, f> at a probe is the member average of f.
    """

    probe_times: np.ndarray     # (P,)
    grid_n: int
    quad_weight: float
    samples: np.ndarray         # (P, M, G, d)

    def mean_field(self) -> np.ndarray:
        """<mu, identity> = ensemble mean field at each probe, (P, G, d)."""
        return self.samples.mean(axis=1)


def empirical_measure(ensemble: Ensemble, grid_n: int | None = None) -> EmpiricalYoungMeasure:
    basis = ensemble.system.basis
    if grid_n is None:
        grid_n = default_grid(basis.cutoff)
    vals = basis.mode_values(grid_n)
    samples = np.einsum("pmn,ndg->pmgd", ensemble.probe_states, vals)
    return EmpiricalYoungMeasure(
        probe_times=ensemble.probe_times,
        grid_n=grid_n,
        quad_weight=basis.quad_weight(grid_n),
        samples=samples,
    )


def young_eval(
    measure: EmpiricalYoungMeasure,
    f: Callable[[np.ndarray], np.ndarray],
    growth_exponent: float,
    weight: Callable[[float], np.ndarray] | None = None,
) -> dict:
    """Monte-Carlo estimate of E[ int_0^T int_D w(t,x) f(u) dx dt ].

    `f` maps field values (..., d) to scalars (...); the declared growth
    exponent |f(x)| <= c(|x|^q + 1) is trusted, not verified, and recorded in
    the result.  `weight` maps a probe time to a scalar or per-grid-point
    weight.  Time quadrature is trapezoidal over the probe times (exact when
    the integrand mean is affine in t), space quadrature is the uniform grid
    rule.  Returns the estimate with its standard error across members.
    """
    P, M, G, d = measure.samples.shape
    fvals = f(measure.samples)
    if fvals.shape != (P, M, G):
        raise EnsembleError(f"f returned shape {fvals.shape}, expected {(P, M, G)}")
    if weight is not None:
        w = np.stack([np.broadcast_to(weight(float(t)), (G,))
                      for t in measure.probe_times])
        fvals = fvals * w[:, None, :]
    space = fvals.sum(axis=2) * measure.quad_weight           # (P, M)
    t = measure.probe_times
    if P > 1:
        wt = np.empty(P)
        wt[0] = 0.5 * (t[1] - t[0])
        wt[-1] = 0.5 * (t[-1] - t[-2])
        wt[1:-1] = 0.5 * (t[2:] - t[:-2])
    else:
        wt = np.array([1.0])
    per_member = wt @ space                                    # (M,)
    est = float(per_member.mean())
    se = float(per_member.std(ddof=1) / math.sqrt(M)) if M > 1 else 0.0
    return {
        "estimate": est,
        "stderr": se,
        "n_members": M,
        "growth_exponent": growth_exponent,
    }


# -- moment reports ---------------------------------------------------------------


def moment_report(ensemble: Ensemble, p: float) -> dict:
    """E[sup_t |u|^p] and nu E[(int |grad u|^2)^{p/2}] with standard errors.

    The sup runs over every integration step (tracked online), not just the
    saved grid.
    """
    if p < 2:
        raise EnsembleError(f"moment exponent must be >= 2, got {p}")
    M = ensemble.n_members
    sup_norm_p = (2.0 * ensemble.sup_energy) ** (p / 2.0)
    grad_p = ensemble.grad_int[-1] ** (p / 2.0)
    nu = ensemble.system.nu

    def stats(x):
        mean = float(x.mean())
        se = float(x.std(ddof=1) / math.sqrt(M)) if M > 1 else 0.0
        return mean, se

    sup_mean, sup_se = stats(sup_norm_p)
    grad_mean, grad_se = stats(nu * grad_p)
    return {
        "p": p,
        "sup_moment": sup_mean,
        "sup_moment_stderr": sup_se,
        "viscous_moment": grad_mean,
        "viscous_moment_stderr": grad_se,
        "n_members": M,
    }


def independence_check(ensemble: Ensemble) -> dict:
    """Sample correlation of terminal energy between member-index halves.

    For independent members the correlation is O(M^{-1/2}); the check
    reports |corr| against 3/sqrt(M/2).
    """
    e = ensemble.energy[-1]
    M2 = e.size // 2
    x, y = e[:M2], e[M2 : 2 * M2]
    if M2 < 2 or x.std() == 0 or y.std() == 0:
        return {"correlation": 0.0, "bound": 0.0, "ok": True}
    corr = float(np.corrcoef(x, y)[0, 1])
    bound = 3.0 / math.sqrt(M2)
    return {"correlation": corr, "bound": bound, "ok": abs(corr) <= bound}
