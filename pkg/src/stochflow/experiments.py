"""Reproducible limit experiments: viscosity sweeps, order studies, benchmarks.

The viscosity sweep couples Brownian paths across the nu axis (same member
seeds), which turns the vanishing-viscosity program into something observable
at desk scale: per-member field differences between consecutive nu values act
as a Cauchy surrogate for the limit, while moments and the weighted viscous
functional are tracked for uniformity and decay.

The order study measures strong convergence rates by dyadic refinement of a
single family of Brownian paths against a finer reference run.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .diagnostics import energy_variational_gap, make_test_processes
from .ensemble import Ensemble, member_seeds, run_ensemble
from .noise import hs_norm
from .sde import BrownianPath, GalerkinSystem, build_system, integrate_batch


class ExperimentError(ValueError):
    """Invalid experiment plan."""


@dataclass
class SweepPlan:
    """Axis and coupling choices for a parameter sweep."""

    nus: tuple[float, ...]
    n_members: int = 64
    base_seed: int = 0
    dt: float = 1e-2
    n_steps: int = 1000
    scheme: str = "euler_maruyama"
    store_every: int = 10
    coupled_paths: bool = True
    moment_p: float = 4.0
    gap_battery: int = 10

    def validate(self):
        if len(self.nus) < 1:
            raise ExperimentError("empty viscosity axis")
        if any(nu <= 0 for nu in self.nus):
            raise ExperimentError("viscosity axis must be positive")
        if any(a <= b for a, b in zip(self.nus, self.nus[1:])):
            raise ExperimentError("viscosity axis must be strictly decreasing")


def _grad_norm_l2l2(system: GalerkinSystem, phi: np.ndarray, t_final: float) -> float:
    """|grad phi|_{L^2(0,T;L^2)} for a static field phi."""
    return math.sqrt(t_final * float(system.basis.k_sq @ (phi ** 2)))


def viscosity_sweep(
    plan: SweepPlan,
    base_system: GalerkinSystem,
    initial,
    test_field: np.ndarray | None = None,
) -> dict:
    """Run the nu axis with shared paths and collect the limit diagnostics.

    Per nu: a moment report at plan.moment_p, member statistics of the energy
    residual over [0, T], the viscous functional nu E[int |grad u|^2], and
    the weighted viscous term sqrt(nu) * sqrt(nu E[int |grad u|^2]) *
    |grad phi| whose fitted log-log exponent against nu is the decay
    observable.  Consecutive-axis field differences at T are reported under
    path coupling, and the inviscid-form gap battery runs on one member of
    the smallest-nu ensemble.
    """
    plan.validate()
    t_final = plan.dt * plan.n_steps
    hs2 = hs_norm(base_system.noise.additive)
    if test_field is None:
        test_field = np.zeros(base_system.n_modes)
        low = np.nonzero(base_system.basis.k_sq <= 2.0)[0]
        test_field[low] = 0.5 / math.sqrt(low.size)
    grad_phi = _grad_norm_l2l2(base_system, test_field, t_final)

    points = []
    finals = []
    ensembles: list[Ensemble] = []
    for idx, nu in enumerate(plan.nus):
        system = build_system(base_system.basis, base_system.noise, nu=nu,
                              conv=base_system.conv)
        seed = plan.base_seed if plan.coupled_paths else plan.base_seed + 7919 * idx
        ens = run_ensemble(
            system, initial, plan.n_members, seed, plan.dt, plan.n_steps,
            scheme=plan.scheme, store_every=plan.store_every,
        )
        ensembles.append(ens)
        finals.append(ens.final_states)
        from .ensemble import moment_report

        mom = moment_report(ens, plan.moment_p)
        resid = (
            ens.energy[-1] - ens.energy[0]
            + nu * ens.grad_int[-1]
            - ens.stoch_int[-1]
            - 0.5 * t_final * hs2
        )
        grad_mean = float(ens.grad_int[-1].mean())
        viscous_functional = nu * grad_mean
        weighted = math.sqrt(nu) * math.sqrt(max(viscous_functional, 0.0)) * grad_phi
        points.append({
            "nu": nu,
            "moment": mom,
            "residual_mean": float(resid.mean()),
            "residual_stderr": float(resid.std(ddof=1) / math.sqrt(plan.n_members))
            if plan.n_members > 1 else 0.0,
            "viscous_functional": viscous_functional,
            "weighted_viscous": weighted,
            "blowups": int(np.sum(ens.blowup_step >= 0)),
        })

    # Cauchy surrogate under coupling: mean |u_{nu_i} - u_{nu_{i+1}}|(T)
    cauchy = []
    if plan.coupled_paths:
        for i in range(len(plan.nus) - 1):
            diff = np.linalg.norm(finals[i] - finals[i + 1], axis=1)
            cauchy.append(float(diff.mean()))

    sup_moments = [p["moment"]["sup_moment"] for p in points]
    uniformity = max(sup_moments) / min(sup_moments) if min(sup_moments) > 0 else math.inf
    weighted_vals = [p["weighted_viscous"] for p in points]
    if len(plan.nus) >= 2 and all(w > 0 for w in weighted_vals):
        exponent = float(np.polyfit(np.log(plan.nus), np.log(weighted_vals), 1)[0])
    else:
        exponent = math.nan

    # inviscid-form gap battery on the smallest-nu endpoint
    smallest = ensembles[-1]
    traj = smallest.member_trajectory(0)
    battery = make_test_processes(smallest.system, traj.times.size - 1, traj.dt,
                                  seed=plan.base_seed, count=plan.gap_battery)
    gaps = [
        energy_variational_gap(traj, smallest.system, phi, 0.0, traj.times[-1],
                               euler_form=True)
        for phi in battery
    ]

    return {
        "plan": plan,
        "t_final": t_final,
        "points": points,
        "cauchy_differences": cauchy,
        "sup_moment_uniformity": uniformity,
        "weighted_exponent": exponent,
        "grad_phi_norm": grad_phi,
        "euler_gaps_smallest_nu": gaps,
    }


def order_study(
    system: GalerkinSystem,
    initial: np.ndarray,
    scheme: str,
    dt_values: tuple[float, ...],
    n_members: int = 64,
    base_seed: int = 0,
    t_final: float = 0.5,
    ref_levels: int = 2,
) -> dict:
    """Strong order: regression slope of E|a_dt(T) - a_ref(T)| against dt.

    The dt axis must be dyadic (each value half the previous); the reference
    solution runs ref_levels further refinements below the finest axis point
    on the same Brownian paths.
    """
    if len(dt_values) < 3:
        raise ExperimentError("order study needs at least 3 dt values")
    for a, b in zip(dt_values, dt_values[1:]):
        if not math.isclose(b, a / 2.0, rel_tol=1e-12):
            raise ExperimentError("dt axis must halve between consecutive points")
    n0 = int(round(t_final / dt_values[0]))
    if not math.isclose(n0 * dt_values[0], t_final, rel_tol=1e-9):
        raise ExperimentError("t_final must be a multiple of the coarsest dt")

    seeds = member_seeds(base_seed, n_members)
    levels = len(dt_values) + ref_levels
    finals = []
    a0 = np.tile(np.asarray(initial, dtype=np.float64), (n_members, 1))
    for lvl in range(levels):
        if not (lvl < len(dt_values) or lvl == levels - 1):
            continue
        dt_l = dt_values[0] / 2 ** lvl
        n_l = n0 * 2 ** lvl
        inc = np.stack([
            BrownianPath.generate(int(seed), dt_l, n_l, system.n_brownian,
                                  level=lvl).increments
            for seed in seeds
        ])
        out = integrate_batch(system, a0, inc, dt_l, scheme, store_every=max(n_l, 1))
        finals.append(out["states"][-1])
    ref = finals.pop()
    errors = [float(np.linalg.norm(f - ref, axis=1).mean()) for f in finals]
    slope = float(np.polyfit(np.log(dt_values), np.log(errors), 1)[0])
    return {
        "dt_values": list(dt_values),
        "errors": errors,
        "slope": slope,
        "n_members": n_members,
        "scheme": scheme,
    }


def kernel_benchmark(system: GalerkinSystem, reps: int = 1000, seed: int = 0) -> dict:
    """Throughput of the sparse triad contraction B(a, a); no correctness content.

    Reports contractions per second and the bytes the kernel touches per
    contraction (coordinate entries plus the state and output vectors).
    """
    conv = system.conv
    rng = np.random.default_rng(seed)
    a = rng.normal(size=system.n_modes)
    out = conv.apply(a)  # warm the caches; also defines the result for checks
    t0 = time.perf_counter()
    for _ in range(reps):
        out = conv.apply(a)
    elapsed = time.perf_counter() - t0
    bytes_per = conv.nnz * (8 + 3 * 8) + 2 * 8 * system.n_modes
    return {
        "n_modes": system.n_modes,
        "nnz": conv.nnz,
        "reps": reps,
        "seconds": elapsed,
        "contractions_per_second": reps / elapsed if elapsed > 0 else math.inf,
        "bytes_per_contraction": bytes_per,
        "result_norm": float(np.linalg.norm(out)),
    }
