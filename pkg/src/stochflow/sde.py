"""The finite-dimensional Galerkin SDE and its time integrators.

The coefficient vector a(t) in R^N solves, in Ito form,

    da_j = -B(a, a)_j dt - (D a)_j dt + sum_l (eta[j, l] + (zeta_l a)_j) dbeta_l

with B the quadratic convection contraction, D = nu * diag(|k|^2) + corr the
dissipation matrix (corr is the transport Ito correction), eta the additive
noise matrix and zeta_l the skew transport matrices.

Two explicit schemes are provided.  Euler-Maruyama integrates the Ito form
(correction inside the drift); the Heun predictor-corrector integrates the
Stratonovich form directly (drift without the correction, midpoint-averaged
diffusion).  Both converge to the same law as dt -> 0.

Brownian increments are counter-based: a path is a pure function of
(seed, base_dt, level, n_steps, K) through the Philox generator, keyed by
(seed, level).  Refinement halves dt by a midpoint-bridge split, so the
refined path sums pairwise to its parent, which is what coupled strong-order
studies need.  Nothing has to be stored to reproduce a path.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSpec, ConvectionTensor, convection_tensor, dissipation_matrix
from .noise import NoiseSpec, build_noise

SCHEMES = ("euler_maruyama", "heun")


class SdeError(ValueError):
    """Invalid integration setup or state."""


@dataclass(frozen=True)
class GalerkinSystem:
    """Immutable bundle of everything the drift and diffusion need."""

    basis: BasisSpec
    conv: ConvectionTensor
    noise: NoiseSpec
    nu: float
    corr: np.ndarray = None          # (N, N) transport Ito correction
    drift_mat: np.ndarray = None     # (N, N) nu*diag(|k|^2) + corr

    @property
    def n_modes(self) -> int:
        return self.basis.n_modes

    @property
    def n_brownian(self) -> int:
        return self.noise.n_brownian

    def stability_dt(self, a_norm: float) -> float:
        """Explicit-scheme guardrail dt <= c / (nu |k|^2_max + |a| |b|), c = 1/2."""
        rate = self.nu * float(np.max(self.basis.k_sq, initial=0.0))
        rate += a_norm * self.conv.frobenius
        for s in range(self.noise.transport.zeta.shape[0]):
            rate += float(np.linalg.norm(self.noise.transport.zeta[s], 2)) ** 2
        if rate == 0.0:
            return math.inf
        return 0.5 / rate


def build_system(basis: BasisSpec, noise: NoiseSpec | None = None, nu: float = 0.0,
                 conv: ConvectionTensor | None = None) -> GalerkinSystem:
    if nu < 0:
        raise SdeError(f"viscosity must be nonnegative, got {nu}")
    if noise is None:
        noise = build_noise(basis)
    if conv is None:
        conv = convection_tensor(basis)
    corr = noise.transport.correction()
    if corr.shape != (basis.n_modes, basis.n_modes):
        raise SdeError("noise and basis dimensions are inconsistent")
    if noise.additive.eta.shape[0] != basis.n_modes:
        raise SdeError("additive noise indexed inconsistently with basis")
    dmat = dissipation_matrix(basis, nu, corr)
    return GalerkinSystem(basis=basis, conv=conv, noise=noise, nu=nu,
                          corr=corr, drift_mat=dmat)


# -- drift and diffusion -----------------------------------------------------


def convection_part(system: GalerkinSystem, a: np.ndarray) -> np.ndarray:
    """-B(a, a); orthogonal to a, the discrete energy-conserving term."""
    return -system.conv.apply(np.asarray(a, dtype=np.float64))


def drift(system: GalerkinSystem, a: np.ndarray, include_correction: bool = True) -> np.ndarray:
    """Ito drift -B(a,a) - D a; Stratonovich drift when the correction is excluded.

    Supports a leading batch axis on `a`.
    """
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise SdeError("drift evaluated at non-finite state")
    out = -system.conv.apply(a)
    if include_correction:
        out -= a @ system.drift_mat.T
    else:
        out -= system.nu * (system.basis.k_sq * a)
    return out


def diffusion(system: GalerkinSystem, a: np.ndarray) -> np.ndarray:
    """Noise coefficient matrix, column l = eta[:, l] + zeta_l a; shape (..., N, K)."""
    a = np.asarray(a, dtype=np.float64)
    eta = system.noise.additive.eta
    out = np.broadcast_to(eta, a.shape[:-1] + eta.shape).copy()
    tr = system.noise.transport
    if tr.zeta.shape[0]:
        cols = np.einsum("sji,...i->...js", tr.zeta, a)
        out[..., list(tr.modes)] += cols
    return out


def _diffusion_increment(system: GalerkinSystem, a: np.ndarray, dW: np.ndarray) -> np.ndarray:
    """diffusion(a) @ dW without materializing the (..., N, K) matrix."""
    out = dW @ system.noise.additive.eta.T
    tr = system.noise.transport
    if tr.zeta.shape[0]:
        za = np.einsum("sji,...i->...sj", tr.zeta, a)
        out += np.einsum("...sj,...s->...j", za, dW[..., list(tr.modes)])
    return out


def step_euler_maruyama(system: GalerkinSystem, a: np.ndarray, dW: np.ndarray, dt: float) -> np.ndarray:
    """One Ito Euler-Maruyama step; correction matrix lives in the drift."""
    if dt <= 0:
        raise SdeError(f"dt must be positive, got {dt}")
    return a + drift(system, a) * dt + _diffusion_increment(system, a, dW)


def step_heun_stratonovich(system: GalerkinSystem, a: np.ndarray, dW: np.ndarray, dt: float) -> np.ndarray:
    """One Stratonovich Heun step: predictor plus trapezoidal corrector.

    Drift excludes the Ito correction; the midpoint-averaged diffusion
    supplies it in law.  For zero noise this is the deterministic RK2 rule.
    """
    if dt <= 0:
        raise SdeError(f"dt must be positive, got {dt}")
    f0 = drift(system, a, include_correction=False)
    g0 = _diffusion_increment(system, a, dW)
    pred = a + f0 * dt + g0
    f1 = drift(system, pred, include_correction=False)
    g1 = _diffusion_increment(system, pred, dW)
    return a + 0.5 * dt * (f0 + f1) + 0.5 * (g0 + g1)


_STEPPERS = {
    "euler_maruyama": step_euler_maruyama,
    "heun": step_heun_stratonovich,
}


# -- Brownian paths ----------------------------------------------------------


def _philox(seed: int, level: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, level], dtype=np.uint64)))


@dataclass(frozen=True)
class BrownianPath:
    """Counter-based Brownian increments on a uniform grid.

    Reproducible from (seed, base_dt, level, n_steps, K) alone: level 0 draws
    n0 x K normals with variance base_dt from Philox(seed, 0); each further
    level splits every parent increment at the midpoint using an independent
    bridge normal from Philox(seed, level).  `refine()` therefore returns a
    path whose pairwise sums recover the parent increments.
    """

    seed: int
    dt: float
    n_steps: int
    n_brownian: int
    level: int = 0
    increments: np.ndarray = field(default=None, repr=False, compare=False)

    @classmethod
    def generate(cls, seed: int, dt: float, n_steps: int, n_brownian: int,
                 level: int = 0) -> "BrownianPath":
        if dt <= 0 or n_steps < 0:
            raise SdeError("BrownianPath needs dt > 0 and n_steps >= 0")
        base_dt = dt * (2 ** level)
        n_base = n_steps >> level
        if n_base << level != n_steps:
            raise SdeError("n_steps must be divisible by 2**level")
        inc = _philox(seed, 0).normal(0.0, math.sqrt(base_dt), size=(n_base, n_brownian))
        cur_dt = base_dt
        for lvl in range(1, level + 1):
            cur_dt /= 2.0
            bridge = _philox(seed, lvl).normal(
                0.0, math.sqrt(cur_dt / 2.0), size=inc.shape
            )
            half = 0.5 * inc
            out = np.empty((inc.shape[0] * 2, n_brownian))
            out[0::2] = half + bridge
            out[1::2] = half - bridge
            inc = out
        return cls(seed=seed, dt=dt, n_steps=n_steps, n_brownian=n_brownian,
                   level=level, increments=inc)

    @property
    def t_final(self) -> float:
        return self.n_steps * self.dt

    def refine(self) -> "BrownianPath":
        """The same Brownian motion sampled at dt/2."""
        return BrownianPath.generate(
            self.seed, self.dt / 2.0, self.n_steps * 2, self.n_brownian,
            level=self.level + 1,
        )


def batch_increments(seeds: np.ndarray, dt: float, n_steps: int, n_brownian: int) -> np.ndarray:
    """Level-0 increments for many members, shape (M, n_steps, K)."""
    out = np.empty((len(seeds), n_steps, n_brownian))
    scale = math.sqrt(dt)
    for m, seed in enumerate(seeds):
        out[m] = _philox(int(seed), 0).normal(0.0, scale, size=(n_steps, n_brownian))
    return out


# -- trajectories ------------------------------------------------------------


@dataclass
class Trajectory:
    """Saved time series of one integration plus pathwise accumulators.

    `energy` is 1/2 |a|^2 (Parseval), `grad_energy` is sum |k_j|^2 a_j^2.
    `stoch_int` accumulates the left-point Ito sum of <u, sigma1 dW> and
    `grad_int` the left-point sum of |grad u|^2 dt, both at full step
    resolution regardless of thinning.  `increments` holds the Brownian
    increments aggregated to the saved grid.
    """

    times: np.ndarray          # (n_save + 1,)
    states: np.ndarray         # (n_save + 1, N)
    energy: np.ndarray
    grad_energy: np.ndarray
    stoch_int: np.ndarray
    grad_int: np.ndarray
    increments: np.ndarray     # (n_save, K)
    seed: int
    dt: float                  # integration step (not the saved spacing)
    store_every: int
    scheme: str
    nu: float
    blowup_time: float | None = None

    @property
    def n_saved(self) -> int:
        return self.times.size

    def index_of_time(self, t: float) -> int:
        idx = int(np.searchsorted(self.times, t - 1e-12))
        if idx >= self.times.size or abs(self.times[idx] - t) > 1e-9 * max(1.0, abs(t)):
            raise SdeError(f"time {t} is not on the saved grid")
        return idx


def _check_scheme(scheme: str):
    if scheme not in SCHEMES:
        raise SdeError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")


def integrate_batch(
    system: GalerkinSystem,
    a0: np.ndarray,                # (M, N)
    increments: np.ndarray,        # (M, n_steps, K)
    dt: float,
    scheme: str = "euler_maruyama",
    store_every: int = 1,
    track_sup: bool = True,
) -> dict:
    """Vectorized integration over a member batch; the core time loop.

    Returns a dict of arrays: times (n_save+1,), states (n_save+1, M, N),
    energy/grad_energy/stoch_int/grad_int (n_save+1, M), sup_energy (M,),
    blowup_step (M,) with -1 for members that stayed finite, and increments
    aggregated onto the saved grid (n_save, M, K).
    """
    _check_scheme(scheme)
    step = _STEPPERS[scheme]
    a = np.array(a0, dtype=np.float64)
    if a.ndim != 2:
        raise SdeError("integrate_batch expects a (members, modes) state array")
    M, N = a.shape
    n_steps = increments.shape[1]
    if increments.shape[0] != M or increments.shape[2] != system.n_brownian:
        raise SdeError("increment array inconsistent with batch and noise dimensions")
    if n_steps % store_every != 0 and n_steps > 0:
        raise SdeError("store_every must divide n_steps")
    if not np.all(np.isfinite(a)):
        raise SdeError("non-finite initial state")

    guard = system.stability_dt(float(np.max(np.linalg.norm(a, axis=1), initial=0.0)))
    if dt > guard:
        warnings.warn(
            f"dt={dt:g} exceeds the explicit-scheme guardrail {guard:g}; "
            "integration may blow up",
            RuntimeWarning,
            stacklevel=2,
        )

    n_save = n_steps // store_every if n_steps else 0
    ksq = system.basis.k_sq
    eta = system.noise.additive.eta

    times = np.arange(n_save + 1) * (dt * store_every)
    states = np.empty((n_save + 1, M, N))
    energy = np.empty((n_save + 1, M))
    grad_energy = np.empty((n_save + 1, M))
    stoch_series = np.empty((n_save + 1, M))
    grad_series = np.empty((n_save + 1, M))
    inc_saved = np.zeros((n_save, M, system.n_brownian))

    def _energy(x):
        return 0.5 * np.einsum("mj,mj->m", x, x)

    def _grad_energy(x):
        return np.einsum("j,mj->m", ksq, x * x)

    states[0] = a
    energy[0] = _energy(a)
    grad_energy[0] = _grad_energy(a)
    stoch_series[0] = 0.0
    grad_series[0] = 0.0

    stoch_acc = np.zeros(M)
    grad_acc = np.zeros(M)
    sup_energy = energy[0].copy()
    blowup_step = np.full(M, -1, dtype=np.int64)
    alive = np.ones(M, dtype=bool)

    for n in range(n_steps):
        dW = increments[:, n, :]
        # left-point accumulators along the path
        stoch_acc += np.einsum("mj,mj->m", a @ eta, dW)
        grad_acc += _grad_energy(a) * dt
        a_new = step(system, a, dW, dt)
        if not np.all(alive):
            a_new[~alive] = a[~alive]  # dead members stay frozen
        bad = ~np.all(np.isfinite(a_new), axis=1)
        if np.any(bad):
            blowup_step[bad & alive] = n + 1
            alive &= ~bad
            a_new[bad] = a[bad]  # freeze at the last finite state
        a = a_new
        e_now = _energy(a)
        if track_sup:
            np.maximum(sup_energy, e_now, out=sup_energy)
        save_slot, rem = divmod(n + 1, store_every)
        inc_saved[save_slot - 1 if rem == 0 else save_slot] += dW
        if rem == 0:
            states[save_slot] = a
            energy[save_slot] = e_now
            grad_energy[save_slot] = _grad_energy(a)
            stoch_series[save_slot] = stoch_acc
            grad_series[save_slot] = grad_acc

    return {
        "times": times,
        "states": states,
        "energy": energy,
        "grad_energy": grad_energy,
        "stoch_int": stoch_series,
        "grad_int": grad_series,
        "increments": inc_saved,
        "sup_energy": sup_energy,
        "blowup_step": blowup_step,
    }


def integrate(
    system: GalerkinSystem,
    a0: np.ndarray,
    path: BrownianPath,
    scheme: str = "euler_maruyama",
    store_every: int = 1,
) -> Trajectory:
    """Integrate one trajectory along a Brownian path.

    Blow-up is flagged and the trajectory truncated (state frozen at the last
    finite value, `blowup_time` set); it is never clamped silently.
    """
    a0 = np.asarray(a0, dtype=np.float64)
    if a0.shape != (system.n_modes,):
        raise SdeError(f"initial state has shape {a0.shape}, expected ({system.n_modes},)")
    if path.n_brownian != system.n_brownian:
        raise SdeError(
            f"path has {path.n_brownian} brownian modes, system needs {system.n_brownian}"
        )
    inc = path.increments.reshape(1, path.n_steps, path.n_brownian)
    out = integrate_batch(system, a0[None, :], inc, path.dt, scheme, store_every)
    blow = out["blowup_step"][0]
    return Trajectory(
        times=out["times"],
        states=out["states"][:, 0, :],
        energy=out["energy"][:, 0],
        grad_energy=out["grad_energy"][:, 0],
        stoch_int=out["stoch_int"][:, 0],
        grad_int=out["grad_int"][:, 0],
        increments=out["increments"][:, 0, :],
        seed=path.seed,
        dt=path.dt,
        store_every=store_every,
        scheme=scheme,
        nu=system.nu,
        blowup_time=None if blow < 0 else float(blow * path.dt),
    )
