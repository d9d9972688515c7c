"""Energy identities, energy-variational gaps, relative energy, and defect fields.

Every check here evaluates, on discrete trajectory or ensemble data, an
identity or inequality that holds exactly for the continuous-time Galerkin
system: the pathwise energy balance, the family of energy-variational
inequalities indexed by test processes, the relative-energy/Gronwall bound
against a resolved reference, and the positive-semidefinite second-moment
defect of an ensemble together with its trace identity.

Conventions, fixed once for all residuals: time integrals are left-point
Riemann sums on the saved grid, stochastic integrals are left-point (Ito)
sums along the stored increments, and the L-infinity norm of the negative
symmetric part of a gradient field is the spectral norm evaluated as a grid
supremum (reported as the larger of the base quadrature grid and a twice
refined grid).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import BasisSpec, TrigField, default_grid, leray_project, solenoidal_field
from .noise import hs_norm
from .sde import GalerkinSystem, Trajectory


class DiagnosticsError(ValueError):
    """Inconsistent diagnostic inputs."""


# -- gradient fields and the spectral negative-part weight -------------------


def velocity_gradient(basis: BasisSpec, coeffs: np.ndarray, n: int) -> np.ndarray:
    """Gradient tensor of the reconstructed field on the grid.

    Returns shape (..., n^d, d, d) for coefficient input (..., N); entry
    [..., g, m, c] is d(component c)/d(x_m) at grid point g.
    """
    grads = basis.mode_gradients(n)  # (N, d, d, G)
    return np.einsum("...n,nmcg->...gmc", np.asarray(coeffs, dtype=np.float64), grads)


def _min_sym_eig(mats: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of the symmetric part, vectorized over leading axes."""
    sym = 0.5 * (mats + np.swapaxes(mats, -1, -2))
    d = sym.shape[-1]
    if d == 2:
        a = sym[..., 0, 0]
        c = sym[..., 1, 1]
        b = sym[..., 0, 1]
        half_tr = 0.5 * (a + c)
        rad = np.sqrt(0.25 * (a - c) ** 2 + b ** 2)
        return half_tr - rad
    return np.linalg.eigvalsh(sym)[..., 0]


def neg_part_spectral_sup(gradient_samples: np.ndarray) -> float:
    """sup over samples of the spectral norm of the negative symmetric part.

    For each d x d sample this is max(0, -lambda_min(sym part)); the supremum
    runs over all leading axes.
    """
    mats = np.asarray(gradient_samples, dtype=np.float64)
    if mats.ndim < 2 or mats.shape[-1] != mats.shape[-2]:
        raise DiagnosticsError("expected samples of square matrices")
    lam = _min_sym_eig(mats)
    return float(np.maximum(0.0, -lam).max(initial=0.0))


def neg_sup_series(basis: BasisSpec, coeff_series: np.ndarray, n: int | None = None) -> np.ndarray:
    """Per-time grid supremum of |(grad phi)_sym,-| in the spectral norm.

    Evaluated on the base quadrature grid and on a 2x refined grid, taking
    the pointwise-in-time larger value (the grid sup is a lower bound of the
    true supremum; refinement tightens it).
    """
    if n is None:
        n = default_grid(basis.cutoff)
    series = np.asarray(coeff_series, dtype=np.float64)
    sups = []
    for grid_n in (n, 2 * n):
        lam = _min_sym_eig(velocity_gradient(basis, series, grid_n))
        sups.append(np.maximum(0.0, -lam).max(axis=-1))
    return np.maximum(sups[0], sups[1])


# -- energy records and residuals ---------------------------------------------


@dataclass
class EnergyRecord:
    """Per-time ingredients of the energy identity along one trajectory."""

    times: np.ndarray
    energy: np.ndarray        # auxiliary energy variable E(t)
    kinetic: np.ndarray       # 1/2 |u|^2; equals `energy` for Galerkin data
    viscous_int: np.ndarray   # nu * integral_0^t |grad u|^2
    stoch_int: np.ndarray     # integral_0^t <u, sigma1 dW>, left-point sum
    hs_int: np.ndarray        # 1/2 t |sigma1|_HS^2


def energy_record(traj: Trajectory, system: GalerkinSystem) -> EnergyRecord:
    hs2 = hs_norm(system.noise.additive)
    return EnergyRecord(
        times=traj.times,
        energy=traj.energy,
        kinetic=traj.energy,
        viscous_int=system.nu * traj.grad_int,
        stoch_int=traj.stoch_int,
        hs_int=0.5 * hs2 * traj.times,
    )


def energy_residual(
    traj: Trajectory,
    system: GalerkinSystem,
    s: float,
    t: float,
    nu: float | None = None,
) -> float:
    """Residual of the pathwise energy identity over [s, t].

    [E(t) - E(s)] + nu * int_s^t |grad u|^2 - int_s^t <u, sigma1 dW>
                  - 1/2 (t - s) |sigma1|_HS^2

    Zero for the exact SDE; O(sqrt(dt)) pathwise and O(dt) in the mean for
    the discrete schemes.  Both integrals come from the full-resolution
    left-point accumulators stored on the trajectory.
    """
    if t < s:
        raise DiagnosticsError(f"need s <= t, got s={s}, t={t}")
    i = traj.index_of_time(s)
    j = traj.index_of_time(t)
    if nu is None:
        nu = system.nu
    hs2 = hs_norm(system.noise.additive)
    return float(
        (traj.energy[j] - traj.energy[i])
        + nu * (traj.grad_int[j] - traj.grad_int[i])
        - (traj.stoch_int[j] - traj.stoch_int[i])
        - 0.5 * (traj.times[j] - traj.times[i]) * hs2
    )


# -- test processes -----------------------------------------------------------


@dataclass
class TestProcessRep:
    """Finite representation of a test process phi = phi0 + int A dt + int B dW.

    A is piecewise constant on the saved grid ((n_steps, N) or None), B is
    constant per Brownian mode ((K, N) or None).  All coefficient vectors
    live in the solenoidal basis, so phi(t) is divergence-free by
    construction.
    """

    phi0: np.ndarray
    A: np.ndarray | None = None
    B: np.ndarray | None = None
    label: str = "phi"

    __test__ = False  # not a pytest class, despite the name

    def is_zero(self) -> bool:
        return (
            not np.any(self.phi0)
            and (self.A is None or not np.any(self.A))
            and (self.B is None or not np.any(self.B))
        )

    def series(self, increments: np.ndarray, dt: float) -> np.ndarray:
        """phi on the grid implied by the increments, shape (n_steps + 1, N)."""
        n_steps = increments.shape[0]
        phi = np.empty((n_steps + 1, self.phi0.size))
        phi[0] = self.phi0
        cur = self.phi0.copy()
        for m in range(n_steps):
            if self.A is not None:
                cur = cur + self.A[m] * dt
            if self.B is not None:
                cur = cur + increments[m] @ self.B
            phi[m + 1] = cur
        return phi


def make_test_processes(
    system: GalerkinSystem,
    n_steps: int,
    dt: float,
    seed: int = 0,
    count: int = 10,
) -> list[TestProcessRep]:
    """A deterministic battery spanning the three structural cases.

    Static solenoidal fields (A = B = 0), deterministically time-modulated
    fields (B = 0, A from smooth profiles sampled consistently on the grid),
    and martingale-type processes with constant B supported on the additive
    Brownian modes.
    """
    rng = np.random.default_rng(np.random.Philox(key=np.array([seed, 0x7E57], dtype=np.uint64)))
    N = system.n_modes
    K = system.n_brownian
    low = system.basis.k_sq <= max(2.0, float(np.median(system.basis.k_sq)))
    reps: list[TestProcessRep] = []

    def low_mode_vec(scale):
        v = rng.normal(size=N) * low
        nrm = np.linalg.norm(v)
        return scale * v / nrm if nrm > 0 else v

    n_static = count - 2 * (count // 3)
    for idx in range(n_static):
        reps.append(TestProcessRep(phi0=low_mode_vec(0.5), label=f"static-{idx}"))
    tgrid = np.arange(n_steps + 1) * dt
    for idx in range(count // 3):
        psi = low_mode_vec(0.5)
        omega = 1.0 + idx
        profile = np.sin(omega * tgrid) * np.cos(tgrid)
        A = np.diff(profile)[:, None] / dt * psi[None, :]
        reps.append(TestProcessRep(phi0=low_mode_vec(0.3), A=A, label=f"modulated-{idx}"))
    additive_modes = system.noise.additive.support or tuple(range(min(1, K)))
    for idx in range(count // 3):
        B = np.zeros((K, N))
        for ell in additive_modes:
            B[ell] = low_mode_vec(0.3)
        reps.append(TestProcessRep(phi0=low_mode_vec(0.3), B=B if K else None,
                                   label=f"martingale-{idx}"))
    return reps[:count]


# -- the energy-variational gap ------------------------------------------------


def energy_variational_gap(
    traj: Trajectory,
    system: GalerkinSystem,
    phi: TestProcessRep,
    s: float,
    t: float,
    euler_form: bool = False,
    energy_series: np.ndarray | None = None,
) -> float:
    """LHS minus RHS of the energy-variational inequality over [s, t].

    A valid solution gives a nonpositive gap up to discretization error; for
    Galerkin data with E = 1/2 |u|^2 the continuous-time gap is exactly zero
    for test processes in the span of the basis.

    With `euler_form` the viscous coupling is dropped (the inviscid form of
    the inequality, evaluated on a trajectory of any viscosity).  Passing an
    `energy_series` overrides E(t); the weight term with
    2 |(grad phi)_sym,-| * (1/2 |u|^2 - E) is then active.

    For phi == 0 every phi-dependent term is an exact zero and the value
    reduces bitwise to `energy_residual`.
    """
    if phi.B is not None and phi.B.shape != (system.n_brownian, system.n_modes):
        raise DiagnosticsError(
            f"test-process B has shape {phi.B.shape}; system expects "
            f"{(system.n_brownian, system.n_modes)}"
        )
    if phi.phi0.shape != (system.n_modes,):
        raise DiagnosticsError("test-process dimension mismatch with system")
    i = traj.index_of_time(s)
    j = traj.index_of_time(t)
    nu = 0.0 if euler_form else system.nu
    gap = energy_residual(traj, system, s, t, nu=nu)
    if phi.is_zero() and energy_series is None:
        return gap

    dt_s = float(traj.times[1] - traj.times[0]) if traj.times.size > 1 else traj.dt
    inc = traj.increments
    phi_series = phi.series(inc, dt_s)
    a = traj.states
    E = traj.energy if energy_series is None else np.asarray(energy_series)
    ksq = system.basis.k_sq
    eta = system.noise.additive.eta
    tr = system.noise.transport

    sl = slice(i, j)            # left points of the steps inside [s, t)
    a_l = a[sl]
    phi_l = phi_series[sl]
    dW = inc[sl]

    # boundary term of -<u, phi>
    gap += -(a[j] @ phi_series[j]) + (a[i] @ phi_series[i])
    # -nu int grad u : grad phi
    if nu:
        gap += -nu * float(np.einsum("tn,n,tn->", a_l, ksq, phi_l)) * dt_s
    # int [u (x) u] : grad phi  ==  sum b[i,k,j] a_i phi_k a_j
    conv_u_phi = system.conv.apply(a_l, phi_l)
    gap += float(np.einsum("tn,tn->", conv_u_phi, a_l)) * dt_s
    # weight term 2 |(grad phi)_sym,-| (1/2|u|^2 - E)
    slack = 0.5 * np.einsum("tn,tn->t", a_l, a_l) - E[sl]
    if np.any(slack):
        w = neg_sup_series(system.basis, phi_l)
        gap += float(2.0 * np.sum(w * slack)) * dt_s
    # int A . u
    if phi.A is not None:
        gap += float(np.einsum("tn,tn->", phi.A[sl], a_l)) * dt_s
    # int 1/2 [P(sigma2.grad)]^2 phi . u  ==  -a^T corr phi
    gap += -float(np.einsum("tn,nm,tm->", a_l, system.corr, phi_l)) * dt_s
    # minus the phi-dependent stochastic integral:
    #   int (-phi . sigma1 + u^T zeta phi - u . B) dW
    integrand = -(phi_l @ eta)                        # (T, K)
    if tr.zeta.shape[0]:
        uzp = np.einsum("tj,sji,ti->ts", a_l, tr.zeta, phi_l)
        integrand[:, list(tr.modes)] += uzp
    if phi.B is not None:
        integrand -= np.einsum("tn,ln->tl", a_l, phi.B)
    gap -= float(np.einsum("tl,tl->", integrand, dW))
    # plus the trace term int Tr(sigma1 . B - u^T zeta B)
    if phi.B is not None:
        gap += float(np.einsum("nl,ln->", eta, phi.B)) * (j - i) * dt_s
        if tr.zeta.shape[0]:
            uzB = np.einsum("tj,sji,si->ts", a_l, tr.zeta, phi.B[list(tr.modes)])
            gap -= float(np.sum(uzB)) * dt_s
    return gap


def calibrate_gap_tolerance(
    system: GalerkinSystem,
    a0: np.ndarray,
    dt_target: float,
    n_steps_target: int,
    seed: int = 1234,
    levels: int = 2,
    count: int = 10,
    safety: float = 3.0,
    scheme: str = "euler_maruyama",
) -> dict:
    """Measure the gap's discretization error by coupled dt-refinement.

    Integrates the same Brownian path at dt_target * 2^l for l = levels..0,
    evaluates the full test-process battery at each resolution, fits the
    log-log slope, and returns safety * (largest |gap| at dt_target) as the
    tolerance, together with the study data.
    """
    from .sde import BrownianPath, integrate  # local import keeps module load light

    base_dt = dt_target * (2 ** levels)
    n_base = n_steps_target // (2 ** levels)
    if n_base * (2 ** levels) != n_steps_target:
        raise DiagnosticsError("n_steps_target must be divisible by 2**levels")
    path = BrownianPath.generate(seed, base_dt, n_base, system.n_brownian)
    dts, max_gaps = [], []
    for level in range(levels + 1):
        traj = integrate(system, a0, path, scheme=scheme)
        battery = make_test_processes(system, path.n_steps, path.dt, seed=seed, count=count)
        gaps = [
            abs(energy_variational_gap(traj, system, phi, 0.0, traj.times[-1]))
            for phi in battery
        ]
        dts.append(path.dt)
        max_gaps.append(max(gaps))
        if level < levels:
            path = path.refine()
    slope = float(np.polyfit(np.log(dts), np.log(np.maximum(max_gaps, 1e-300)), 1)[0])
    return {
        "dts": dts,
        "max_gaps": max_gaps,
        "slope": slope,
        "safety": safety,
        "tol": safety * max_gaps[-1],
    }


# -- relative energy and the Gronwall bound ------------------------------------


def relative_energy(
    coarse: Trajectory,
    fine: Trajectory,
    coarse_basis: BasisSpec,
    fine_basis: BasisSpec,
    s: float,
    t: float,
    energy_series: np.ndarray | None = None,
) -> dict:
    """Relative energy RE = E - <u, u~> + 1/2 |u~|^2 and its Gronwall envelope.

    `coarse` provides (u, E) and `fine` the reference u~ on the same time
    grid and Brownian path (the comparison is only meaningful under
    coupling).  The envelope is RE(s) * exp(int_s^t 2 |(grad u~)_sym,-|),
    with the rate evaluated as a grid supremum of the fine field.
    """
    if coarse.seed != fine.seed or coarse.times.shape != fine.times.shape or \
            not np.allclose(coarse.times, fine.times):
        raise DiagnosticsError("relative energy requires a shared grid and Brownian path")
    i = coarse.index_of_time(s)
    j = coarse.index_of_time(t)
    emb = coarse_basis.embedding_into(fine_basis)
    sl = slice(i, j + 1)
    a_c = coarse.states[sl]
    a_f = fine.states[sl]
    E = (coarse.energy if energy_series is None else np.asarray(energy_series))[sl]
    cross = np.einsum("tn,tn->t", a_c, a_f[:, emb])
    re = E - cross + 0.5 * np.einsum("tn,tn->t", a_f, a_f)

    rate = 2.0 * neg_sup_series(fine_basis, a_f)
    dt_s = float(coarse.times[1] - coarse.times[0]) if coarse.times.size > 1 else coarse.dt
    # left-point integral of the rate, then the Gronwall envelope
    cum = np.concatenate([[0.0], np.cumsum(rate[:-1]) * dt_s])
    bound = re[0] * np.exp(cum)
    return {
        "times": coarse.times[sl],
        "re": re,
        "rate": rate,
        "bound": bound,
    }


# -- ensemble defect fields -----------------------------------------------------


@dataclass
class DefectField:
    """Second-moment defect of an ensemble at one time on a spatial grid."""

    grid_n: int
    r_hat: np.ndarray          # (G, d, d) sample second-moment defect
    mean_field: np.ndarray     # (G, d)
    e_hat: float               # ensemble-mean energy 1/2 |u|^2
    mean_kinetic: float        # 1/2 |u-bar|^2
    trace_integral: float      # 1/2 int tr r_hat dx (grid quadrature)

    def min_eigenvalue(self) -> float:
        return float(_min_sym_eig(self.r_hat).min())


def reynolds_defect(states: np.ndarray, basis: BasisSpec, grid_n: int | None = None) -> DefectField:
    """R(x) = mean[u (x) u] - u-bar (x) u-bar over ensemble member states.

    `states` is the (members, modes) coefficient array at one time.  The
    result is symmetric PSD up to round-off, and its half-trace integral
    equals the energy defect E-hat - 1/2 |u-bar|^2 as an algebraic identity
    of sample moments (exact quadrature).
    """
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2:
        raise DiagnosticsError("expected a (members, modes) state array")
    M = states.shape[0]
    if M < 2:
        raise DiagnosticsError("defect fields need at least two ensemble members")
    if grid_n is None:
        grid_n = default_grid(basis.cutoff)
    vals = basis.mode_values(grid_n)                      # (N, d, G)
    fields = np.einsum("mn,ndg->mgd", states, vals)       # (M, G, d)
    mean_field = fields.mean(axis=0)
    second = np.einsum("mgd,mge->gde", fields, fields) / M
    r_hat = second - np.einsum("gd,ge->gde", mean_field, mean_field)
    w = basis.quad_weight(grid_n)
    trace_integral = 0.5 * w * float(np.einsum("gdd->", r_hat))
    e_hat = 0.5 * float(np.einsum("mn,mn->", states, states)) / M
    a_bar = states.mean(axis=0)
    mean_kinetic = 0.5 * float(a_bar @ a_bar)
    return DefectField(
        grid_n=grid_n,
        r_hat=r_hat,
        mean_field=mean_field,
        e_hat=e_hat,
        mean_kinetic=mean_kinetic,
        trace_integral=trace_integral,
    )


def dissipative_weak_residual(ensemble, phi, t: float) -> dict:
    """Ensemble-mean residual of the weak formulation against a static field.

    `phi` is a solenoidal test field given either as basis coefficients or a
    TrigField (which must be mean-free and solenoidal).  The quadratic term
    is evaluated member-wise, which is algebraically identical to the
    mean-field weak form with the second-moment defect substituted; the
    martingale term is averaged out, so the mean residual decays like
    M^(-1/2) with standard error reported alongside.  For viscous systems the
    weak form includes the viscous coupling.
    """
    system = ensemble.system
    basis = system.basis
    if isinstance(phi, TrigField):
        if np.any(phi.mean):
            raise DiagnosticsError(
                "constant components are excluded by the mean-free convention"
            )
        coeffs = leray_project(basis, phi)
        back = solenoidal_field(basis, coeffs)
        if not np.allclose(back.coeffs, phi.coeffs, atol=1e-12):
            raise DiagnosticsError("test field must be solenoidal")
        phi = coeffs
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (basis.n_modes,):
        raise DiagnosticsError(f"test field has shape {phi.shape}, expected ({basis.n_modes},)")
    ksq_phi = system.basis.k_sq * phi
    corr_phi = system.corr @ phi
    dt_s = ensemble.saved_dt
    j = int(round(t / dt_s))
    if abs(j * dt_s - t) > 1e-9 * max(1.0, t) or j >= ensemble.n_saved:
        raise DiagnosticsError(f"time {t} is not on the ensemble grid")
    residuals = np.empty(ensemble.n_members)
    for sl, batch in ensemble.chunked_states():
        a = batch[: j + 1]                                  # (j+1, M, N)
        conv = system.conv.apply(a[:-1], np.broadcast_to(phi, a[:-1].shape))
        quad = np.einsum("tmn,tmn->m", conv, a[:-1])
        quad -= np.einsum("tmn,n->m", a[:-1], system.nu * ksq_phi + corr_phi)
        residuals[sl] = -(a[j] - a[0]) @ phi + quad * dt_s
    mean = float(residuals.mean())
    se = float(residuals.std(ddof=1) / np.sqrt(ensemble.n_members)) if ensemble.n_members > 1 else 0.0
    return {"residual": mean, "stderr": se, "n_members": ensemble.n_members, "t": t}
