import numpy as np
import pytest

from stochflow.noise import build_noise
from stochflow.sde import (
    BrownianPath,
    SdeError,
    build_system,
    diffusion,
    drift,
    integrate,
    step_euler_maruyama,
    step_heun_stratonovich,
)

import oracles


# -- drift ---------------------------------------------------------------------


def test_drift_zero_state(viscous_system):
    out = drift(viscous_system, np.zeros(viscous_system.n_modes))
    assert np.abs(out).max() == 0.0


def test_drift_single_viscous_mode(viscous_system):
    b = viscous_system.basis
    m = b.index_of("1,0:cos")
    a = np.zeros(b.n_modes)
    a[m] = 1.0
    out = drift(viscous_system, a)
    expected = np.zeros(b.n_modes)
    expected[m] = -0.1  # nu |k|^2 = 0.1 * 1; self-convection vanishes
    assert np.abs(out - expected).max() <= 1e-15


def test_convection_orthogonal_to_state(viscous_system, rng):
    from stochflow.sde import convection_part

    for _ in range(100):
        a = rng.normal(size=viscous_system.n_modes)
        assert abs(a @ convection_part(viscous_system, a)) <= 1e-12 * np.linalg.norm(a) ** 3


def test_drift_rejects_nonfinite(viscous_system):
    bad = np.full(viscous_system.n_modes, np.nan)
    with pytest.raises(SdeError):
        drift(viscous_system, bad)


# -- diffusion ------------------------------------------------------------------


def test_diffusion_at_zero_state(additive_system):
    out = diffusion(additive_system, np.zeros(additive_system.n_modes))
    assert np.array_equal(out, additive_system.noise.additive.eta)


def test_transport_diffusion_energy_orthogonal(transport_system, rng):
    for _ in range(50):
        a = rng.normal(size=transport_system.n_modes)
        cols = diffusion(transport_system, a)
        assert np.abs(a @ cols).max() <= 1e-13 * np.linalg.norm(a) ** 2


def test_diffusion_matches_dense_oracle(transport_system, rng):
    a = rng.normal(size=transport_system.n_modes)
    tr = transport_system.noise.transport
    dense = oracles.dense_diffusion(transport_system.noise.additive.eta,
                                    tr.zeta, tr.modes, a)
    assert np.abs(diffusion(transport_system, a) - dense).max() <= 1e-13


# -- single steps ----------------------------------------------------------------


def test_em_zero_everything(additive_system):
    a = np.zeros(additive_system.n_modes)
    out = step_euler_maruyama(additive_system, a,
                              np.zeros(additive_system.n_brownian), 1e-2)
    assert np.abs(out).max() == 0.0


def test_em_viscous_decay_oracle(viscous_system):
    b = viscous_system.basis
    a = np.zeros(b.n_modes)
    a[b.index_of("1,0:cos")] = 1.0
    dt = 1e-3
    for _ in range(1000):
        a = step_euler_maruyama(viscous_system, a, np.zeros(0), dt)
    exact = oracles.eigenmode_energy(0.1, 1.0, 1.0)
    assert abs(float(a @ a) - exact) <= 1e-3


def test_em_refinement_strong_order_half(transport_system, rng):
    a0 = rng.normal(size=transport_system.n_modes) * 0.2
    errs = []
    for m in range(8):
        p1 = BrownianPath.generate(100 + m, 1e-2, 50, transport_system.n_brownian)
        p2 = p1.refine()
        t1 = integrate(transport_system, a0, p1)
        t2 = integrate(transport_system, a0, p2, store_every=2)
        errs.append(np.linalg.norm(t1.states[-1] - t2.states[-1]))
    # coupled half-step difference scales like sqrt(dt): nonzero but small
    assert 0 < np.mean(errs) < 0.3 * np.linalg.norm(a0)


def test_heun_deterministic_matches_rk2(viscous_system, rng):
    a = rng.normal(size=viscous_system.n_modes) * 0.5
    dt = 1e-2

    def f(y):
        return drift(viscous_system, y)

    ref = oracles.rk2_step(f, a, dt)
    out = step_heun_stratonovich(viscous_system, a, np.zeros(0), dt)
    assert np.abs(out - ref).max() <= 1e-14


def test_heun_transport_energy_conservation(transport_system, rng):
    a0 = rng.normal(size=transport_system.n_modes)
    a0 *= 0.5 / np.linalg.norm(a0)
    path = BrownianPath.generate(17, 1e-3, 1000, 1)
    traj = integrate(transport_system, a0, path, scheme="heun")
    drift_rel = abs(traj.energy[-1] - traj.energy[0]) / traj.energy[0]
    assert drift_rel <= 1e-4


def test_heun_equals_em_for_state_independent_coefficients(basis2_1, rng):
    # no drift (nu = 0, single mode has no self-triad) and additive-only noise
    eta_vec = np.zeros(basis2_1.n_modes)
    eta_vec[2] = 0.4
    system = build_system(basis2_1, build_noise(basis2_1, [(0, eta_vec)]), nu=0.0)
    a = np.zeros(basis2_1.n_modes)
    a[basis2_1.index_of("1,0:cos")] = 0.7
    assert np.abs(drift(system, a)).max() == 0.0
    dW = rng.normal(size=1) * np.sqrt(1e-2)
    em = step_euler_maruyama(system, a, dW, 1e-2)
    heun = step_heun_stratonovich(system, a, dW, 1e-2)
    assert np.array_equal(em, heun)


# -- brownian paths --------------------------------------------------------------


def test_path_reproducible():
    p1 = BrownianPath.generate(9, 1e-2, 128, 3)
    p2 = BrownianPath.generate(9, 1e-2, 128, 3)
    assert np.array_equal(p1.increments, p2.increments)
    p3 = BrownianPath.generate(10, 1e-2, 128, 3)
    assert not np.array_equal(p1.increments, p3.increments)


def test_path_refinement_consistency():
    p = BrownianPath.generate(3, 0.02, 64, 2)
    fine = p.refine()
    assert fine.dt == 0.01 and fine.n_steps == 128
    recon = fine.increments[0::2] + fine.increments[1::2]
    assert np.abs(recon - p.increments).max() <= 1e-12
    finer = fine.refine()
    recon2 = finer.increments[0::2] + finer.increments[1::2]
    assert np.abs(recon2 - fine.increments).max() <= 1e-12
    # a refined path is reproducible from scalars alone
    direct = BrownianPath.generate(3, 0.01, 128, 2, level=1)
    assert np.array_equal(direct.increments, fine.increments)


def test_path_increment_statistics():
    p = BrownianPath.generate(4, 0.25, 4000, 2)
    sigma = p.increments.std()
    assert abs(sigma - 0.5) < 0.02


# -- integrate -------------------------------------------------------------------


def test_integrate_zero_horizon(viscous_system, rng):
    a0 = rng.normal(size=viscous_system.n_modes)
    path = BrownianPath.generate(1, 1e-3, 0, 0)
    traj = integrate(viscous_system, a0, path)
    assert traj.times.shape == (1,)
    assert np.array_equal(traj.states[0], a0)


def test_integrate_monotone_viscous_energy(viscous_system, rng):
    a0 = rng.normal(size=viscous_system.n_modes) * 0.3
    path = BrownianPath.generate(2, 1e-3, 500, 0)
    traj = integrate(viscous_system, a0, path)
    assert np.all(np.diff(traj.energy) <= 0)


def test_integrate_deterministic_bitwise(additive_system, rng):
    a0 = rng.normal(size=additive_system.n_modes) * 0.3
    path = BrownianPath.generate(5, 1e-3, 300, additive_system.n_brownian)
    t1 = integrate(additive_system, a0, path)
    t2 = integrate(additive_system, a0, path)
    assert np.array_equal(t1.states, t2.states)
    assert np.array_equal(t1.stoch_int, t2.stoch_int)


def test_integrate_flags_blowup(basis2_2, conv2_2):
    system = build_system(basis2_2, build_noise(basis2_2), nu=50.0, conv=conv2_2)
    a0 = np.ones(basis2_2.n_modes)
    path = BrownianPath.generate(1, 0.5, 400, 0)
    with pytest.warns(RuntimeWarning):
        traj = integrate(system, a0, path)
    assert traj.blowup_time is not None
    assert np.all(np.isfinite(traj.states))  # frozen at the last finite state


def test_energy_series_is_parseval(additive_system, rng):
    a0 = rng.normal(size=additive_system.n_modes) * 0.4
    path = BrownianPath.generate(8, 1e-3, 100, additive_system.n_brownian)
    traj = integrate(additive_system, a0, path)
    recomputed = 0.5 * np.einsum("tn,tn->t", traj.states, traj.states)
    assert np.abs(traj.energy - recomputed).max() <= 1e-15 * max(1.0, traj.energy.max())
    gradE = np.einsum("n,tn->t", additive_system.basis.k_sq, traj.states ** 2)
    assert np.abs(traj.grad_energy - gradE).max() <= 1e-13


def test_store_every_thins_grid(additive_system, rng):
    a0 = rng.normal(size=additive_system.n_modes) * 0.4
    path = BrownianPath.generate(8, 1e-3, 100, additive_system.n_brownian)
    full = integrate(additive_system, a0, path)
    thin = integrate(additive_system, a0, path, store_every=10)
    assert thin.times.shape == (11,)
    assert np.array_equal(thin.states[1], full.states[10])
    # pathwise accumulators keep full resolution
    assert thin.stoch_int[-1] == full.stoch_int[-1]
    assert np.abs(thin.increments[0] - full.increments[:10].sum(axis=0)).max() <= 1e-15
