"""Independent oracles for the test suite.

Everything here is computed from first principles (direct quadrature, dense
linear algebra, closed-form solutions), sharing no code with the assembly or
integration paths it is used to check.  Mode evaluation is reimplemented from
the basis metadata alone.
"""

import numpy as np

TWO_PI = 2.0 * np.pi


def torus_grid(dim, n):
    axes = [np.arange(n) * (TWO_PI / n)] * dim
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def eval_mode(basis, idx, x):
    """Mode value (G, d) and gradient (G, d_axis, d_comp) from metadata only."""
    k = basis.mode_k(idx).astype(float)
    p = basis.mode_c(idx) / np.linalg.norm(basis.mode_c(idx))
    c = np.sqrt(2.0 / TWO_PI ** basis.dim)
    theta = x @ k
    if basis.mode_phase[idx] == 0:
        trig, dtrig = np.cos(theta), -np.sin(theta)
    else:
        trig, dtrig = np.sin(theta), np.cos(theta)
    val = c * p[None, :] * trig[:, None]
    grad = c * k[None, :, None] * p[None, None, :] * dtrig[:, None, None]
    return val, grad


def quad_weight(dim, n):
    return (TWO_PI / n) ** dim


def advection_integral(basis, i, k, j, factor=4):
    """integral (v_i . grad) v_k . v_j by brute-force rectangle quadrature."""
    n = factor * basis.cutoff + 1
    x = torus_grid(basis.dim, n)
    vi, _ = eval_mode(basis, i, x)
    _, gk = eval_mode(basis, k, x)
    vj, _ = eval_mode(basis, j, x)
    advect = np.einsum("gm,gmc->gc", vi, gk)
    return quad_weight(basis.dim, n) * float(np.einsum("gc,gc->", advect, vj))


def dense_convection(basis, factor=4):
    """The full dense rank-3 tensor by quadrature, feasible for cutoff <= 3."""
    n = factor * basis.cutoff + 1
    x = torus_grid(basis.dim, n)
    N = basis.n_modes
    vals = np.empty((N, x.shape[0], basis.dim))
    grads = np.empty((N, x.shape[0], basis.dim, basis.dim))
    for idx in range(N):
        vals[idx], grads[idx] = eval_mode(basis, idx, x)
    # advect[i, k, g, c] = v_i(g) . grad_k(g, :, c)
    advect = np.einsum("igm,kgmc->ikgc", vals, grads, optimize=True)
    w = quad_weight(basis.dim, n)
    return w * np.einsum("ikgc,jgc->ikj", advect, vals, optimize=True)


def gram_matrix(basis, n=None):
    from stochflow.basis import default_grid

    if n is None:
        n = default_grid(basis.cutoff)
    x = torus_grid(basis.dim, n)
    N = basis.n_modes
    vals = np.stack([eval_mode(basis, i, x)[0] for i in range(N)])
    return quad_weight(basis.dim, n) * np.einsum("igd,jgd->ij", vals, vals)


def eigenmode_energy(nu, ksq, t, a0=1.0):
    """Exact squared L2 norm of a single decaying Stokes eigenmode."""
    return a0 ** 2 * np.exp(-2.0 * nu * ksq * t)


def rk2_step(f, y, dt):
    """Deterministic Heun / RK2 reference step."""
    k1 = f(y)
    k2 = f(y + dt * k1)
    return y + 0.5 * dt * (k1 + k2)


def dense_diffusion(eta, zeta_list, zeta_modes, a):
    """Diffusion matrix via explicit dense loops."""
    N, K = eta.shape
    out = np.array(eta, dtype=float, copy=True)
    for s, ell in enumerate(zeta_modes):
        for jj in range(N):
            out[jj, ell] += float(zeta_list[s][jj] @ a)
    return out
