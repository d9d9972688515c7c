"""Solenoidal spectral basis on the periodic torus and the Galerkin structure tensors.

The domain is the torus [0, 2pi)^d with d in {2, 3}.  Velocity fields are
expanded in real divergence-free trigonometric modes

    v(x) = c * p * cos(k.x)   or   c * p * sin(k.x),

where k is a nonzero integer wavevector, p is a unit polarization vector with
p.k = 0 (one choice in 2-D, two in 3-D), and c = sqrt(2) / (2pi)^(d/2) makes
each mode have unit L2 norm.  On the torus these modes diagonalize the Stokes
operator with eigenvalue |k|^2, and the Helmholtz/Leray projection acts
algebraically per wavevector as I - k k^T / |k|^2.

Wavevectors come in +/- pairs that generate the same two-dimensional span of
cos/sin modes, so only a canonical representative (first nonzero component
positive) is enumerated.  The zero mode is excluded throughout: all fields are
mean-free.

The nonlinear structure tensor

    b[i, k, j] = integral over the torus of (v_i . grad) v_k . v_j

is assembled in closed form from the triad condition (the integral of a triple
product of trigonometric modes vanishes unless the three wavevectors admit a
signed sum equal to zero) and stored in coordinate format sorted by the output
index j.  Skew-symmetry in the last two slots, the discrete engine of energy
conservation of the convection term, is enforced exactly by antisymmetrizing
the assembled values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

TWO_PI = 2.0 * np.pi

COS = 0
SIN = 1

_PHASE_NAMES = ("cos", "sin")


class BasisError(ValueError):
    """Invalid basis construction or mismatched basis data."""


def _is_canonical(k: np.ndarray) -> bool:
    # canonical representative of the pair {k, -k}: first nonzero entry > 0
    for comp in k:
        if comp != 0:
            return comp > 0
    return False


def canonicalize(k: np.ndarray) -> tuple[np.ndarray, int]:
    """Return (canonical wavevector, sign) with sign * canonical == k."""
    k = np.asarray(k, dtype=np.int64)
    if _is_canonical(k):
        return k, 1
    return -k, -1


def enumerate_wavevectors(dim: int, cutoff: int) -> np.ndarray:
    """Canonical nonzero wavevectors with |k|_inf <= cutoff, deterministically ordered.

    Ordering is by (|k|^2, lexicographic tuple), which is stable across runs
    and versions of this module (ordering version 1).
    """
    if dim not in (2, 3):
        raise BasisError(f"spatial dimension must be 2 or 3, got {dim}")
    if cutoff < 1:
        raise BasisError(f"cutoff must be >= 1, got {cutoff}")
    rng = range(-cutoff, cutoff + 1)
    vecs = []
    if dim == 2:
        candidates = ((a, b) for a in rng for b in rng)
    else:
        candidates = ((a, b, c) for a in rng for b in rng for c in rng)
    for k in candidates:
        arr = np.array(k, dtype=np.int64)
        if _is_canonical(arr):
            vecs.append(arr)
    vecs.sort(key=lambda k: (int(np.dot(k, k)), tuple(int(c) for c in k)))
    return np.array(vecs, dtype=np.int64)


def _polarizations_int(k: np.ndarray) -> np.ndarray:
    """Integer polarization vectors orthogonal to k, shape (npol, d).

    Integer-valued so that orthogonality relations (p.k = 0, and p.p' between
    parallel-wavevector polarizations) are exact in integer arithmetic; unit
    polarizations are these divided by their Euclidean norms.
    """
    k = np.asarray(k, dtype=np.int64)
    d = k.size
    if d == 2:
        return np.array([[-k[1], k[0]]], dtype=np.int64)
    # d == 3: c1 = k x h, c2 = k x c1 with integer helper h; both integer,
    # mutually orthogonal and orthogonal to k exactly
    helper = np.array([0, 0, 1], dtype=np.int64)
    if k[0] == 0 and k[1] == 0:
        helper = np.array([1, 0, 0], dtype=np.int64)
    c1 = np.cross(k, helper)
    c2 = np.cross(k, c1)
    return np.stack([c1, c2]).astype(np.int64)


@dataclass(frozen=True)
class BasisSpec:
    """Orthonormal divergence-free trigonometric basis within an |k|_inf cutoff.

    Modes are ordered wavevector-major: for each canonical wavevector (in
    `wavevectors` order), for each polarization, a cos mode then a sin mode.
    """

    dim: int
    cutoff: int
    wavevectors: np.ndarray        # (W, d) int64, canonical, ordered
    pol_int: np.ndarray            # (W, npol, d) int64, unnormalized
    mode_wave: np.ndarray          # (N,) index into wavevectors
    mode_pol: np.ndarray           # (N,) polarization index
    mode_phase: np.ndarray         # (N,) COS or SIN
    ordering_version: int = 1
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def n_modes(self) -> int:
        return self.mode_wave.size

    @property
    def n_wavevectors(self) -> int:
        return self.wavevectors.shape[0]

    @property
    def volume(self) -> float:
        return TWO_PI ** self.dim

    @property
    def norm_const(self) -> float:
        return np.sqrt(2.0 / self.volume)

    @property
    def pol_norm(self) -> np.ndarray:
        """(W, npol) Euclidean norms of the integer polarizations."""
        key = "pol_norm"
        if key not in self._cache:
            self._cache[key] = np.sqrt(
                np.einsum("wpd,wpd->wp", self.pol_int, self.pol_int).astype(np.float64)
            )
        return self._cache[key]

    @property
    def polarizations(self) -> np.ndarray:
        """(W, npol, d) unit polarization vectors."""
        key = "pol_unit"
        if key not in self._cache:
            self._cache[key] = self.pol_int / self.pol_norm[:, :, None]
        return self._cache[key]

    @property
    def k_sq(self) -> np.ndarray:
        """Stokes eigenvalue |k|^2 per mode."""
        ksq = np.einsum("wd,wd->w", self.wavevectors, self.wavevectors)
        return ksq[self.mode_wave].astype(np.float64)

    def mode_k(self, i: int) -> np.ndarray:
        return self.wavevectors[self.mode_wave[i]]

    def mode_p(self, i: int) -> np.ndarray:
        return self.polarizations[self.mode_wave[i], self.mode_pol[i]]

    def mode_c(self, i: int) -> np.ndarray:
        """Unnormalized integer polarization of mode i."""
        return self.pol_int[self.mode_wave[i], self.mode_pol[i]]

    def mode_cnorm(self, i: int) -> float:
        return float(self.pol_norm[self.mode_wave[i], self.mode_pol[i]])

    def mode_label(self, i: int) -> str:
        k = ",".join(str(int(c)) for c in self.mode_k(i))
        phase = _PHASE_NAMES[self.mode_phase[i]]
        if self.dim == 3:
            return f"{k}:p{self.mode_pol[i]}:{phase}"
        return f"{k}:{phase}"

    def index_of(self, label: str) -> int:
        """Inverse of mode_label; raises BasisError for unknown labels."""
        table = self._cache.get("labels")
        if table is None:
            table = {self.mode_label(i): i for i in range(self.n_modes)}
            self._cache["labels"] = table
        try:
            return table[label]
        except KeyError:
            raise BasisError(f"unknown mode label {label!r}") from None

    def wave_index(self, k: np.ndarray) -> int:
        table = self._cache.get("waves")
        if table is None:
            table = {tuple(int(c) for c in kk): w for w, kk in enumerate(self.wavevectors)}
            self._cache["waves"] = table
        return table.get(tuple(int(c) for c in k), -1)

    # -- grid evaluation ---------------------------------------------------

    def grid(self, n: int) -> np.ndarray:
        """Uniform tensor grid with n points per axis, shape (n^d, d), C order."""
        axes = [np.arange(n) * (TWO_PI / n)] * self.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def quad_weight(self, n: int) -> float:
        return (TWO_PI / n) ** self.dim

    def mode_values(self, n: int) -> np.ndarray:
        """All modes sampled on the n-per-axis grid, shape (N, d, n^d)."""
        key = ("vals", n)
        if key not in self._cache:
            x = self.grid(n)                                     # (G, d)
            kdotx = x @ self.wavevectors[self.mode_wave].T.astype(np.float64)  # (G, N)
            trig = np.where(self.mode_phase[None, :] == COS, np.cos(kdotx), np.sin(kdotx))
            pvec = self.polarizations[self.mode_wave, self.mode_pol]  # (N, d)
            vals = self.norm_const * pvec[:, :, None] * trig.T[:, None, :]
            self._cache[key] = vals
        return self._cache[key]

    def mode_gradients(self, n: int) -> np.ndarray:
        """Gradients of all modes on the grid, shape (N, d, d, n^d).

        Entry [i, m, c, g] is the derivative along axis m of component c of
        mode i at grid point g.
        """
        key = ("grads", n)
        if key not in self._cache:
            x = self.grid(n)
            kvec = self.wavevectors[self.mode_wave].astype(np.float64)  # (N, d)
            kdotx = x @ kvec.T                                          # (G, N)
            # d/dtheta cos = -sin, d/dtheta sin = cos
            dtrig = np.where(self.mode_phase[None, :] == COS, -np.sin(kdotx), np.cos(kdotx))
            pvec = self.polarizations[self.mode_wave, self.mode_pol]
            grads = (self.norm_const
                     * kvec[:, :, None, None]
                     * pvec[:, None, :, None]
                     * dtrig.T[:, None, None, :])
            self._cache[key] = grads
        return self._cache[key]

    def embedding_into(self, finer: "BasisSpec") -> np.ndarray:
        """Index map such that mode i of self equals mode emb[i] of `finer`."""
        if finer.dim != self.dim or finer.cutoff < self.cutoff:
            raise BasisError("embedding requires same dimension and a finer cutoff")
        emb = np.empty(self.n_modes, dtype=np.int64)
        for i in range(self.n_modes):
            emb[i] = finer.index_of(self.mode_label(i))
        return emb


def build_basis(dim: int, cutoff: int) -> BasisSpec:
    """Construct the orthonormal solenoidal basis for |k|_inf <= cutoff."""
    waves = enumerate_wavevectors(dim, cutoff)
    pols = np.stack([_polarizations_int(k) for k in waves])
    npol = pols.shape[1]
    mode_wave, mode_pol, mode_phase = [], [], []
    for w in range(waves.shape[0]):
        for p in range(npol):
            for phase in (COS, SIN):
                mode_wave.append(w)
                mode_pol.append(p)
                mode_phase.append(phase)
    return BasisSpec(
        dim=dim,
        cutoff=cutoff,
        wavevectors=waves,
        pol_int=pols,
        mode_wave=np.array(mode_wave, dtype=np.int64),
        mode_pol=np.array(mode_pol, dtype=np.int64),
        mode_phase=np.array(mode_phase, dtype=np.int64),
    )


def default_grid(cutoff: int) -> int:
    """Smallest grid that integrates products of two modes exactly."""
    return 2 * cutoff + 2


# -- fields in trigonometric coordinates ------------------------------------


@dataclass
class TrigField:
    """A general (not necessarily solenoidal) vector field in trig coordinates.

    field(x) = mean + sum over (wavevector w, phase) of
               norm_const * coeffs[w, phase, :] * trig_phase(k_w . x)

    indexed by the same canonical wavevector table as a BasisSpec.
    """

    coeffs: np.ndarray   # (W, 2, d)
    mean: np.ndarray     # (d,)

    @classmethod
    def zeros(cls, basis: BasisSpec) -> "TrigField":
        return cls(
            coeffs=np.zeros((basis.n_wavevectors, 2, basis.dim)),
            mean=np.zeros(basis.dim),
        )


def leray_project(basis: BasisSpec, field_: TrigField) -> np.ndarray:
    """L2-orthogonal projection onto the divergence-free mean-free span.

    Acts per wavevector as I - k k^T/|k|^2; the mean (zero mode) maps to zero.
    Returns the coefficient vector in basis ordering.  Idempotent:
    projecting the solenoidal reconstruction of the output reproduces it.
    """
    coeffs = np.asarray(field_.coeffs, dtype=np.float64)
    if coeffs.shape != (basis.n_wavevectors, 2, basis.dim):
        raise BasisError(
            f"field indexed by {coeffs.shape}, basis expects "
            f"{(basis.n_wavevectors, 2, basis.dim)}"
        )
    # a_mode = p . w for the mode's (wavevector, phase) slot
    pvec = basis.polarizations[basis.mode_wave, basis.mode_pol]       # (N, d)
    slots = coeffs[basis.mode_wave, basis.mode_phase]                 # (N, d)
    return np.einsum("nd,nd->n", pvec, slots)


def solenoidal_field(basis: BasisSpec, a: np.ndarray) -> TrigField:
    """Embed a basis coefficient vector as a TrigField (inverse of leray on range)."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (basis.n_modes,):
        raise BasisError(f"coefficient vector has shape {a.shape}, expected ({basis.n_modes},)")
    out = TrigField.zeros(basis)
    pvec = basis.polarizations[basis.mode_wave, basis.mode_pol]
    np.add.at(out.coeffs, (basis.mode_wave, basis.mode_phase), a[:, None] * pvec)
    return out


def gradient_field(basis: BasisSpec, potential: dict[tuple, float]) -> TrigField:
    """TrigField of grad g for a scalar trig polynomial g (for testing projections).

    `potential` maps (wavevector tuple, phase) to a coefficient of
    norm_const * trig(k.x); wavevectors are canonicalized first
    (cos(-k.x) = cos(k.x), sin(-k.x) = -sin(k.x)).
    """
    out = TrigField.zeros(basis)
    for (ktup, phase), g in potential.items():
        k, sign = canonicalize(np.array(ktup, dtype=np.int64))
        w = basis.wave_index(k)
        if w < 0:
            raise BasisError(f"wavevector {ktup} outside basis cutoff")
        kf = k.astype(np.float64)
        if phase == COS:
            # grad g cos(k.x) = -g k sin(k.x)
            out.coeffs[w, SIN] += -g * kf
        else:
            # g sin(s k.x) = s g sin(k.x); grad -> s g k cos(k.x)
            out.coeffs[w, COS] += sign * g * kf
    return out


def project_field(basis: BasisSpec, samples: np.ndarray, n: int) -> np.ndarray:
    """L2 projection of grid samples onto the basis, a_i = <field, v_i>.

    `samples` has shape (n^d, d) in the C-order layout of BasisSpec.grid(n).
    The grid must resolve products of the field and any mode exactly, which
    for fields within the cutoff requires n >= 2*cutoff + 2.
    """
    if n < default_grid(basis.cutoff):
        raise BasisError(
            f"grid with {n} points per axis under-resolved; "
            f"need at least {default_grid(basis.cutoff)}"
        )
    samples = np.asarray(samples, dtype=np.float64)
    expected = (n ** basis.dim, basis.dim)
    if samples.shape != expected:
        raise BasisError(f"samples have shape {samples.shape}, expected {expected}")
    vals = basis.mode_values(n)            # (N, d, G)
    return basis.quad_weight(n) * np.einsum("ndg,gd->n", vals, samples)


def evaluate_field(basis: BasisSpec, a: np.ndarray, n: int) -> np.ndarray:
    """Reconstruct the velocity field on the grid, shape (n^d, d)."""
    vals = basis.mode_values(n)
    return np.einsum("n,ndg->gd", np.asarray(a, dtype=np.float64), vals)


# -- closed-form trigonometric integrals -------------------------------------


def _exp_coeffs(phase: int) -> dict[int, complex]:
    # cos t = (e^{it} + e^{-it})/2 ; sin t = -i/2 e^{it} + i/2 e^{-it}
    if phase == COS:
        return {1: 0.5 + 0.0j, -1: 0.5 + 0.0j}
    return {1: -0.5j, -1: 0.5j}


def triple_trig_integral(
    k1: np.ndarray, ph1: int, k2: np.ndarray, ph2: int, k3: np.ndarray, ph3: int, volume: float
) -> float:
    """Integral over the torus of trig(k1.x) * trig(k2.x) * trig(k3.x).

    Expands each factor into complex exponentials; only signed triples with
    s1 k1 + s2 k2 + s3 k3 = 0 survive the integral.
    """
    c1, c2, c3 = _exp_coeffs(ph1), _exp_coeffs(ph2), _exp_coeffs(ph3)
    total = 0.0 + 0.0j
    for s1, g1 in c1.items():
        for s2, g2 in c2.items():
            for s3, g3 in c3.items():
                if not np.any(s1 * k1 + s2 * k2 + s3 * k3):
                    total += g1 * g2 * g3
    return float(total.real) * volume


def _advection_entry(
    norm_const: float,
    k_a: np.ndarray, c_a: np.ndarray, n_a: float, ph_a: int,
    k_b: np.ndarray, c_b: np.ndarray, n_b: float, ph_b: int,
    k_c: np.ndarray, c_c: np.ndarray, n_c: float, ph_c: int,
    volume: float,
) -> float:
    """Closed form of integral (v_a . grad) v_b . v_c over the torus.

    Geometric factors use the integer polarizations c_* (with norms n_*), so
    zero entries are detected exactly in integer arithmetic.
    """
    g1 = int(c_a @ k_b)
    g2 = int(c_b @ c_c)
    if g1 == 0 or g2 == 0:
        return 0.0
    # derivative of the middle factor: cos -> -sin (factor -1), sin -> cos (+1)
    if ph_b == COS:
        dphase, dsign = SIN, -1.0
    else:
        dphase, dsign = COS, 1.0
    integral = triple_trig_integral(k_a, ph_a, k_b, dphase, k_c, ph_c, volume)
    if integral == 0.0:
        return 0.0
    return norm_const ** 3 * (g1 * g2) / (n_a * n_b * n_c) * dsign * integral


@dataclass(frozen=True)
class ConvectionTensor:
    """Sparse rank-3 convection tensor b[i, k, j], skew-symmetric in (k, j).

    Entries are stored in coordinate format sorted by output index j; the
    per-j scatter matrix realizes the quadratic contraction
    B(a, c)_j = sum over (i, k) of b[i, k, j] a_i c_k.
    """

    n_modes: int
    i_idx: np.ndarray
    k_idx: np.ndarray
    j_idx: np.ndarray
    values: np.ndarray
    _scatter: sparse.csr_matrix = field(repr=False, compare=False, default=None)

    @property
    def nnz(self) -> int:
        return self.values.size

    @property
    def frobenius(self) -> float:
        return float(np.sqrt(np.sum(self.values ** 2)))

    def scatter(self) -> sparse.csr_matrix:
        return self._scatter

    def apply(self, a: np.ndarray, c: np.ndarray | None = None) -> np.ndarray:
        """B(a, c) with c defaulting to a; supports arbitrary leading batch axes."""
        if c is None:
            c = a
        a = np.asarray(a, dtype=np.float64)
        if self.nnz == 0:
            return np.zeros_like(a)
        prod = a[..., self.i_idx] * np.asarray(c)[..., self.k_idx]
        if prod.ndim == 1:
            return self._scatter @ prod
        lead = prod.shape[:-1]
        flat = prod.reshape(-1, self.nnz)
        return (self._scatter @ flat.T).T.reshape(*lead, self.n_modes)

    def form(self, a: np.ndarray, c: np.ndarray, w: np.ndarray) -> float:
        """Trilinear form sum b[i,k,j] a_i c_k w_j."""
        return float(np.asarray(w) @ self.apply(a, c))

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.n_modes,) * 3)
        dense[self.i_idx, self.k_idx, self.j_idx] = self.values
        return dense


def _finish_tensor(n_modes: int, entries: dict[tuple[int, int, int], float]) -> ConvectionTensor:
    # exact skew-symmetry in the last two slots: b[i,k,j] <- (b[i,k,j] - b[i,j,k]) / 2,
    # storing mirror pairs together so the identity holds bitwise on the store
    skew: dict[tuple[int, int, int], float] = {}
    for (i, k, j), v in entries.items():
        if (i, k, j) in skew or (i, j, k) in skew:
            continue
        w = 0.5 * (v - entries.get((i, j, k), 0.0))
        if w != 0.0:
            skew[(i, k, j)] = w
            skew[(i, j, k)] = -w
    if skew:
        keys = sorted(skew.keys(), key=lambda t: (t[2], t[0], t[1]))
        i_idx = np.array([t[0] for t in keys], dtype=np.int64)
        k_idx = np.array([t[1] for t in keys], dtype=np.int64)
        j_idx = np.array([t[2] for t in keys], dtype=np.int64)
        values = np.array([skew[t] for t in keys])
    else:
        i_idx = k_idx = j_idx = np.zeros(0, dtype=np.int64)
        values = np.zeros(0)
    scatter = sparse.csr_matrix(
        (values, (j_idx, np.arange(values.size))), shape=(n_modes, values.size)
    )
    return ConvectionTensor(
        n_modes=n_modes, i_idx=i_idx, k_idx=k_idx, j_idx=j_idx, values=values,
        _scatter=scatter,
    )


def _modes_of_wave(basis: BasisSpec, w: int) -> range:
    per_wave = basis.n_modes // basis.n_wavevectors
    return range(w * per_wave, (w + 1) * per_wave)


def convection_tensor(basis: BasisSpec) -> ConvectionTensor:
    """Assemble b[i,k,j] = integral (v_i . grad) v_k . v_j in closed form.

    Candidate output wavevectors are +/-(k_i + k_k) and +/-(k_i - k_k); all
    other index triples violate the triad condition and vanish exactly.
    """
    waves = basis.wavevectors
    nc = basis.norm_const
    vol = basis.volume
    entries: dict[tuple[int, int, int], float] = {}
    for wi in range(basis.n_wavevectors):
        ki = waves[wi]
        for wk in range(basis.n_wavevectors):
            kk = waves[wk]
            targets = set()
            for combo in (ki + kk, ki - kk):
                canon, _ = canonicalize(combo)
                wj = basis.wave_index(canon)
                if wj >= 0:
                    targets.add(wj)
            if not targets:
                continue
            for i in _modes_of_wave(basis, wi):
                c_i, ph_i = basis.mode_c(i), basis.mode_phase[i]
                if int(c_i @ kk) == 0:
                    # (p_i . k_k) factors out of every entry in this block
                    continue
                n_i = basis.mode_cnorm(i)
                for k in _modes_of_wave(basis, wk):
                    c_k, n_k, ph_k = basis.mode_c(k), basis.mode_cnorm(k), basis.mode_phase[k]
                    for wj in targets:
                        for j in _modes_of_wave(basis, wj):
                            val = _advection_entry(
                                nc,
                                ki, c_i, n_i, ph_i,
                                kk, c_k, n_k, ph_k,
                                waves[wj], basis.mode_c(j), basis.mode_cnorm(j),
                                basis.mode_phase[j],
                                vol,
                            )
                            if val != 0.0:
                                entries[(i, k, j)] = val
    return _finish_tensor(basis.n_modes, entries)


def advection_matrix(
    basis: BasisSpec,
    adv_basis: BasisSpec,
    adv_coeffs: np.ndarray,
) -> np.ndarray:
    """Dense matrix Z with Z[j, i] = <(w . grad) v_i, v_j> for w = sum c_m u_m.

    The advecting field w lives in `adv_basis` (same dimension, cutoff at
    least as large is not required; any cutoff works since the closed form
    only needs the triad condition against the target basis).
    """
    if adv_basis.dim != basis.dim:
        raise BasisError("advecting field dimension mismatch")
    adv_coeffs = np.asarray(adv_coeffs, dtype=np.float64)
    if adv_coeffs.shape != (adv_basis.n_modes,):
        raise BasisError(
            f"advecting coefficients have shape {adv_coeffs.shape}, "
            f"expected ({adv_basis.n_modes},)"
        )
    nz = np.nonzero(adv_coeffs)[0]
    Z = np.zeros((basis.n_modes, basis.n_modes))
    nc = basis.norm_const
    vol = basis.volume
    for m in nz:
        km, phm = adv_basis.mode_k(m), adv_basis.mode_phase[m]
        c_m, n_m = adv_basis.mode_c(m), adv_basis.mode_cnorm(m)
        cm = adv_coeffs[m]
        for wi in range(basis.n_wavevectors):
            ki = basis.wavevectors[wi]
            targets = set()
            for combo in (km + ki, km - ki):
                canon, _ = canonicalize(combo)
                wj = basis.wave_index(canon)
                if wj >= 0:
                    targets.add(wj)
            if not targets:
                continue
            for i in _modes_of_wave(basis, wi):
                c_i, n_i, ph_i = basis.mode_c(i), basis.mode_cnorm(i), basis.mode_phase[i]
                for wj in targets:
                    for j in _modes_of_wave(basis, wj):
                        val = _advection_entry(
                            nc,
                            km, c_m, n_m, phm,
                            ki, c_i, n_i, ph_i,
                            basis.mode_k(j), basis.mode_c(j), basis.mode_cnorm(j),
                            basis.mode_phase[j],
                            vol,
                        )
                        if val != 0.0:
                            Z[j, i] += cm * val
    return Z


def dissipation_matrix(basis: BasisSpec, nu: float, transport=None) -> np.ndarray:
    """Drift dissipation matrix d = nu * diag(|k|^2) + corr.

    `transport` may be None, a precomputed symmetric correction matrix, or a
    TransportNoise-like object exposing ito correction via `.correction()`.
    Symmetric and positive semidefinite for nu >= 0.
    """
    if nu < 0:
        raise BasisError(f"viscosity must be nonnegative, got {nu}")
    D = nu * np.diag(basis.k_sq)
    if transport is None:
        return D
    corr = transport if isinstance(transport, np.ndarray) else transport.correction()
    if corr.shape != (basis.n_modes, basis.n_modes):
        raise BasisError("transport correction indexed inconsistently with basis")
    return D + corr
