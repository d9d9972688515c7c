import numpy as np
import pytest

from stochflow import basis as basis_mod
from stochflow.basis import (
    COS,
    SIN,
    BasisError,
    TrigField,
    build_basis,
    convection_tensor,
    default_grid,
    dissipation_matrix,
    evaluate_field,
    gradient_field,
    leray_project,
    project_field,
    solenoidal_field,
)

import oracles


# -- construction --------------------------------------------------------------


def test_cutoff1_mode_count(basis2_1):
    assert basis2_1.n_modes == 8
    waves = {tuple(int(c) for c in k) for k in basis2_1.wavevectors}
    assert waves == {(1, 0), (0, 1), (1, 1), (1, -1)}


def test_invalid_arguments_rejected():
    with pytest.raises(BasisError):
        build_basis(2, 0)
    with pytest.raises(BasisError):
        build_basis(4, 2)
    with pytest.raises(BasisError):
        build_basis(1, 1)


def test_mode_ordering_stable(basis2_2):
    again = build_basis(2, 2)
    assert np.array_equal(again.wavevectors, basis2_2.wavevectors)
    assert np.array_equal(again.mode_phase, basis2_2.mode_phase)
    assert [again.mode_label(i) for i in range(4)] == \
        [basis2_2.mode_label(i) for i in range(4)]


def test_polarization_counts():
    b3 = build_basis(3, 1)
    per_wave = b3.n_modes // b3.n_wavevectors
    assert per_wave == 4  # 2 polarizations x 2 phases
    b2 = build_basis(2, 1)
    assert b2.n_modes // b2.n_wavevectors == 2


@pytest.mark.parametrize("dim,cutoff", [(2, 1), (2, 2), (2, 3), (2, 4), (2, 5), (2, 6), (3, 1), (3, 2)])
def test_gram_identity(dim, cutoff):
    b = build_basis(dim, cutoff)
    gram = oracles.gram_matrix(b)
    assert np.abs(gram - np.eye(b.n_modes)).max() <= 1e-12


def test_divergence_free_exact(basis2_3):
    b3 = build_basis(3, 2)
    for b in (basis2_3, b3):
        kint = b.wavevectors[b.mode_wave]
        cint = b.pol_int[b.mode_wave, b.mode_pol]
        assert np.abs(np.einsum("nd,nd->n", kint, cint)).max() == 0


# -- Leray projection ------------------------------------------------------------


def test_leray_kills_gradients(basis2_2):
    grad = gradient_field(basis2_2, {((1, 1), COS): 0.7, ((2, -1), SIN): -0.3,
                                     ((0, 1), SIN): 1.1})
    assert np.abs(leray_project(basis2_2, grad)).max() == 0.0


def test_leray_identity_on_solenoidal(basis2_2, rng):
    a = rng.normal(size=basis2_2.n_modes)
    out = leray_project(basis2_2, solenoidal_field(basis2_2, a))
    assert np.abs(out - a).max() <= 1e-14


def test_leray_zero_mode(basis2_2):
    const = TrigField.zeros(basis2_2)
    const.mean[:] = (3.0, -1.0)
    assert np.abs(leray_project(basis2_2, const)).max() == 0.0


def test_leray_idempotent(basis2_2, rng):
    field = TrigField(
        coeffs=rng.normal(size=(basis2_2.n_wavevectors, 2, 2)),
        mean=rng.normal(size=2),
    )
    once = leray_project(basis2_2, field)
    twice = leray_project(basis2_2, solenoidal_field(basis2_2, once))
    assert np.abs(once - twice).max() <= 1e-14


def test_leray_rejects_mismatched_index_set(basis2_2, basis2_3):
    field = TrigField.zeros(basis2_3)
    with pytest.raises(BasisError):
        leray_project(basis2_2, field)


# -- convection tensor ------------------------------------------------------------


def test_convection_skew_bitwise(conv2_2):
    dense = conv2_2.to_dense()
    assert np.abs(dense + dense.transpose(0, 2, 1)).max() == 0.0


def test_convection_energy_conservation(conv2_2, rng):
    for _ in range(100):
        a = rng.normal(size=conv2_2.n_modes)
        assert abs(a @ conv2_2.apply(a)) <= 1e-12 * np.linalg.norm(a) ** 3


@pytest.mark.parametrize("cutoff", [1, 2, 3])
def test_convection_matches_dense_quadrature(cutoff):
    b = build_basis(2, cutoff)
    conv = convection_tensor(b)
    dense = oracles.dense_convection(b)
    sparse_dense = conv.to_dense()
    assert np.abs(sparse_dense - dense).max() <= 1e-12


def test_non_stored_entries_vanish(basis2_2, conv2_2):
    dense = oracles.dense_convection(basis2_2)
    stored = np.zeros(dense.shape, dtype=bool)
    stored[conv2_2.i_idx, conv2_2.k_idx, conv2_2.j_idx] = True
    assert np.abs(dense[~stored]).max() <= 1e-12


def test_concrete_triad_value(basis2_2):
    conv = convection_tensor(basis2_2)
    i = basis2_2.index_of("1,0:cos")
    k = basis2_2.index_of("0,1:cos")
    j = basis2_2.index_of("1,1:sin")
    val = conv.to_dense()[i, k, j]
    assert val != 0.0
    assert abs(val - oracles.advection_integral(basis2_2, i, k, j)) <= 1e-12


def test_sparsity_count_matches_dense():
    counts, modes = [], []
    for cutoff in (1, 2, 3):
        b = build_basis(2, cutoff)
        conv = convection_tensor(b)
        dense = oracles.dense_convection(b)
        assert conv.nnz == int(np.sum(np.abs(dense) > 1e-12))
        counts.append(conv.nnz)
        modes.append(b.n_modes)
    # triad constraint keeps growth well below the dense N^3
    growth = np.log(counts[-1] / counts[0]) / np.log(modes[-1] / modes[0])
    assert growth < 2.5


def test_bilinear_apply_against_dense(conv2_2, rng):
    dense = conv2_2.to_dense()
    a = rng.normal(size=conv2_2.n_modes)
    c = rng.normal(size=conv2_2.n_modes)
    expected = np.einsum("ikj,i,k->j", dense, a, c)
    assert np.abs(conv2_2.apply(a, c) - expected).max() <= 1e-13
    batch = rng.normal(size=(5, conv2_2.n_modes))
    expected_b = np.einsum("ikj,mi,mk->mj", dense, batch, batch)
    assert np.abs(conv2_2.apply(batch) - expected_b).max() <= 1e-13


# -- dissipation matrix ------------------------------------------------------------


def test_dissipation_zero(basis2_2):
    assert np.abs(dissipation_matrix(basis2_2, 0.0)).max() == 0.0


def test_dissipation_stokes_eigenvalues(basis2_2):
    D = dissipation_matrix(basis2_2, 1.0)
    i10 = basis2_2.index_of("1,0:cos")
    i11 = basis2_2.index_of("1,1:cos")
    assert D[i10, i10] == 1.0
    assert D[i11, i11] == 2.0
    assert np.abs(D - np.diag(np.diag(D))).max() == 0.0


def test_dissipation_with_transport_correction(basis2_2, rng):
    from stochflow.noise import build_noise

    field = np.zeros(basis2_2.n_modes)
    field[basis2_2.index_of("1,0:cos")] = 0.7
    noise = build_noise(basis2_2, transport_fields=[(0, field)])
    D = dissipation_matrix(basis2_2, 0.3, noise.transport)
    zeta = noise.transport.zeta[0]
    dense_corr = 0.5 * (zeta.T @ zeta)
    expected = 0.3 * np.diag(basis2_2.k_sq) + dense_corr
    assert np.abs(D - expected).max() <= 1e-13
    assert np.abs(D - D.T).max() == 0.0
    assert np.linalg.eigvalsh(D).min() >= -1e-13


def test_dissipation_rejects_negative_nu(basis2_2):
    with pytest.raises(BasisError):
        dissipation_matrix(basis2_2, -0.1)


# -- grid projection ------------------------------------------------------------


def test_project_field_recovers_unit_mode(basis2_2):
    n = default_grid(basis2_2.cutoff)
    e3 = np.zeros(basis2_2.n_modes)
    e3[3] = 1.0
    samples = evaluate_field(basis2_2, e3, n)
    out = project_field(basis2_2, samples, n)
    assert np.abs(out - e3).max() <= 1e-13


def test_project_field_zero(basis2_2):
    n = default_grid(basis2_2.cutoff)
    samples = np.zeros((n * n, 2))
    assert np.abs(project_field(basis2_2, samples, n)).max() == 0.0


def test_project_field_round_trip(basis2_2, rng):
    n = default_grid(basis2_2.cutoff)
    a = rng.normal(size=basis2_2.n_modes)
    out = project_field(basis2_2, evaluate_field(basis2_2, a, n), n)
    assert np.abs(out - a).max() <= 1e-12


def test_project_field_rejects_underresolved(basis2_2):
    n = default_grid(basis2_2.cutoff) - 1
    with pytest.raises(BasisError):
        project_field(basis2_2, np.zeros((n * n, 2)), n)


# -- labels ------------------------------------------------------------------------


def test_label_round_trip(basis2_2):
    for i in (0, 5, basis2_2.n_modes - 1):
        assert basis2_2.index_of(basis2_2.mode_label(i)) == i
    with pytest.raises(BasisError):
        basis2_2.index_of("9,9:cos")


def test_embedding(basis2_2, basis2_3):
    emb = basis2_2.embedding_into(basis2_3)
    for i in (0, 7, basis2_2.n_modes - 1):
        assert basis2_3.mode_label(emb[i]) == basis2_2.mode_label(i)
    with pytest.raises(BasisError):
        basis2_3.embedding_into(basis2_2)
