import itertools
import math

import numpy as np
import pytest
from sklearn.base import clone

from mpca_retrieval.errors import ArgumentError, NumericError, ShapeError
from mpca_retrieval.ml import mpca
from mpca_retrieval.ml.model_selector import make_reducer
from mpca_retrieval.ml.pca_baseline import fit_pca, project_pca
from mpca_retrieval.ml.tensor_ops import center, frobenius_sq, unfold

# Table 3 per-mode rates and the weighted rates listed for them
TABLE_ROWS = [
    ((0.852, 0.854, 0.914), 0.911),
    ((0.906, 0.909, 0.951), 0.949),
    ((0.925, 0.927, 0.975), 0.972),
]
MAP_DIMS = (6, 6, 256)


def random_batch(rng, max_dims=(4, 4, 5), max_n=20):
    dims = tuple(int(rng.integers(1, m + 1)) for m in max_dims)
    n = int(rng.integers(2, max_n + 1))
    return rng.normal(size=(n,) + dims)


def scatter_oracle(centered, mode):
    size = centered.shape[mode]
    s = np.zeros((size, size))
    for x in centered:
        u = unfold(x, mode)
        for a in range(size):
            for b in range(size):
                s[a, b] += sum(u[a, c] * u[b, c] for c in range(u.shape[1]))
    return s


def test_scatter_matches_outer_product_oracle(rng):
    for _ in range(50):
        centered, _ = center(random_batch(rng))
        energy = sum(frobenius_sq(x) for x in centered)
        for k in (1, 2, 3):
            s = mpca.scatter_matrix(centered, k)
            ref = scatter_oracle(centered, k)
            assert np.linalg.norm(s - ref) <= 1e-9 * max(np.linalg.norm(ref), 1e-300)
            assert np.trace(s) == pytest.approx(energy, rel=1e-9)


def test_scatter_shapes_for_pooling_maps(rng):
    centered, _ = center(rng.normal(size=(3,) + MAP_DIMS))
    assert [mpca.scatter_matrix(centered, k).shape for k in (1, 2, 3)] == [(6, 6), (6, 6), (256, 256)]


def test_scatter_of_single_sample_is_zero(rng):
    centered, _ = center(rng.normal(size=(1, 2, 3, 4)))
    assert not mpca.scatter_matrix(centered, 2).any()


def test_scatter_does_not_depend_on_workers(rng):
    centered, _ = center(rng.normal(size=(50, 3, 3, 4)))
    one = mpca.scatter_matrix(centered, 3, workers=1, chunk_size=7)
    many = mpca.scatter_matrix(centered, 3, workers=4, chunk_size=7)
    assert np.array_equal(one, many)


def test_full_rank_projection_preserves_scatter(rng):
    for _ in range(10):
        batch = random_batch(rng)
        dims = batch.shape[1:]
        model = mpca.fit(batch, dims)
        centered, _ = center(batch)
        total = sum(frobenius_sq(x) for x in centered)
        projected = sum(frobenius_sq(mpca.project(model, x)) for x in batch)
        assert projected == pytest.approx(total, rel=1e-4)
        assert np.allclose(mpca.reconstruct(model, mpca.project(model, batch[0])), batch[0], atol=1e-8)


def test_projection_shapes_for_pooling_maps(rng):
    batch = rng.normal(size=(4,) + MAP_DIMS).astype(np.float32)
    model = mpca.fit(batch, (3, 3, 128), solver="lapack")
    assert [v.shape for v in model.projections] == [(6, 3), (6, 3), (256, 128)]
    assert mpca.project(model, batch[0]).shape == (3, 3, 128)
    assert mpca.project_batch(model, batch).shape == (4, 3, 3, 128)


def test_project_mean_is_zero(rng):
    batch = rng.normal(size=(8, 2, 3, 4))
    model = mpca.fit(batch, (1, 2, 2))
    assert np.allclose(mpca.project(model, batch.mean(axis=0)), 0.0, atol=1e-12)
    with pytest.raises(ShapeError):
        mpca.project(model, np.zeros((2, 3, 5)))


def test_project_batch_matches_single(rng):
    batch = rng.normal(size=(6, 3, 2, 4))
    model = mpca.fit(batch, (2, 1, 3))
    stacked = mpca.project_batch(model, batch)
    for i in range(6):
        assert np.allclose(stacked[i], mpca.project(model, batch[i]), atol=1e-12)


def test_eigenvalues_sum_to_scatter_trace(rng):
    for _ in range(20):
        batch = random_batch(rng)
        model = mpca.fit(batch, batch.shape[1:])
        centered, _ = center(batch)
        for k in (1, 2, 3):
            trace = float(np.trace(mpca.scatter_matrix(centered, k)))
            assert float(np.sum(model.spectra[k - 1].eigenvalues)) == pytest.approx(trace, rel=1e-9, abs=1e-12)


def test_projection_energy_grows_with_out_dims(rng):
    batch = rng.normal(size=(25, 3, 4, 5))
    full = mpca.fit(batch, (3, 4, 5))
    energy = {}
    for dims in itertools.product(range(1, 4), range(1, 5), range(1, 6)):
        y = mpca.project_batch(full.with_out_dims(dims), batch)
        energy[dims] = float(np.sum(y ** 2))
    for small, e_small in energy.items():
        for large, e_large in energy.items():
            if all(a <= b for a, b in zip(small, large)):
                assert e_small <= e_large + 1e-6 * e_large


def test_spectra_descending_and_energy_ordered(rng):
    model = mpca.fit(rng.normal(size=(30, 3, 4, 5)), (2, 2, 2))
    for spectrum in model.spectra:
        assert np.all(np.diff(spectrum.eigenvalues) <= 0)
    # kept components carry at least their share of the energy
    for k, spectrum in enumerate(model.spectra):
        assert mpca.ccr(spectrum, model.out_dims[k]) >= model.out_dims[k] / model.in_dims[k] - 1e-12


def test_degenerate_modes_match_pca(rng):
    batch = rng.normal(size=(100, 1, 1, 16))
    model = mpca.fit(batch, (1, 1, 16))
    pca = fit_pca(batch.reshape(100, 16), out_dim=16)
    w, ref = model.spectra[2].eigenvalues, pca.spectrum.eigenvalues
    assert np.allclose(w, ref, rtol=1e-8, atol=1e-8 * ref[0])


@pytest.mark.parametrize("d", [1, 5, 16])
def test_degenerate_projections_match_pca(rng, d):
    batch = rng.normal(size=(100, 1, 1, 16))
    y = mpca.project_batch(mpca.fit(batch, (1, 1, d)), batch).reshape(100, d)
    z = project_pca(fit_pca(batch.reshape(100, 16), out_dim=d), batch.reshape(100, 16))
    assert np.allclose(y, z, rtol=1e-8, atol=1e-8 * np.abs(z).max())


def test_fit_needs_two_samples(rng):
    with pytest.raises(ArgumentError):
        mpca.fit(rng.normal(size=(1, 2, 2, 2)), (1, 1, 1))
    with pytest.raises(ArgumentError):
        mpca.fit(rng.normal(size=(3, 2, 2, 2)), (3, 1, 1))


def test_fit_is_deterministic_across_workers(rng):
    batch = rng.normal(size=(40, 3, 3, 5))
    a = mpca.fit(batch, (2, 2, 3), workers=1, chunk_size=6)
    b = mpca.fit(batch, (2, 2, 3), workers=4, chunk_size=6)
    for va, vb in zip(a.projections, b.projections):
        assert np.array_equal(va, vb)


def test_with_out_dims_truncates(rng):
    batch = rng.normal(size=(20, 3, 4, 5))
    full = mpca.fit(batch, (3, 4, 5))
    small = full.with_out_dims((2, 2, 3))
    ref = mpca.fit(batch, (2, 2, 3))
    assert small.out_dims == (2, 2, 3)
    for a, b in zip(small.projections, ref.projections):
        assert np.array_equal(a, b)
    with pytest.raises(ArgumentError):
        small.with_out_dims((3, 3, 3))


def test_ccr_examples():
    assert mpca.ccr([4, 3, 2, 1], 2) == pytest.approx(0.7)
    assert mpca.ccr([4, 3, 2, 1], 4) == 1.0
    with pytest.raises(ArgumentError):
        mpca.ccr([0.0, 0.0], 1)
    with pytest.raises(NumericError):
        mpca.ccr([4.0, -1.0], 1)
    # tiny negatives from rounding are clamped
    assert mpca.ccr([4.0, -1e-12], 1) == 1.0


@pytest.mark.parametrize("ccrs,expected", TABLE_ROWS)
def test_weighted_ccr_table_rows(ccrs, expected):
    got = mpca.weighted_ccr(ccrs, MAP_DIMS)
    assert got == pytest.approx(expected, abs=1e-3)
    # the listed values are the weighted rates cut to 0.1%
    assert math.floor(got * 1000) / 1000 == pytest.approx(expected)


def test_weighted_ccr_of_equal_rates():
    assert mpca.weighted_ccr((0.8, 0.8, 0.8), (3, 7, 11)) == pytest.approx(0.8)


@pytest.mark.parametrize("cr,expected", [(1 / 3, (2, 2, 85)), (0.5, (3, 3, 128)), (2 / 3, (4, 4, 171))])
def test_select_dims_by_cr(cr, expected):
    assert mpca.select_dims_by_cr(MAP_DIMS, cr) == expected


def test_reference_dims_override():
    assert mpca.REFERENCE_DIMS["cr67"] == (4, 4, 170)
    assert mpca.resolve_out_dims(MAP_DIMS, dims=mpca.REFERENCE_DIMS["cr67"]) == (4, 4, 170)
    assert mpca.resolve_out_dims(MAP_DIMS, cr=0.5) == mpca.REFERENCE_DIMS["cr50"]
    with pytest.raises(ArgumentError):
        mpca.resolve_out_dims(MAP_DIMS, cr=0.5, dims=(3, 3, 128))
    with pytest.raises(ArgumentError):
        mpca.select_dims_by_cr(MAP_DIMS, 0.0)


def test_select_dim_for_ccr():
    assert mpca.select_dim_for_ccr([4, 3, 2, 1], 0.65) == 2
    assert mpca.select_dim_for_ccr([4, 3, 2, 1], 0.7) == 2
    assert mpca.select_dim_for_ccr([4, 3, 2, 1], 1.0) == 4
    assert mpca.select_dim_for_ccr([10, 0, 0], 0.5) == 1


def test_reducer_estimator(rng):
    batch = rng.normal(size=(15, 3, 4, 6))
    reducer = make_reducer("mpca", cr=0.5)
    out = clone(reducer).fit_transform(batch)
    assert out.shape == (15, 2 * 2 * 3)
    fitted = reducer.fit(batch)
    assert fitted.model_.out_dims == (2, 2, 3)
    assert fitted.weighted_ccr_ == pytest.approx(mpca.weighted_ccr(fitted.ccrs_, (3, 4, 6)))
    with pytest.raises(ArgumentError):
        make_reducer("ica")
