import numpy as np
import pytest

from mpca_retrieval.errors import ArgumentError, CapacityError, ShapeError
from mpca_retrieval.ml.mpca import select_dim_for_ccr
from mpca_retrieval.ml.pca_baseline import PcaReducer, fit_pca, project_pca, reconstruct_pca


def test_points_on_a_line(rng):
    t = rng.normal(size=50)
    model = fit_pca(np.stack([t, t], axis=1), out_dim=2)
    h = 1 / np.sqrt(2)
    assert np.allclose(model.components[:, 0], [h, h], atol=1e-12)
    w = model.spectrum.eigenvalues
    assert abs(w[1]) <= 1e-10 * w[0]


def test_spectrum_follows_covariance(rng):
    v = rng.normal(size=(10_000, 2)) * np.array([2.0, 1.0])
    model = fit_pca(v, out_dim=2)
    w = model.spectrum.eigenvalues
    assert w[0] / w[1] == pytest.approx(4.0, rel=0.1)
    empirical = np.sort(np.linalg.eigvalsh(np.cov(v, rowvar=False, bias=True)))[::-1]
    assert np.allclose(w / v.shape[0], empirical, rtol=1e-8)


def test_full_target_keeps_the_rank(rng):
    v = rng.normal(size=(60, 3)) @ rng.normal(size=(3, 7))
    model = fit_pca(v, target_ccr=1.0)
    assert model.out_dim == 3
    assert model.ccr == pytest.approx(1.0, abs=1e-10)


def test_target_selects_smallest_dimension(rng):
    v = rng.normal(size=(200, 5)) * np.array([5.0, 3.0, 2.0, 1.0, 0.5])
    model = fit_pca(v, target_ccr=0.8)
    w = model.spectrum.eigenvalues
    assert np.sum(w[:model.out_dim]) / np.sum(w) >= 0.8
    assert np.sum(w[:model.out_dim - 1]) / np.sum(w) < 0.8


def test_retained_energy_is_leading_eigenvalue_sum(rng):
    v = rng.normal(size=(80, 7)) * np.arange(1, 8)
    for k in range(1, 8):
        model = fit_pca(v, out_dim=k)
        kept = float(np.sum(model.spectrum.eigenvalues[:k]))
        assert float(np.sum(project_pca(model, v) ** 2)) == pytest.approx(kept, rel=1e-6)


def test_dimension_is_monotone_in_target(rng):
    spectrum = fit_pca(rng.normal(size=(60, 9)) * np.arange(9, 0, -1), out_dim=1).spectrum
    dims = [select_dim_for_ccr(spectrum, t) for t in np.linspace(0.01, 1.0, 200)]
    assert all(a <= b for a, b in zip(dims, dims[1:]))
    assert dims[0] == 1 and dims[-1] == 9


def test_projection_identities(rng):
    v = rng.normal(size=(40, 6))
    model = fit_pca(v, out_dim=6)
    assert np.allclose(project_pca(model, model.mean), 0.0, atol=1e-12)
    for row in v[:5]:
        assert np.linalg.norm(project_pca(model, row)) == pytest.approx(np.linalg.norm(row - model.mean), rel=1e-6)
    assert project_pca(model, v).shape == (40, 6)
    with pytest.raises(ShapeError):
        project_pca(model, np.zeros(5))


def test_reconstruction_residual_is_dropped_energy(rng):
    v = rng.normal(size=(80, 6)) * np.arange(1, 7)
    model = fit_pca(v, out_dim=3)
    residual = v - reconstruct_pca(model, project_pca(model, v))
    dropped = float(np.sum(model.spectrum.eigenvalues[3:]))
    assert float(np.sum(residual ** 2)) == pytest.approx(dropped, rel=1e-8)


def test_lapack_solver_agrees(rng):
    v = rng.normal(size=(50, 8))
    a = fit_pca(v, out_dim=4)
    b = fit_pca(v, out_dim=4, solver="lapack")
    assert np.allclose(a.spectrum.eigenvalues, b.spectrum.eigenvalues, rtol=1e-10)
    assert np.allclose(a.components, b.components, atol=1e-8)


def test_errors(rng):
    with pytest.raises(CapacityError):
        fit_pca(np.zeros((2, 4097)), out_dim=1)
    with pytest.raises(ArgumentError):
        fit_pca(rng.normal(size=(5, 3)), out_dim=2, target_ccr=0.9)
    with pytest.raises(ArgumentError):
        fit_pca(rng.normal(size=(1, 3)), out_dim=1)
    with pytest.raises(ArgumentError):
        fit_pca(rng.normal(size=(5, 3)), out_dim=4)


def test_reducer(rng):
    v = rng.normal(size=(30, 10))
    out = PcaReducer(out_dim=4).fit_transform(v)
    assert out.shape == (30, 4)
