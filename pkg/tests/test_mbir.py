import numpy as np
import pandas as pd
import pytest

from wavres.ct_sim import (
    GeometryConfig,
    Projector,
    SimConfig,
    Sinogram,
    fbp_reconstruct,
    forward_project,
    inject_low_dose_noise,
    rasterize_phantom,
    shepp_logan,
)
from wavres.errors import DimensionError, ParameterError
from wavres.mbir import (
    OBJECTIVE_COLUMNS,
    TVParams,
    admm_tv_reconstruct,
    backproject,
    conjugate_gradient,
    image_divergence,
    image_gradient,
    prox_objective,
    save_objective_log,
    tune_lambda,
    tv_prox_chambolle,
    tv_value,
)
from wavres.metrics import nrmse


def step_image(size=16):
    image = np.zeros((size, size))
    image[:, size // 2:] = 1.0
    return image


class TestTotalVariation:
    def test_step_edge(self):
        assert tv_value(step_image()) == pytest.approx(16.0)

    def test_constant_has_no_variation(self):
        assert tv_value(np.full((8, 8), 3.0)) == 0.0

    def test_divergence_is_negative_adjoint(self, rng):
        u = rng.normal(size=(9, 7))
        px, py = rng.normal(size=(9, 7)), rng.normal(size=(9, 7))
        gx, gy = image_gradient(u)
        assert np.vdot(gx, px) + np.vdot(gy, py) == pytest.approx(-np.vdot(u, image_divergence(px, py)), rel=1e-12)


class TestProx:
    def test_zero_weight_is_identity(self, rng):
        v = rng.normal(size=(8, 8))
        out = tv_prox_chambolle(v, 0.0)
        np.testing.assert_array_equal(out, v)
        assert out is not v

    def test_negative_weight(self):
        with pytest.raises(ParameterError):
            tv_prox_chambolle(np.zeros((4, 4)), -1.0)

    def test_constant_image_is_fixed_point(self):
        v = np.full((8, 8), 2.5)
        np.testing.assert_allclose(tv_prox_chambolle(v, 0.7), v, atol=1e-12)

    def test_denoises_and_keeps_mean(self, rng):
        clean = step_image(24)
        noisy = clean + rng.normal(scale=0.2, size=clean.shape)
        weight = 0.3
        params = TVParams(chambolle_iters=200)
        out = tv_prox_chambolle(noisy, weight, params)
        assert out.mean() == pytest.approx(noisy.mean(), abs=1e-10)
        assert np.linalg.norm(out - clean) < 0.6 * np.linalg.norm(noisy - clean)
        assert prox_objective(out, noisy, weight) < prox_objective(noisy, noisy, weight)
        assert prox_objective(out, noisy, weight) <= prox_objective(np.full_like(noisy, noisy.mean()), noisy, weight)

    def test_matches_grid_search_on_two_by_two(self):
        v = np.array([[0.0, 1.0], [0.5, 0.2]])
        weight = 0.1
        out = tv_prox_chambolle(v, weight, TVParams(chambolle_iters=5000))

        step = 0.02
        axis = np.arange(-0.3, 0.3 + step / 2, step)
        grids = np.meshgrid(*(v.flat[i] + axis for i in range(4)), indexing="ij")
        u00, u01, u10, u11 = grids
        objective = 0.5 * sum((g - v.flat[i]) ** 2 for i, g in enumerate(grids))
        objective += weight * (np.sqrt((u01 - u00) ** 2 + (u10 - u00) ** 2) + np.abs(u11 - u01) + np.abs(u11 - u10))
        best = np.unravel_index(np.argmin(objective), objective.shape)
        grid_best = np.array([g[best] for g in grids]).reshape(2, 2)

        gap = objective[best] - prox_objective(out, v, weight)
        assert gap >= -1e-6
        # strong convexity: the grid optimum lies close to the exact one
        assert 0.5 * np.sum((out - grid_best) ** 2) <= gap + 1e-6


class TestParams:
    @pytest.mark.parametrize("change", [{"lam": -0.1}, {"rho": 0.0}, {"chambolle_step": 0.3},
                                        {"outer_iters": 0}, {"tolerance": -1.0}])
    def test_invalid(self, change):
        with pytest.raises(ParameterError):
            TVParams(**change).validate()


def test_conjugate_gradient_solves_spd_system(rng):
    m = rng.normal(size=(6, 6))
    matrix = m @ m.T + 6.0 * np.eye(6)
    rhs = rng.normal(size=6)
    x = conjugate_gradient(lambda v: matrix @ v, rhs, np.zeros(6), iterations=6)
    np.testing.assert_allclose(x, np.linalg.solve(matrix, rhs), atol=1e-8)


def test_backproject_is_projector_adjoint(tiny_geometry, rng):
    sino = Sinogram(rng.normal(size=tiny_geometry.shape), tiny_geometry)
    np.testing.assert_allclose(backproject(sino), Projector(tiny_geometry).adjoint(sino.data), atol=1e-12)
    with pytest.raises(DimensionError):
        backproject(sino, GeometryConfig.for_image(16, n_views=12))


class TestAdmm:
    def test_zero_lambda_is_least_squares(self):
        geometry = GeometryConfig.for_image(16, n_views=48)
        phantom = rasterize_phantom(shepp_logan(), 16)
        rng = np.random.default_rng(4)
        data = forward_project(phantom, geometry).data + rng.normal(scale=0.01, size=geometry.shape)
        sino = Sinogram(data, geometry)

        matrix = Projector(geometry).matrix().toarray()
        expected, *_ = np.linalg.lstsq(matrix, data.ravel(), rcond=None)

        params = TVParams(lam=0.0, rho=1e-4, outer_iters=20, cg_iters=100, tolerance=0.0)
        image, log = admm_tv_reconstruct(sino, params=params)
        residual = np.linalg.norm(matrix @ image.ravel() - data.ravel())
        best = np.linalg.norm(matrix @ expected - data.ravel())
        assert residual == pytest.approx(best, rel=1e-6)
        gradient = matrix.T @ (matrix @ image.ravel() - data.ravel())
        assert np.linalg.norm(gradient) < 1e-5 * np.linalg.norm(matrix.T @ data.ravel())
        assert np.linalg.norm(image.ravel() - expected) / np.linalg.norm(expected) < 1e-2
        assert log[-1].total == pytest.approx(0.5 * best ** 2, rel=1e-5)

    def test_beats_fbp_on_noisy_data(self):
        sim = SimConfig()
        geometry = GeometryConfig.for_image(32, n_views=60)
        reference = rasterize_phantom(shepp_logan(), 32) * sim.attenuation_scale
        sino = inject_low_dose_noise(forward_project(reference, geometry), 2e4, seed=17)
        fbp_error = nrmse(fbp_reconstruct(sino), reference)

        best, table = tune_lambda(sino, reference, TVParams(outer_iters=20),
                                  grid=(0.003, 0.01, 0.03, 0.1))
        assert list(table.columns) == ["lambda", "nrmse", "iterations", "objective"]
        assert best in table["lambda"].tolist()
        assert table["nrmse"].min() < fbp_error

    def test_log_and_csv(self, tiny_geometry, tmp_path):
        phantom = rasterize_phantom(shepp_logan(), 16)
        sino = forward_project(phantom, tiny_geometry)
        image, log = admm_tv_reconstruct(sino, params=TVParams(outer_iters=5, tolerance=0.0))
        assert image.shape == (16, 16)
        assert [r.iteration for r in log] == [1, 2, 3, 4, 5]
        for record in log:
            assert record.total == pytest.approx(record.data_term + 0.05 * record.tv_term)
        frame = pd.read_csv(save_objective_log(tmp_path / "objective.csv", log))
        assert list(frame.columns) == OBJECTIVE_COLUMNS
        assert len(frame) == 5

    def test_objective_never_increases(self):
        sim = SimConfig()
        geometry = GeometryConfig.for_image(32, n_views=60)
        reference = rasterize_phantom(shepp_logan(), 32) * sim.attenuation_scale
        sino = inject_low_dose_noise(forward_project(reference, geometry), 5e3, seed=8)
        params = TVParams(lam=0.05, rho=0.2, outer_iters=25, chambolle_iters=10, tolerance=0.0)
        _, log = admm_tv_reconstruct(sino, params=params)
        totals = [r.total for r in log]
        assert [r.iteration for r in log] == list(range(1, 26))
        assert all(b <= a * (1 + 1e-6) for a, b in zip(totals[2:], totals[3:]))
        assert totals[-1] < totals[0]

    def test_runs_are_bit_reproducible(self, tiny_geometry):
        sino = inject_low_dose_noise(forward_project(rasterize_phantom(shepp_logan(), 16), tiny_geometry), 1e4, seed=5)
        params = TVParams(outer_iters=6, tolerance=0.0)
        first, log_a = admm_tv_reconstruct(sino, params=params)
        second, log_b = admm_tv_reconstruct(sino, params=params)
        np.testing.assert_array_equal(first, second)
        assert log_a == log_b

    def test_stops_early_at_tolerance(self, tiny_geometry):
        sino = Sinogram(np.zeros(tiny_geometry.shape), tiny_geometry)
        image, log = admm_tv_reconstruct(sino, params=TVParams(outer_iters=30))
        assert len(log) < 30
        np.testing.assert_allclose(image, 0.0, atol=1e-12)

    def test_initial_image_shape(self, tiny_geometry):
        sino = Sinogram(np.zeros(tiny_geometry.shape), tiny_geometry)
        with pytest.raises(DimensionError):
            admm_tv_reconstruct(sino, x0=np.zeros((8, 8)))

    def test_geometry_mismatch(self, tiny_geometry):
        sino = Sinogram(np.zeros(tiny_geometry.shape), tiny_geometry)
        with pytest.raises(DimensionError):
            admm_tv_reconstruct(sino, geometry=GeometryConfig.for_image(16, n_views=12))

    def test_empty_grid(self, tiny_geometry):
        sino = Sinogram(np.zeros(tiny_geometry.shape), tiny_geometry)
        with pytest.raises(ParameterError):
            tune_lambda(sino, np.zeros((16, 16)), grid=())

    @pytest.mark.slow
    def test_objective_decreases_at_full_size(self):
        sim = SimConfig()
        geometry = GeometryConfig.for_image(128, n_views=180)
        reference = rasterize_phantom(shepp_logan(), 128) * sim.attenuation_scale
        sino = inject_low_dose_noise(forward_project(reference, geometry), 2.5e4, seed=3)
        _, log = admm_tv_reconstruct(sino, params=TVParams(outer_iters=30, tolerance=0.0))
        totals = [r.total for r in log]
        assert totals[-1] < totals[0]
        assert all(b <= a * (1 + 1e-6) for a, b in zip(totals[2:], totals[3:]))
