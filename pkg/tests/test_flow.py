import numpy as np
import pytest

from divland import flow
from divland.errors import DomainError
from divland.flow import CameraState, PlanarScene, TrackedPointSet


class TestFlowField:
    def test_pure_descent_over_flat_ground(self):
        cam = CameraState(velocity=(0.0, 0.0, 1.0))
        scene = PlanarScene(z0=2.0)
        obs = flow.observables(cam, scene)
        assert obs.theta_z == pytest.approx(0.5)
        assert obs.divergence == pytest.approx(1.0)
        assert (obs.omega_x, obs.omega_y) == (0.0, 0.0)

    def test_ventral_flow_is_negative_scaled_velocity(self):
        obs = flow.observables(CameraState(velocity=(1.0, -2.0, 0.0)), PlanarScene(z0=4.0))
        assert obs.omega_x == pytest.approx(-0.25)
        assert obs.omega_y == pytest.approx(0.5)

    def test_pure_rotation_at_origin(self):
        cam = CameraState(rates=(0.0, 0.3, 0.0))
        assert flow.flow_at_point(cam, PlanarScene(z0=3.0), (0.0, 0.0)) == pytest.approx((-0.3, 0.0))

    def test_translational_form_matches_depth_form(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            cam = CameraState(velocity=tuple(rng.normal(size=3)))
            scene = PlanarScene(z0=rng.uniform(1, 5), zx=rng.uniform(-0.3, 0.3), zy=rng.uniform(-0.3, 0.3))
            pt = tuple(rng.uniform(-0.5, 0.5, 2))
            assert flow.translational_flow(cam, scene, pt) == pytest.approx(flow.flow_at_point(cam, scene, pt))

    def test_derotation_recovers_translation(self):
        scene = PlanarScene(z0=2.0, zx=0.1)
        moving = CameraState(velocity=(0.2, 0.1, 0.7), rates=(0.1, -0.2, 0.3))
        still = CameraState(velocity=(0.2, 0.1, 0.7))
        pt = (0.2, -0.1)
        derot = flow.derotate(flow.flow_at_point(moving, scene, pt), pt, moving.rates)
        assert derot == pytest.approx(flow.flow_at_point(still, scene, pt))

    def test_ray_parallel_to_plane_is_rejected(self):
        with pytest.raises(DomainError):
            flow.depth_at_pixel(PlanarScene(z0=1.0, zx=2.0), (0.5, 0.0))


class TestScene:
    def test_points_lie_on_plane(self):
        s = PlanarScene.scatter(3.0, 40, zx=0.2, zy=-0.1, seed=4)
        np.testing.assert_allclose(s.points[:, 2], 3.0 + 0.2 * s.points[:, 0] - 0.1 * s.points[:, 1])

    def test_off_plane_point_rejected(self):
        with pytest.raises(DomainError):
            PlanarScene(z0=1.0, points=[[0.0, 0.0, 1.5]])

    def test_nonpositive_height_rejected(self):
        with pytest.raises(DomainError):
            PlanarScene(z0=0.0)

    def test_projection_reproduces_scatter_window(self):
        s = PlanarScene.scatter(2.0, 30, half_fov=0.4, seed=2)
        img = flow.project(s.points, CameraState())
        assert np.all(np.abs(img) <= 0.4)


class TestCameraMotion:
    def test_projected_displacement_matches_flow(self):
        """Finite-difference image motion converges to the analytic flow field."""
        scene = PlanarScene.scatter(3.0, 20, zx=0.1, seed=3)
        cam = CameraState(velocity=(0.3, -0.2, 0.8), rates=(0.05, -0.1, 0.2))
        dt = 1e-5
        pts = flow.track(cam, scene, dt)
        numeric = (pts.current - pts.previous) / dt
        analytic = np.array([flow.flow_at_point(cam, scene, p) for p in pts.previous])
        np.testing.assert_allclose(numeric, analytic, atol=1e-3)

    def test_static_camera_keeps_points(self):
        scene = PlanarScene.scatter(2.0, 10, seed=0)
        pts = flow.track(CameraState(), scene, 0.01)
        np.testing.assert_array_equal(pts.previous, pts.current)


class TestSizeDivergence:
    def test_expanding_pair_is_negative(self):
        assert flow.size_divergence([[0, 0], [1, 0]], [[0, 0], [1.1, 0]], 0.1) == pytest.approx(-1.0)

    def test_zero_baseline_rejected(self):
        with pytest.raises(DomainError):
            flow.size_divergence([[0, 0], [0, 0]], [[0, 0], [1, 0]], 0.1)

    def test_needs_two_points(self):
        with pytest.raises(DomainError):
            TrackedPointSet([[0, 0]], [[0, 0]], 0.1)

    def test_length_mismatch_rejected(self):
        with pytest.raises(DomainError):
            TrackedPointSet([[0, 0], [1, 1]], [[0, 0]], 0.1)

    def test_static_scene_gives_exact_zero(self):
        pts = flow.track(CameraState(), PlanarScene.scatter(2.0, 30, seed=1), 0.005)
        assert flow.size_to_divergence(flow.estimate_divergence(pts)) == 0.0

    @pytest.mark.parametrize("n,expected", [(2, 1), (14, 91), (15, 100), (150, 100)])
    def test_pair_cap(self, n, expected):
        pairs = flow.select_pairs(n)
        assert len(pairs) == expected
        assert len({tuple(p) for p in pairs}) == expected
        assert np.all(pairs[:, 0] < pairs[:, 1])

    def test_pair_selection_is_seeded(self):
        np.testing.assert_array_equal(flow.select_pairs(150, seed=3), flow.select_pairs(150, seed=3))
        assert not np.array_equal(flow.select_pairs(150, seed=3), flow.select_pairs(150, seed=4))

    def test_descent_estimate_converges_linearly_in_dt(self):
        scene = PlanarScene.scatter(4.0, 60, seed=0)
        cam = CameraState(velocity=(0.0, 0.0, 2.0))
        err = []
        for dt in (0.01, 0.005, 0.0025):
            d_hat = flow.size_to_divergence(flow.estimate_divergence(flow.track(cam, scene, dt)))
            err.append(d_hat - 1.0)
        assert err[0] / err[1] == pytest.approx(2.0, rel=0.05)
        assert err[1] / err[2] == pytest.approx(2.0, rel=0.05)
