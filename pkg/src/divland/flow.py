"""Synthetic optical-flow geometry for a downward-looking pinhole camera.

Image coordinates are non-dimensional (``x = X_C / Z_C``, ``y = Y_C / Z_C``).
A :class:`PlanarScene` stores its feature points in the world frame, which is
taken to coincide with the camera frame at the instant the scene was defined;
the plane parameters ``z0, zx, zy`` are expressed in that frame.

Divergence sign convention
--------------------------
The size-divergence estimator returns ``(l_prev - l_curr) / (l_prev * dt)``,
which is *negative* while the image expands (camera approaching the scene).
The rest of the package uses a divergence that is *positive* during descent,
``D = 2 * W_C / Z_0``.  :func:`size_to_divergence` converts between the two:
the relative change of a 1-D distance measures the scaled velocity
``W_C / Z_0``, while the flow-field divergence sums the expansion along both
image axes, hence the factor ``-2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from divland.errors import DomainError

MAX_PAIRS = 100


@dataclass(frozen=True)
class CameraState:
    """Pose and motion of the camera.

    Velocities are expressed in the camera frame; ``W`` is positive along the
    optical axis, i.e. towards the ground for a downward-looking camera.
    """

    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    attitude: tuple[float, float, float] = (0.0, 0.0, 0.0)  # roll, pitch, yaw
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)  # U_C, V_C, W_C
    rates: tuple[float, float, float] = (0.0, 0.0, 0.0)  # p, q, r

    def rotation(self) -> Rotation:
        """Camera-to-world rotation."""
        roll, pitch, yaw = self.attitude
        return Rotation.from_euler("ZYX", [yaw, pitch, roll])


@dataclass(frozen=True)
class PlanarScene:
    z0: float
    zx: float = 0.0
    zy: float = 0.0
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        if self.z0 <= 0:
            raise DomainError(f"z0 must be positive, got {self.z0}")
        resid = pts[:, 2] - (self.z0 + self.zx * pts[:, 0] + self.zy * pts[:, 1])
        if pts.size and np.max(np.abs(resid)) > 1e-9:
            raise DomainError("feature points do not lie on the plane")

    @classmethod
    def scatter(
        cls,
        z0: float,
        n_points: int,
        *,
        zx: float = 0.0,
        zy: float = 0.0,
        half_fov: float = 0.5,
        seed: int | None = 0,
    ) -> "PlanarScene":
        """Place ``n_points`` on the plane, uniformly over the image window.

        ``half_fov`` bounds ``|x|`` and ``|y|`` of the back-projected pixels.
        """
        rng = np.random.default_rng(seed)
        xy = rng.uniform(-half_fov, half_fov, size=(n_points, 2))
        denom = 1.0 - zx * xy[:, 0] - zy * xy[:, 1]
        if np.any(denom <= 0):
            raise DomainError("plane is not in front of the camera over the window")
        z = z0 / denom
        pts = np.column_stack([xy[:, 0] * z, xy[:, 1] * z, z])
        return cls(z0=z0, zx=zx, zy=zy, points=pts)


@dataclass(frozen=True)
class FlowObservables:
    omega_x: float
    omega_y: float
    theta_x: float
    theta_y: float
    theta_z: float
    divergence: float


@dataclass(frozen=True)
class TrackedPointSet:
    previous: np.ndarray
    current: np.ndarray
    dt: float

    def __post_init__(self):
        prev = np.asarray(self.previous, dtype=float).reshape(-1, 2)
        curr = np.asarray(self.current, dtype=float).reshape(-1, 2)
        if prev.shape != curr.shape:
            raise DomainError("previous and current point lists differ in length")
        if len(prev) < 2:
            raise DomainError("at least two tracked points are required")
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "previous", prev)
        object.__setattr__(self, "current", curr)


def depth_at_pixel(scene: PlanarScene, pt) -> float:
    """Scene depth along the ray through ``pt`` for the planar model."""
    x, y = pt
    denom = 1.0 - scene.zx * x - scene.zy * y
    if denom <= 0:
        raise DomainError(f"ray through {pt} does not hit the plane in front of the camera")
    return scene.z0 / denom


def rotational_flow(pt, rates) -> tuple[float, float]:
    x, y = pt
    p, q, r = rates
    return (-q + r * y + p * x * y - q * x * x, p - r * x - q * x * y + p * y * y)


def flow_at_point(cam: CameraState, scene: PlanarScene, pt) -> tuple[float, float]:
    """Full optical flow ``(u, v)`` at image point ``pt``."""
    x, y = pt
    z = depth_at_pixel(scene, pt)
    uc, vc, wc = cam.velocity
    ur, vr = rotational_flow(pt, cam.rates)
    return (-uc / z + wc / z * x + ur, -vc / z + wc / z * y + vr)


def derotate(flow, pt, rates) -> tuple[float, float]:
    """Remove the depth-independent rotational component of ``flow``."""
    ur, vr = rotational_flow(pt, rates)
    return (flow[0] - ur, flow[1] - vr)


def observables(cam: CameraState, scene: PlanarScene) -> FlowObservables:
    uc, vc, wc = cam.velocity
    tx, ty, tz = uc / scene.z0, vc / scene.z0, wc / scene.z0
    return FlowObservables(-tx, -ty, tx, ty, tz, 2.0 * tz)


def translational_flow(cam: CameraState, scene: PlanarScene, pt) -> tuple[float, float]:
    """Translational flow written in scaled velocities and plane slopes."""
    x, y = pt
    obs = observables(cam, scene)
    scale = 1.0 - scene.zx * x - scene.zy * y
    return ((-obs.theta_x + obs.theta_z * x) * scale, (-obs.theta_y + obs.theta_z * y) * scale)


def project(points: np.ndarray, cam: CameraState) -> np.ndarray:
    """Project world points into the image of ``cam``; returns ``(n, 2)``."""
    rel = np.asarray(points, dtype=float) - np.asarray(cam.position)
    pc = cam.rotation().inv().apply(rel)
    if np.any(pc[:, 2] <= 0):
        raise DomainError("point behind the camera")
    return pc[:, :2] / pc[:, 2:3]


def advance(cam: CameraState, dt: float) -> CameraState:
    """Move the camera for ``dt`` seconds at constant body velocity and rates."""
    rot = cam.rotation()
    pos = np.asarray(cam.position) + rot.apply(np.asarray(cam.velocity, dtype=float) * dt)
    new_rot = rot * Rotation.from_rotvec(np.asarray(cam.rates, dtype=float) * dt)
    yaw, pitch, roll = new_rot.as_euler("ZYX")
    return CameraState(
        position=tuple(pos),
        attitude=(roll, pitch, yaw),
        velocity=cam.velocity,
        rates=cam.rates,
    )


def track(cam: CameraState, scene: PlanarScene, dt: float) -> TrackedPointSet:
    """Noiseless image positions of the scene points at ``t`` and ``t + dt``."""
    return TrackedPointSet(project(scene.points, cam), project(scene.points, advance(cam, dt)), dt)


def size_divergence(previous, current, dt: float) -> float:
    """Relative shrink rate of the distance between two points.

    ``previous`` and ``current`` each hold the two points, shape ``(2, 2)``.
    """
    prev = np.asarray(previous, dtype=float)
    curr = np.asarray(current, dtype=float)
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    l_prev = float(np.hypot(*(prev[0] - prev[1])))
    l_curr = float(np.hypot(*(curr[0] - curr[1])))
    if l_prev == 0.0:
        raise DomainError("zero baseline distance between the tracked points")
    return (l_prev - l_curr) / (l_prev * dt)


def select_pairs(n_points: int, seed: int | None = 0, max_pairs: int = MAX_PAIRS) -> np.ndarray:
    """Index pairs ``(i, j), i < j`` used by :func:`estimate_divergence`.

    All pairs are used when there are at most ``max_pairs`` of them; otherwise
    ``max_pairs`` distinct pairs are drawn without replacement.
    """
    if n_points < 2:
        raise DomainError("at least two points are required")
    i, j = np.triu_indices(n_points, k=1)
    if len(i) > max_pairs:
        pick = np.sort(np.random.default_rng(seed).choice(len(i), size=max_pairs, replace=False))
        i, j = i[pick], j[pick]
    return np.column_stack([i, j])


def pair_divergences(pts: TrackedPointSet, pairs: np.ndarray) -> np.ndarray:
    i, j = pairs[:, 0], pairs[:, 1]
    l_prev = np.hypot(*(pts.previous[i] - pts.previous[j]).T)
    l_curr = np.hypot(*(pts.current[i] - pts.current[j]).T)
    if np.any(l_prev == 0.0):
        raise DomainError("zero baseline distance between tracked points")
    return (l_prev - l_curr) / (l_prev * pts.dt)


def estimate_divergence(pts: TrackedPointSet, seed: int | None = 0, max_pairs: int = MAX_PAIRS) -> float:
    """Mean size divergence over (at most ``max_pairs``) point pairs."""
    pairs = select_pairs(len(pts.previous), seed, max_pairs)
    return float(np.mean(pair_divergences(pts, pairs)))


def size_to_divergence(d_hat: float) -> float:
    """Convert a size-divergence estimate to the descent-positive flow divergence."""
    return 0.0 - 2.0 * d_hat
