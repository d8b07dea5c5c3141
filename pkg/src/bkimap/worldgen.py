"""Synthetic labeled worlds with an analytic ray-casting sensor.

The toy room is a 10.0 x 7.0 x 2.0 m space bounded by four walls on a ground
slab, with a few cylindrical obstacles placed by seeded randomness.  Classes:
0 free, 1 ground, 2 wall, 3 cylinder.  Scans are simulated by intersecting an
angular grid of rays against the primitives, with optional Gaussian noise
along the ray.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sensor import Pose, Scan

__all__ = [
    "Box",
    "Cylinder",
    "GroundTruthGrid",
    "RayGrid",
    "World",
    "CLASS_NAMES",
    "ground_truth_grid",
    "make_toy_world",
    "simulate_scan",
    "toy_sensor_path",
]

CLASS_NAMES = ("free", "ground", "wall", "cylinder")

_WALL_THICKNESS = 0.2
_GROUND_THICKNESS = 0.2


@dataclass(frozen=True)
class Box:
    """Axis-aligned labeled box."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    class_id: int

    def contains(self, points: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return np.all((points >= lo) & (points < hi), axis=-1)

    def ray_hits(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """First-intersection distance per ray (inf for misses); slab method."""
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t1 = (lo - origin) * inv
            t2 = (hi - origin) * inv
        near = np.nanmax(np.minimum(t1, t2), axis=-1)
        far = np.nanmin(np.maximum(t1, t2), axis=-1)
        t = np.where((near <= far) & (far > 0), np.maximum(near, 0.0), np.inf)
        # rays starting inside would "hit" at t=0; report the exit instead
        return np.where(t > 1e-12, t, np.inf)


@dataclass(frozen=True)
class Cylinder:
    """Vertical labeled cylinder with flat caps."""

    center: tuple[float, float]
    radius: float
    z0: float
    z1: float
    class_id: int

    def contains(self, points: np.ndarray) -> np.ndarray:
        dx = points[..., 0] - self.center[0]
        dy = points[..., 1] - self.center[1]
        inside_xy = dx * dx + dy * dy < self.radius * self.radius
        return inside_xy & (points[..., 2] >= self.z0) & (points[..., 2] < self.z1)

    def ray_hits(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        ox = origin[0] - self.center[0]
        oy = origin[1] - self.center[1]
        dx, dy, dz = dirs[..., 0], dirs[..., 1], dirs[..., 2]
        best = np.full(dirs.shape[:-1], np.inf)

        # lateral surface: quadratic in t for the xy-projection
        a = dx * dx + dy * dy
        b = 2.0 * (ox * dx + oy * dy)
        c = ox * ox + oy * oy - self.radius * self.radius
        disc = b * b - 4.0 * a * c
        with np.errstate(divide="ignore", invalid="ignore"):
            sq = np.sqrt(np.maximum(disc, 0.0))
            for t in ((-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)):
                z = origin[2] + t * dz
                ok = (disc >= 0) & (a > 0) & (t > 1e-12) & (z >= self.z0) & (z <= self.z1)
                best = np.where(ok & (t < best), t, best)

            # caps
            for z_cap in (self.z0, self.z1):
                t = (z_cap - origin[2]) / dz
                px = ox + t * dx
                py = oy + t * dy
                ok = (t > 1e-12) & (px * px + py * py <= self.radius * self.radius)
                best = np.where(ok & (t < best), t, best)
        return best


@dataclass(frozen=True)
class World:
    """Bounded world of labeled primitives (first in the list wins overlaps)."""

    extents: tuple[float, float, float]
    primitives: tuple = field(default_factory=tuple)
    num_classes: int = 4

    def label_points(self, points: np.ndarray) -> np.ndarray:
        """Class of the primitive containing each point, else 0 (free)."""
        points = np.asarray(points, dtype=np.float64)
        labels = np.zeros(points.shape[:-1], dtype=np.int64)
        undecided = np.ones(points.shape[:-1], dtype=bool)
        for prim in self.primitives:
            hit = undecided & prim.contains(points)
            labels[hit] = prim.class_id
            undecided &= ~hit
        return labels

    def cast_rays(self, origin: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest intersection distance and class per ray (inf / 0 for misses)."""
        origin = np.asarray(origin, dtype=np.float64)
        dirs = np.asarray(dirs, dtype=np.float64)
        best_t = np.full(dirs.shape[:-1], np.inf)
        best_c = np.zeros(dirs.shape[:-1], dtype=np.int64)
        for prim in self.primitives:
            t = prim.ray_hits(origin, dirs)
            closer = t < best_t
            best_t = np.where(closer, t, best_t)
            best_c = np.where(closer, prim.class_id, best_c)
        return best_t, best_c

    def exit_distance(self, origin: np.ndarray, dirs: np.ndarray, margin: float = 0.3) -> np.ndarray:
        """Distance at which each ray leaves the (slightly inflated) extents."""
        lo = np.full(3, -margin)
        hi = np.asarray(self.extents) + margin
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / np.asarray(dirs, dtype=np.float64)
            t1 = (lo - origin) * inv
            t2 = (hi - origin) * inv
        return np.nanmin(np.maximum(t1, t2), axis=-1)


def make_toy_world(seed: int) -> World:
    """Seeded 10.0 x 7.0 x 2.0 m room: ground, four walls, 2-4 cylinders.

    Cylinders are rejection-sampled to avoid each other, the walls, and the
    standard sensor path, so the simulated sensor always moves in free space.
    Deterministic for a given seed.
    """
    ex, ey, ez = 10.0, 7.0, 2.0
    w = _WALL_THICKNESS
    g = _GROUND_THICKNESS
    prims: list = [
        Box((0.0, 0.0, 0.0), (w, ey, ez), 2),
        Box((ex - w, 0.0, 0.0), (ex, ey, ez), 2),
        Box((w, 0.0, 0.0), (ex - w, w, ez), 2),
        Box((w, ey - w, 0.0), (ex - w, ey, ez), 2),
        Box((w, w, 0.0), (ex - w, ey - w, g), 1),
    ]
    rng = np.random.default_rng(seed)
    count = int(rng.integers(2, 5))
    path_xy = np.array([[p.translation[0], p.translation[1]] for p in toy_sensor_path(64)])
    cylinders: list[Cylinder] = []
    attempts = 0
    while len(cylinders) < count and attempts < 1000:
        attempts += 1
        radius = float(rng.uniform(0.25, 0.45))
        cx = float(rng.uniform(w + radius + 0.4, ex - w - radius - 0.4))
        cy = float(rng.uniform(w + radius + 0.4, ey - w - radius - 0.4))
        height = float(rng.uniform(0.8, 1.6))
        if np.min(np.hypot(path_xy[:, 0] - cx, path_xy[:, 1] - cy)) < radius + 0.6:
            continue
        if any(np.hypot(c.center[0] - cx, c.center[1] - cy) < c.radius + radius + 0.5
               for c in cylinders):
            continue
        cylinders.append(Cylinder((cx, cy), radius, g, g + height, 3))
    prims.extend(cylinders)
    return World((ex, ey, ez), tuple(prims), num_classes=4)


def toy_sensor_path(num_poses: int, z: float = 1.2) -> list[Pose]:
    """Poses on an ellipse through the toy room, heading along the tangent."""
    cx, cy = 5.0, 3.5
    ax, ay = 3.1, 1.9
    angles = np.linspace(0.0, 2.0 * np.pi, num_poses, endpoint=False)
    poses = []
    for a in angles:
        x = cx + ax * np.cos(a)
        y = cy + ay * np.sin(a)
        yaw = np.arctan2(ay * np.cos(a), -ax * np.sin(a))
        poses.append(Pose.from_yaw((x, y, z), float(yaw)))
    return poses


@dataclass(frozen=True)
class RayGrid:
    """Angular grid of ray directions: full azimuth sweep, elevation fan."""

    azimuth_steps: int = 120
    elevation_steps: int = 30
    elevation_min: float = -1.2  # radians
    elevation_max: float = 0.6

    def directions(self) -> np.ndarray:
        """(azimuth_steps * elevation_steps, 3) unit vectors, sensor frame."""
        az = np.linspace(0.0, 2.0 * np.pi, self.azimuth_steps, endpoint=False)
        el = np.linspace(self.elevation_min, self.elevation_max, self.elevation_steps)
        az, el = np.meshgrid(az, el, indexing="ij")
        az, el = az.ravel(), el.ravel()
        return np.column_stack([
            np.cos(el) * np.cos(az),
            np.cos(el) * np.sin(az),
            np.sin(el),
        ])


def simulate_scan(
    world: World,
    sensor_pose: Pose,
    rays: RayGrid,
    max_range: float = 12.0,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> Scan:
    """Analytic scan of a world from a pose; deterministic for a given seed.

    Hit distances are perturbed along the ray by Gaussian noise truncated at
    six sigma; the label always stays the intersected primitive's class.
    Rays that hit nothing within max_range become free-only beams whose
    endpoint (labeled class 0) is placed where the ray leaves the world, so
    beams do not waste free samples outside the mapped region.
    """
    dirs_sensor = rays.directions()
    dirs_world = dirs_sensor @ sensor_pose.rotation_matrix().T
    origin = sensor_pose.translation
    t, cls = world.cast_rays(origin, dirs_world)

    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        noise = np.clip(rng.normal(0.0, noise_sigma, size=t.shape),
                        -6.0 * noise_sigma, 6.0 * noise_sigma)
        t = np.where(np.isfinite(t), np.maximum(t + noise, 0.05), t)

    miss = ~np.isfinite(t) | (t > max_range)
    t_exit = world.exit_distance(origin, dirs_world)
    t_miss = np.minimum(max_range, t_exit + 0.3)
    t = np.where(miss, t_miss, t)
    cls = np.where(miss, 0, cls)
    return Scan(origin=sensor_pose, positions=dirs_sensor * t[:, None], labels=cls)


@dataclass(frozen=True)
class GroundTruthGrid:
    """Dense cell labels of a world at a fixed resolution, origin at (0,0,0)."""

    resolution: float
    extents: tuple[float, float, float]
    labels: np.ndarray  # (nx, ny, nz) int

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.labels.shape

    def cell_lattice(self) -> np.ndarray:
        """(M, 3) integer cell coordinates of every cell."""
        nx, ny, nz = self.labels.shape
        gx, gy, gz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])

    def centroids(self) -> np.ndarray:
        return (self.cell_lattice() + 0.5) * self.resolution

    def flat_labels(self) -> np.ndarray:
        return self.labels.reshape(-1)


def ground_truth_grid(world: World, resolution: float) -> GroundTruthGrid:
    """Label every cell of the world's extents by its centroid's primitive."""
    if not resolution > 0:
        raise ValueError("resolution must be > 0")
    shape = tuple(int(round(e / resolution)) for e in world.extents)
    nx, ny, nz = shape
    gx, gy, gz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    centroids = (np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()]) + 0.5) * resolution
    labels = world.label_points(centroids).reshape(shape)
    return GroundTruthGrid(resolution, world.extents, labels)
