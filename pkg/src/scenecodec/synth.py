"""Deterministic synthetic street scenes for desk-scale training and tests.

One Philox stream keyed by the seed drives every draw, and components are
generated in a fixed order, so a seed fully determines the cloud. Class ids
follow the bundled 8-class table: ground strips for terrain, wall segments
for infrastructure, poles and trunks for objects, box cars for agents.
"""

from __future__ import annotations

import numpy as np

from .geometry import LabeledPointCloud
from .patching import counter_rng, mix64

# Fractions of the point budget per class (road absorbs rounding residue).
_BUDGET = {
    "road": 0.38,
    "sidewalk": 0.14,
    "other": 0.08,
    "building": 0.16,
    "fence": 0.05,
    "pole": 0.04,
    "trunk": 0.05,
    "vehicle": 0.10,
}

_CLASS_IDS = {
    "road": 0,
    "sidewalk": 1,
    "other": 2,
    "building": 3,
    "fence": 4,
    "pole": 5,
    "trunk": 6,
    "vehicle": 7,
}


def _ground(rng, n, x_lo, x_hi, y_lo, y_hi, z0, z_noise):
    pts = np.empty((n, 3))
    pts[:, 0] = rng.uniform(x_lo, x_hi, n)
    pts[:, 1] = rng.uniform(y_lo, y_hi, n)
    pts[:, 2] = z0 + rng.normal(0.0, z_noise, n)
    return pts


def _wall(rng, n, x0, x1, y, height, z0=0.0):
    pts = np.empty((n, 3))
    pts[:, 0] = rng.uniform(x0, x1, n)
    pts[:, 1] = y + rng.normal(0.0, 0.03, n)
    pts[:, 2] = z0 + rng.uniform(0.0, height, n)
    return pts


def _cylinder(rng, n, cx, cy, radius, height):
    ang = rng.uniform(0.0, 2.0 * np.pi, n)
    r = radius + rng.normal(0.0, 0.01, n)
    pts = np.empty((n, 3))
    pts[:, 0] = cx + r * np.cos(ang)
    pts[:, 1] = cy + r * np.sin(ang)
    pts[:, 2] = rng.uniform(0.0, height, n)
    return pts


def _box_shell(rng, n, center, size, yaw):
    """Points on the four sides and roof of a box (no underside)."""
    sx, sy, sz = size
    areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy])
    face = rng.choice(5, size=n, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, n)
    v = rng.uniform(-0.5, 0.5, n)
    local = np.empty((n, 3))
    for f, axis, sign in ((0, 0, -1), (1, 0, 1), (2, 1, -1), (3, 1, 1), (4, 2, 1)):
        sel = face == f
        if axis == 0:
            local[sel] = np.stack([np.full(sel.sum(), 0.5 * sign), u[sel], v[sel] + 0.5], axis=1)
        elif axis == 1:
            local[sel] = np.stack([u[sel], np.full(sel.sum(), 0.5 * sign), v[sel] + 0.5], axis=1)
        else:
            local[sel] = np.stack([u[sel], v[sel], np.full(sel.sum(), 1.0)], axis=1)
    local *= np.array([sx, sy, sz])
    c, s = np.cos(yaw), np.sin(yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + np.asarray(center)


def generate_scene(seed: int, n_points: int = 50_000, extent: float = 70.0) -> LabeledPointCloud:
    """A street scene with all four semantic layers populated."""
    if n_points < 400:
        raise ValueError(f"n_points too small to populate all layers: {n_points}")
    rng = counter_rng(mix64(seed, 0x5CE7E))
    half = extent / 2.0

    counts = {k: int(np.floor(f * n_points)) for k, f in _BUDGET.items()}
    counts["road"] += n_points - sum(counts.values())

    chunks: list[tuple[np.ndarray, int]] = []

    def emit(name, pts):
        chunks.append((pts, _CLASS_IDS[name]))

    emit("road", _ground(rng, counts["road"], -half, half, -7.0, 7.0, 0.0, 0.02))
    n_sw = counts["sidewalk"]
    emit("sidewalk", _ground(rng, n_sw // 2, -half, half, 7.5, 11.0, 0.12, 0.02))
    emit("sidewalk", _ground(rng, n_sw - n_sw // 2, -half, half, -11.0, -7.5, 0.12, 0.02))
    n_ot = counts["other"]
    emit("other", _ground(rng, n_ot // 2, -half, half, 11.5, 24.0, 0.05, 0.05))
    emit("other", _ground(rng, n_ot - n_ot // 2, -half, half, -24.0, -11.5, 0.05, 0.05))

    n_bld = max(1, min(6, counts["building"] // 600))
    per = np.full(n_bld, counts["building"] // n_bld)
    per[: counts["building"] % n_bld] += 1
    for i in range(n_bld):
        x0 = -half + 4.0 + i * (extent - 8.0) / n_bld
        side = 1.0 if i % 2 == 0 else -1.0
        emit(
            "building",
            _wall(rng, int(per[i]), x0, x0 + 12.0, side * rng.uniform(14.0, 18.0), rng.uniform(5.0, 8.0)),
        )

    n_fence = max(1, min(4, counts["fence"] // 150))
    per = np.full(n_fence, counts["fence"] // n_fence)
    per[: counts["fence"] % n_fence] += 1
    for i in range(n_fence):
        x0 = -half + 6.0 + i * (extent - 12.0) / n_fence
        side = -1.0 if i % 2 == 0 else 1.0
        emit("fence", _wall(rng, int(per[i]), x0, x0 + 9.0, side * 11.3, 1.4))

    n_pole = max(1, min(8, counts["pole"] // 60))
    per = np.full(n_pole, counts["pole"] // n_pole)
    per[: counts["pole"] % n_pole] += 1
    for i in range(n_pole):
        x = -half + 5.0 + i * (extent - 10.0) / n_pole
        side = 1.0 if i % 2 == 0 else -1.0
        emit("pole", _cylinder(rng, int(per[i]), x, side * 9.0, 0.08, rng.uniform(4.0, 6.0)))

    n_trunk = max(1, min(8, counts["trunk"] // 80))
    per = np.full(n_trunk, counts["trunk"] // n_trunk)
    per[: counts["trunk"] % n_trunk] += 1
    for i in range(n_trunk):
        x = -half + 8.0 + i * (extent - 16.0) / n_trunk
        side = -1.0 if i % 2 == 0 else 1.0
        emit("trunk", _cylinder(rng, int(per[i]), x, side * rng.uniform(13.0, 20.0), 0.25, rng.uniform(2.0, 4.0)))

    n_car = max(1, min(6, counts["vehicle"] // 150))
    per = np.full(n_car, counts["vehicle"] // n_car)
    per[: counts["vehicle"] % n_car] += 1
    for i in range(n_car):
        x = -half + 7.0 + i * (extent - 14.0) / n_car
        y = rng.uniform(-4.5, 4.5)
        emit(
            "vehicle",
            _box_shell(rng, int(per[i]), (x, y, 0.0), (4.2, 1.8, 1.5), rng.uniform(-0.3, 0.3)),
        )

    points = np.concatenate([c[0] for c in chunks])
    labels = np.concatenate([np.full(len(c[0]), c[1], dtype=np.int64) for c in chunks])
    return LabeledPointCloud(points, labels)
