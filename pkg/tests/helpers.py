"""Shared constructions for the tests."""

import numpy as np

# published multi-view recall row (percent) used by the averaging checks
MULTIVIEW_ROW = {"coca cola": 35.8, "coffee mate": 97.2, "honey bunches": 95.7, "hunts sauce": 74.3,
                 "mahatma rice": 90.5, "nature valley 1": 97.3, "nature valley 2": 99.2,
                 "palmolive orange": 79.2, "pop secret": 95.6, "pringles bbq": 89.9, "red bull": 89.0}


def plane_points(rng, normal, rho, n, half=1.0, sigma=0.0, center=None):
    normal = np.asarray(normal, dtype=np.float64)
    normal /= np.linalg.norm(normal)
    a = np.cross(normal, [1.0, 0, 0] if abs(normal[0]) < 0.9 else [0, 1.0, 0])
    a /= np.linalg.norm(a)
    b = np.cross(normal, a)
    c = rho * normal if center is None else np.asarray(center, dtype=np.float64)
    st = rng.uniform(-half, half, size=(n, 2))
    return c + st[:, :1] * a + st[:, 1:] * b + rng.normal(0, sigma, size=(n, 1)) * normal if sigma \
        else c + st[:, :1] * a + st[:, 1:] * b


def angle_deg(a, b):
    c = abs(float(np.dot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b)))
    return float(np.degrees(np.arccos(min(1.0, c))))


def random_plane_scene(seed, sigma=0.003):
    """2-4 planes with well separated normals, pieces kept apart so their
    patches do not intersect."""
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 5))
    normals = []
    while len(normals) < k:
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        if n[2] < 0:
            n = -n
        if all(angle_deg(n, m) > 30 for m in normals):
            normals.append(n)
    parts, truth = [], []
    for i, n in enumerate(normals):
        center = np.array([3.0 * i, 0.0, 0.0]) + rng.uniform(-0.2, 0.2, 3)
        rho = float(center @ n)
        count = int(rng.integers(1500, 4000))
        parts.append(plane_points(rng, n, rho, count, half=0.6, sigma=sigma, center=center))
        truth.append((n, rho, count))
    pts = np.concatenate(parts)
    return pts, truth


def blobs(rng, centers, n, spread):
    return np.concatenate([c + rng.normal(0, spread, size=(n, 3)) for c in centers])
