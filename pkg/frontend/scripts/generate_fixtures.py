"""Shared client/server test fixtures.

Writes JSON consumed by the frontend unit tests:
  * label-edit cases with the server's own expected outputs, so the client
    semantics can be compared byte for byte;
  * lasso cases with expected selections from an independent CPU oracle
    (shapely point-in-polygon + a numpy depth grid).
"""

import json
import sys
from pathlib import Path

import numpy as np
from shapely.geometry import Point, Polygon

from garmseg.heuristics import majority_vote, relabel
from garmseg.taxonomy import NUM_CLASSES


def label_cases(rng):
    cases = []
    for case_id in range(12):
        n = int(rng.integers(10, 120))
        labels = rng.integers(0, NUM_CLASSES, size=n)
        sel_size = int(rng.integers(1, n))
        selection = np.sort(rng.choice(n, size=sel_size, replace=False))
        class_id = int(rng.integers(0, NUM_CLASSES))
        cases.append({
            "id": case_id,
            "labels": labels.tolist(),
            "selection": selection.tolist(),
            "class_id": class_id,
            "expected_relabel": relabel(labels, selection, class_id,
                                        NUM_CLASSES).tolist(),
            "expected_majority": majority_vote(labels, selection,
                                               NUM_CLASSES).tolist(),
        })
    # explicit tie case: two classes with equal counts -> lowest id wins
    labels = np.array([7, 17, 7, 17, 3], dtype=np.int64)
    cases.append({
        "id": len(cases),
        "labels": labels.tolist(),
        "selection": [0, 1, 2, 3],
        "class_id": 0,
        "expected_relabel": relabel(labels, [0, 1, 2, 3], 0,
                                    NUM_CLASSES).tolist(),
        "expected_majority": majority_vote(labels, [0, 1, 2, 3],
                                           NUM_CLASSES).tolist(),
    })
    return cases


def _project(points, camera, width, height):
    """Pinhole projection per the lasso contract; oracle-side copy."""
    eye = np.asarray(camera["eye"], dtype=np.float64)
    target = np.asarray(camera["target"], dtype=np.float64)
    up = np.asarray(camera["up"], dtype=np.float64)
    forward = target - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    true_up = np.cross(right, forward)
    rel = points - eye
    x = rel @ right
    y = rel @ true_up
    z = rel @ forward
    focal = 1.0 / np.tan(np.radians(camera["fovYDegrees"]) / 2.0)
    aspect = width / height
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = ((focal / aspect) * (x / z) + 1.0) / 2.0 * width
        sy = (1.0 - focal * (y / z)) / 2.0 * height
    return sx, sy, z


def lasso_oracle(points, polygon, camera, width, height, grid_size,
                 tolerance):
    sx, sy, depth = _project(points, camera, width, height)
    near = camera["near"]
    on_screen = (depth > near) & (sx >= 0) & (sx < width) & (sy >= 0) \
        & (sy < height)
    cell_x = np.minimum(grid_size - 1,
                        (sx / width * grid_size).astype(np.int64))
    cell_y = np.minimum(grid_size - 1,
                        (sy / height * grid_size).astype(np.int64))
    grid = np.full((grid_size, grid_size), np.inf)
    for i in np.flatnonzero(on_screen):
        cy, cx = cell_y[i], cell_x[i]
        grid[cy, cx] = min(grid[cy, cx], depth[i])
    poly = Polygon(np.asarray(polygon).reshape(-1, 2))
    selected = []
    for i in np.flatnonzero(on_screen):
        if depth[i] > grid[cell_y[i], cell_x[i]] + tolerance:
            continue
        if poly.contains(Point(sx[i], sy[i])):
            selected.append(int(i))
    return selected


def lasso_cases(rng):
    width, height, grid_size, tolerance = 640, 480, 48, 0.05
    camera = {"eye": [0.0, 1.0, 2.6], "target": [0.0, 0.9, 0.0],
              "up": [0.0, 1.0, 0.0], "fovYDegrees": 45.0, "near": 0.01}
    import garmseg as g

    cases = []
    for case_id in range(10):
        scan = g.generate(g.SynthConfig(
            seed=900 + case_id, n_points=120,
            garments=("T-shirt", "Pants", "Hair")))
        points = scan.points
        # random star-ish polygon around a random screen anchor
        cx = float(rng.uniform(0.25, 0.75) * width)
        cy = float(rng.uniform(0.25, 0.75) * height)
        k = int(rng.integers(3, 9))
        angles = np.sort(rng.uniform(0, 2 * np.pi, size=k))
        radii = rng.uniform(40, 200, size=k)
        polygon = []
        for angle, radius in zip(angles, radii):
            polygon += [cx + radius * np.cos(angle),
                        cy + radius * np.sin(angle)]
        expected = lasso_oracle(points, polygon, camera, width, height,
                                grid_size, tolerance)
        cases.append({
            "id": case_id,
            "points": np.round(points, 10).ravel().tolist(),
            "polygon": [round(v, 6) for v in polygon],
            "camera": camera,
            "viewport": {"width": width, "height": height},
            "depth_test": {"gridSize": grid_size,
                           "depthTolerance": tolerance},
            "expected": expected,
        })
    # degenerate polygon and empty-space polygon
    scan = g.generate(g.SynthConfig(seed=950, n_points=80,
                                    garments=("T-shirt", "Pants", "Hair")))
    cases.append({
        "id": len(cases),
        "points": scan.points.ravel().tolist(),
        "polygon": [10.0, 10.0, 20.0, 20.0],
        "camera": camera,
        "viewport": {"width": width, "height": height},
        "depth_test": {"gridSize": grid_size, "depthTolerance": tolerance},
        "expected": [],
    })
    cases.append({
        "id": len(cases),
        "points": scan.points.ravel().tolist(),
        "polygon": [2.0, 2.0, 12.0, 2.0, 12.0, 12.0],  # empty corner
        "camera": camera,
        "viewport": {"width": width, "height": height},
        "depth_test": {"gridSize": grid_size, "depthTolerance": tolerance},
        "expected": lasso_oracle(scan.points,
                                 [2.0, 2.0, 12.0, 2.0, 12.0, 12.0],
                                 camera, width, height, grid_size, tolerance),
    })
    whole = [-1.0, -1.0, width + 1.0, -1.0, width + 1.0, height + 1.0,
             -1.0, height + 1.0]
    cases.append({
        "id": len(cases),
        "points": scan.points.ravel().tolist(),
        "polygon": whole,  # whole viewport: exactly the visible points
        "camera": camera,
        "viewport": {"width": width, "height": height},
        "depth_test": {"gridSize": grid_size, "depthTolerance": tolerance},
        "expected": lasso_oracle(scan.points, whole, camera, width, height,
                                 grid_size, tolerance),
    })
    return cases


def main(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(2024)
    (out / "label_cases.json").write_text(json.dumps(label_cases(rng)))
    (out / "lasso_cases.json").write_text(json.dumps(lasso_cases(rng)))
    print(f"fixtures written to {out}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "fixtures")
