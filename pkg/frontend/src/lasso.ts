/**
 * Polygon ("lasso") selection in screen space with depth occlusion.
 *
 * The contract shared with the CPU oracle in the test fixtures:
 *  - points project through a standard lookAt + perspective pinhole camera;
 *  - a depth grid of `gridSize` x `gridSize` cells keeps the nearest
 *    view-space depth per cell; a point is visible when its depth is within
 *    `depthTolerance` of its cell's minimum;
 *  - a point is selected when it is in front of the camera, visible, and
 *    its screen projection lies inside the polygon (even-odd rule).
 */

export interface CameraPose {
  eye: [number, number, number];
  target: [number, number, number];
  up: [number, number, number];
  fovYDegrees: number;
  near: number;
}

export interface Viewport {
  width: number;
  height: number;
}

export interface DepthTestOptions {
  gridSize: number;
  depthTolerance: number;
}

export const DEFAULT_DEPTH_TEST: DepthTestOptions = {
  gridSize: 48,
  depthTolerance: 0.05,
};

type Vec3 = [number, number, number];

function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function dot(a: Vec3, b: Vec3): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

function normalize(a: Vec3): Vec3 {
  const n = Math.hypot(a[0], a[1], a[2]);
  return [a[0] / n, a[1] / n, a[2] / n];
}

/** Screen positions plus view-space depth for every point. */
export function projectPoints(
  points: Float64Array, // flat xyz
  camera: CameraPose,
  viewport: Viewport,
): { screen: Float64Array; depth: Float64Array } {
  const forward = normalize(sub(camera.target, camera.eye));
  const right = normalize(cross(forward, camera.up));
  const trueUp = cross(right, forward);
  const fov = (camera.fovYDegrees * Math.PI) / 180;
  const focal = 1 / Math.tan(fov / 2);
  const aspect = viewport.width / viewport.height;

  const n = points.length / 3;
  const screen = new Float64Array(n * 2);
  const depth = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    const p: Vec3 = [points[3 * i], points[3 * i + 1], points[3 * i + 2]];
    const rel = sub(p, camera.eye);
    const x = dot(rel, right);
    const y = dot(rel, trueUp);
    const z = dot(rel, forward); // positive in front of the camera
    depth[i] = z;
    if (z <= camera.near) {
      screen[2 * i] = Number.NaN;
      screen[2 * i + 1] = Number.NaN;
      continue;
    }
    const ndcX = (focal / aspect) * (x / z);
    const ndcY = focal * (y / z);
    screen[2 * i] = ((ndcX + 1) / 2) * viewport.width;
    screen[2 * i + 1] = ((1 - ndcY) / 2) * viewport.height;
  }
  return { screen, depth };
}

/** Even-odd rule point-in-polygon on screen coordinates. */
export function pointInPolygon(
  x: number,
  y: number,
  polygon: ArrayLike<number>, // flat x,y vertex list
): boolean {
  const count = polygon.length / 2;
  let inside = false;
  for (let i = 0, j = count - 1; i < count; j = i++) {
    const xi = polygon[2 * i];
    const yi = polygon[2 * i + 1];
    const xj = polygon[2 * j];
    const yj = polygon[2 * j + 1];
    const crosses =
      yi > y !== yj > y &&
      x < ((xj - xi) * (y - yi)) / (yj - yi) + xi;
    if (crosses) inside = !inside;
  }
  return inside;
}

/** Nearest depth per grid cell; NaN screen positions are skipped. */
export function buildDepthGrid(
  screen: Float64Array,
  depth: Float64Array,
  viewport: Viewport,
  options: DepthTestOptions,
): Float64Array {
  const grid = new Float64Array(options.gridSize * options.gridSize).fill(
    Number.POSITIVE_INFINITY,
  );
  for (let i = 0; i < depth.length; i++) {
    const sx = screen[2 * i];
    const sy = screen[2 * i + 1];
    if (Number.isNaN(sx)) continue;
    if (sx < 0 || sx >= viewport.width || sy < 0 || sy >= viewport.height) {
      continue;
    }
    const cx = Math.min(
      options.gridSize - 1,
      Math.floor((sx / viewport.width) * options.gridSize),
    );
    const cy = Math.min(
      options.gridSize - 1,
      Math.floor((sy / viewport.height) * options.gridSize),
    );
    const cell = cy * options.gridSize + cx;
    if (depth[i] < grid[cell]) grid[cell] = depth[i];
  }
  return grid;
}

/**
 * Indices of points inside the polygon that survive the depth test.
 * Degenerate polygons (< 3 vertices) select nothing.
 */
export function lassoSelect(
  points: Float64Array,
  polygon: ArrayLike<number>,
  camera: CameraPose,
  viewport: Viewport,
  options: DepthTestOptions = DEFAULT_DEPTH_TEST,
): number[] {
  if (polygon.length < 6) return [];
  const { screen, depth } = projectPoints(points, camera, viewport);
  const grid = buildDepthGrid(screen, depth, viewport, options);
  const selected: number[] = [];
  for (let i = 0; i < depth.length; i++) {
    const sx = screen[2 * i];
    const sy = screen[2 * i + 1];
    if (Number.isNaN(sx)) continue;
    if (sx < 0 || sx >= viewport.width || sy < 0 || sy >= viewport.height) {
      continue;
    }
    const cx = Math.min(
      options.gridSize - 1,
      Math.floor((sx / viewport.width) * options.gridSize),
    );
    const cy = Math.min(
      options.gridSize - 1,
      Math.floor((sy / viewport.height) * options.gridSize),
    );
    const nearest = grid[cy * options.gridSize + cx];
    if (depth[i] > nearest + options.depthTolerance) continue;
    if (pointInPolygon(sx, sy, polygon)) selected.push(i);
  }
  return selected;
}
