/** Perceptually uniform colormap for the attention overlay (viridis). */

const VIRIDIS_STOPS: [number, number, number][] = [
  [0.267, 0.005, 0.329],
  [0.283, 0.141, 0.458],
  [0.254, 0.265, 0.53],
  [0.207, 0.372, 0.553],
  [0.164, 0.471, 0.558],
  [0.128, 0.567, 0.551],
  [0.135, 0.659, 0.518],
  [0.267, 0.749, 0.441],
  [0.478, 0.821, 0.318],
  [0.741, 0.873, 0.15],
  [0.993, 0.906, 0.144],
];

/** value in [0,1] -> rgb in [0,1]. */
export function viridis(value: number): [number, number, number] {
  const t = Math.min(1, Math.max(0, value)) * (VIRIDIS_STOPS.length - 1);
  const lower = Math.floor(t);
  const upper = Math.min(VIRIDIS_STOPS.length - 1, lower + 1);
  const frac = t - lower;
  const a = VIRIDIS_STOPS[lower];
  const b = VIRIDIS_STOPS[upper];
  return [
    a[0] + (b[0] - a[0]) * frac,
    a[1] + (b[1] - a[1]) * frac,
    a[2] + (b[2] - a[2]) * frac,
  ];
}
