/** Pure viewport math for the 2D scatter: fitting, pan, zoom, hit-testing. */

import type { MapPoint } from "./types.js";

export interface Viewport {
  scale: number;     // pixels per data unit
  offsetX: number;   // pixel position of data origin
  offsetY: number;
}

export function fitViewport(points: { x: number; y: number }[],
                            widthPx: number, heightPx: number,
                            marginPx = 24): Viewport {
  if (points.length === 0) {
    return { scale: 1, offsetX: widthPx / 2, offsetY: heightPx / 2 };
  }
  const xs = points.map((p) => p.x);
  const ys = points.map((p) => p.y);
  const minX = Math.min(...xs);
  const maxX = Math.max(...xs);
  const minY = Math.min(...ys);
  const maxY = Math.max(...ys);
  const spanX = Math.max(maxX - minX, 1e-9);
  const spanY = Math.max(maxY - minY, 1e-9);
  const scale = Math.min((widthPx - 2 * marginPx) / spanX,
                         (heightPx - 2 * marginPx) / spanY);
  const cx = (minX + maxX) / 2;
  const cy = (minY + maxY) / 2;
  return {
    scale,
    offsetX: widthPx / 2 - cx * scale,
    offsetY: heightPx / 2 + cy * scale,
  };
}

/** Data coordinates to pixels; y grows upward in data space. */
export function toPixel(vp: Viewport, x: number, y: number): [number, number] {
  return [vp.offsetX + x * vp.scale, vp.offsetY - y * vp.scale];
}

export function panBy(vp: Viewport, dxPx: number, dyPx: number): Viewport {
  return { ...vp, offsetX: vp.offsetX + dxPx, offsetY: vp.offsetY + dyPx };
}

/** Zoom about a pixel anchor so the data point under the cursor stays put. */
export function zoomAt(vp: Viewport, anchorX: number, anchorY: number,
                       factor: number): Viewport {
  const scale = Math.min(Math.max(vp.scale * factor, 1e-6), 1e9);
  const ratio = scale / vp.scale;
  return {
    scale,
    offsetX: anchorX - (anchorX - vp.offsetX) * ratio,
    offsetY: anchorY - (anchorY - vp.offsetY) * ratio,
  };
}

/** Nearest point within radiusPx of the cursor, or null. */
export function hitTest(points: MapPoint[], vp: Viewport,
                        px: number, py: number, radiusPx = 8): MapPoint | null {
  let best: MapPoint | null = null;
  let bestD2 = radiusPx * radiusPx;
  for (const point of points) {
    const [sx, sy] = toPixel(vp, point.x, point.y);
    const d2 = (sx - px) * (sx - px) + (sy - py) * (sy - py);
    if (d2 <= bestD2) {
      bestD2 = d2;
      best = point;
    }
  }
  return best;
}

const PALETTE = [
  "#4269d0", "#efb118", "#ff725c", "#6cc5b0", "#3ca951",
  "#ff8ab7", "#a463f2", "#97bbf5", "#9c6b4e", "#9498a0",
];

export function classColor(classLabel: number | null): string {
  if (classLabel === null) {
    return "#555555";
  }
  return PALETTE[classLabel % PALETTE.length];
}

export function legendEntries(points: MapPoint[]): { label: number; color: string }[] {
  const labels = new Set<number>();
  for (const p of points) {
    if (p.class_label !== null) {
      labels.add(p.class_label);
    }
  }
  return [...labels].sort((a, b) => a - b)
    .map((label) => ({ label, color: classColor(label) }));
}
