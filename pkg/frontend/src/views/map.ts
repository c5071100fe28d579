/** Pan/zoom scatter of the 2D embedding map; hovering previews the figure,
 * clicking a point makes it the current query. */

import { ApiClient } from "../api.js";
import {
  Viewport, classColor, fitViewport, hitTest, legendEntries, panBy, toPixel,
  zoomAt,
} from "../maptransform.js";
import { drawThumbnail } from "./grid.js";
import type { MapPoint } from "../types.js";

export class MapView {
  private viewport: Viewport = { scale: 1, offsetX: 0, offsetY: 0 };
  private points: MapPoint[] = [];
  private dragging = false;
  private lastX = 0;
  private lastY = 0;
  private hovered: MapPoint | null = null;

  constructor(
    private canvas: HTMLCanvasElement,
    private legend: HTMLElement,
    private tooltip: HTMLElement,
    private api: ApiClient,
    private onPointClick: (id: string) => void,
  ) {
    canvas.addEventListener("mousedown", (e) => {
      this.dragging = true;
      this.lastX = e.offsetX;
      this.lastY = e.offsetY;
    });
    canvas.addEventListener("mouseup", (e) => {
      this.dragging = false;
      const hit = hitTest(this.points, this.viewport, e.offsetX, e.offsetY);
      if (hit) {
        this.onPointClick(hit.id);
      }
    });
    canvas.addEventListener("mouseleave", () => {
      this.dragging = false;
      this.tooltip.style.display = "none";
    });
    canvas.addEventListener("mousemove", (e) => {
      if (this.dragging) {
        this.viewport = panBy(this.viewport, e.offsetX - this.lastX,
                              e.offsetY - this.lastY);
        this.lastX = e.offsetX;
        this.lastY = e.offsetY;
        this.draw();
        return;
      }
      this.updateHover(e.offsetX, e.offsetY);
    });
    canvas.addEventListener("wheel", (e) => {
      e.preventDefault();
      const factor = e.deltaY < 0 ? 1.15 : 1 / 1.15;
      this.viewport = zoomAt(this.viewport, e.offsetX, e.offsetY, factor);
      this.draw();
    }, { passive: false });
  }

  setPoints(points: MapPoint[]): void {
    this.points = points;
    this.viewport = fitViewport(points, this.canvas.width, this.canvas.height);
    this.renderLegend();
    this.draw();
  }

  get pointCount(): number {
    return this.points.length;
  }

  private renderLegend(): void {
    this.legend.replaceChildren();
    for (const entry of legendEntries(this.points)) {
      const item = document.createElement("span");
      item.className = "legend-item";
      const swatch = document.createElement("span");
      swatch.className = "swatch";
      swatch.style.backgroundColor = entry.color;
      item.append(swatch, ` class ${entry.label}`);
      this.legend.appendChild(item);
    }
  }

  private updateHover(px: number, py: number): void {
    const hit = hitTest(this.points, this.viewport, px, py);
    if (hit === this.hovered) {
      return;
    }
    this.hovered = hit;
    if (!hit) {
      this.tooltip.style.display = "none";
      this.draw();
      return;
    }
    this.tooltip.style.display = "block";
    this.tooltip.style.left = `${px + 14}px`;
    this.tooltip.style.top = `${py + 14}px`;
    this.tooltip.replaceChildren();
    const label = document.createElement("div");
    label.textContent = hit.id;
    const canvas = document.createElement("canvas");
    canvas.className = "thumb";
    this.tooltip.append(label, canvas);
    void drawThumbnail(this.api, canvas, `/image/${hit.id}`);
    this.draw();
  }

  draw(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) {
      return;
    }
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    for (const point of this.points) {
      const [x, y] = toPixel(this.viewport, point.x, point.y);
      ctx.beginPath();
      ctx.arc(x, y, point === this.hovered ? 6 : 3.2, 0, Math.PI * 2);
      ctx.fillStyle = classColor(point.class_label);
      ctx.fill();
      if (point === this.hovered) {
        ctx.strokeStyle = "#111";
        ctx.stroke();
      }
    }
  }
}
