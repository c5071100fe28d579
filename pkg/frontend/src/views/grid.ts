/** Neighbor grid: the current query highlighted, then top-k results in
 * service order, each a click target for the next query. */

import { ApiClient } from "../api.js";
import { parsePgm, pgmToRgba } from "../pgm.js";
import type { QueryRef } from "../session.js";
import type { QueryResponse } from "../types.js";
import { resultRows } from "../viewmodel.js";

export async function drawThumbnail(api: ApiClient, canvas: HTMLCanvasElement,
                                    thumbnailPath: string): Promise<void> {
  const res = await fetch(api.imageUrl(thumbnailPath));
  if (!res.ok) {
    return;
  }
  const img = parsePgm(new Uint8Array(await res.arrayBuffer()));
  canvas.width = img.width;
  canvas.height = img.height;
  const ctx = canvas.getContext("2d");
  if (!ctx) {
    return;
  }
  ctx.putImageData(new ImageData(pgmToRgba(img), img.width, img.height), 0, 0);
}

export function describeQuery(ref: QueryRef | null): string {
  if (!ref) {
    return "no query yet";
  }
  switch (ref.kind) {
    case "id":
      return ref.id;
    case "upload":
      return `upload: ${ref.label}`;
    case "keyword":
      return `keyword: ${ref.keyword}`;
  }
}

export function renderGrid(
  container: HTMLElement,
  api: ApiClient,
  current: QueryRef | null,
  response: QueryResponse | null,
  onResultClick: (id: string) => void,
): void {
  container.replaceChildren();
  const header = document.createElement("div");
  header.className = "query-box";
  header.textContent = `query: ${describeQuery(current)}`;
  container.appendChild(header);
  if (current?.kind === "id") {
    const canvas = document.createElement("canvas");
    canvas.className = "thumb query-thumb";
    header.appendChild(canvas);
    void drawThumbnail(api, canvas, `/image/${current.id}`);
  }
  if (!response) {
    return;
  }
  const grid = document.createElement("div");
  grid.className = "grid";
  container.appendChild(grid);
  for (const row of resultRows(response)) {
    const cell = document.createElement("div");
    cell.className = "cell";
    cell.dataset.figureId = row.id;
    const canvas = document.createElement("canvas");
    canvas.className = "thumb";
    const caption = document.createElement("div");
    caption.className = "caption";
    caption.textContent =
      `${row.id}  sim ${row.similarityText}  class ${row.classText}`;
    cell.append(canvas, caption);
    cell.addEventListener("click", () => onResultClick(row.id));
    grid.appendChild(cell);
    void drawThumbnail(api, canvas, row.thumbnail);
  }
}
