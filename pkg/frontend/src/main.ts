/** Single-page bootstrap: tabs for search, map, and scoring, all speaking
 * only the frozen service wire contract. */

import { ApiClient } from "./api.js";
import { AppController } from "./controller.js";
import { renderBasket } from "./views/basket.js";
import { renderGrid } from "./views/grid.js";
import { MapView } from "./views/map.js";

const SERVICE_URL =
  new URLSearchParams(location.search).get("service") ?? "http://127.0.0.1:8765";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

async function fileToBase64(file: File): Promise<string> {
  const buffer = new Uint8Array(await file.arrayBuffer());
  let binary = "";
  for (const byte of buffer) {
    binary += String.fromCharCode(byte);
  }
  return btoa(binary);
}

function main(): void {
  const api = new ApiClient(SERVICE_URL);
  const controller = new AppController(api);

  const banner = el<HTMLDivElement>("banner");
  const gridPane = el<HTMLDivElement>("grid-pane");
  const basketPane = el<HTMLDivElement>("basket-pane");
  const breadcrumbBar = el<HTMLDivElement>("breadcrumb");
  const statsBar = el<HTMLDivElement>("stats");
  const mapCanvas = el<HTMLCanvasElement>("map-canvas");
  const mapView = new MapView(
    mapCanvas, el("legend"), el("tooltip"), api,
    (id) => {
      void controller.clickResult(id);
      switchTab("search");
    });

  function renderBreadcrumb(): void {
    breadcrumbBar.replaceChildren();
    controller.state.breadcrumb.forEach((ref, i) => {
      const link = document.createElement("a");
      link.href = "#";
      link.textContent = ref.kind === "id" ? ref.id
        : ref.kind === "keyword" ? `kw:${ref.keyword}` : ref.label;
      link.addEventListener("click", (e) => {
        e.preventDefault();
        void controller.goBack(i);
      });
      breadcrumbBar.appendChild(link);
      breadcrumbBar.appendChild(document.createTextNode(" > "));
    });
  }

  controller.onChange = () => {
    banner.textContent = controller.staleSnapshot
      ? "index snapshot changed on the server: refresh to reload"
      : controller.banner ?? "";
    banner.style.display = banner.textContent ? "block" : "none";
    renderBreadcrumb();
    renderGrid(gridPane, api, controller.state.current,
               controller.lastResponse, (id) => void controller.clickResult(id));
    renderBasket(basketPane, controller);
  };

  el<HTMLButtonElement>("go-id").addEventListener("click", () => {
    const value = el<HTMLInputElement>("query-id").value.trim();
    if (value) {
      void controller.queryById(value);
    }
  });
  el<HTMLButtonElement>("go-keyword").addEventListener("click", () => {
    const value = el<HTMLInputElement>("query-keyword").value.trim();
    if (value) {
      void controller.queryKeyword(value);
    }
  });
  el<HTMLInputElement>("upload").addEventListener("change", async (e) => {
    const input = e.target as HTMLInputElement;
    const file = input.files?.[0];
    if (file) {
      void controller.queryUpload(file.name, await fileToBase64(file));
    }
  });
  const kSlider = el<HTMLInputElement>("k-slider");
  const kLabel = el<HTMLSpanElement>("k-label");
  kSlider.addEventListener("input", () => {
    controller.setK(Number(kSlider.value));
    kLabel.textContent = kSlider.value;
  });

  const tabs: Record<string, HTMLElement> = {
    search: el("tab-search"),
    map: el("tab-map"),
    score: el("tab-score"),
  };
  function switchTab(name: string): void {
    for (const [key, pane] of Object.entries(tabs)) {
      pane.style.display = key === name ? "block" : "none";
      el(`btn-${key}`).classList.toggle("active", key === name);
    }
  }
  for (const key of Object.keys(tabs)) {
    el(`btn-${key}`).addEventListener("click", () => switchTab(key));
  }
  switchTab("search");

  void api.stats().then((stats) => {
    statsBar.textContent =
      `${stats.count} figures indexed, dim ${stats.dim}, ` +
      `metric ${stats.metric}, snapshot ${stats.snapshot_version}`;
  }).catch((err) => {
    banner.textContent = `service unreachable at ${SERVICE_URL}: ${err.message}`;
    banner.style.display = "block";
  });

  void api.map().then((map) => {
    mapView.setPoints(map.points);
  }).catch(() => {
    el("map-empty").textContent =
      "no 2D map on the server yet: run the map pipeline step first";
  });
}

window.addEventListener("load", main);
