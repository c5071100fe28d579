/** Score panel: captured groups with per-figure mark toggles, submission to
 * the service, and the returned S scores plus ANOVA p-value. */

import { AppController } from "../controller.js";
import { pValueText, scoreText } from "../viewmodel.js";

export function renderBasket(container: HTMLElement,
                             controller: AppController): void {
  container.replaceChildren();
  const state = controller.state;

  const capture = document.createElement("div");
  capture.className = "capture-row";
  const nameInput = document.createElement("input");
  nameInput.placeholder = "group name (e.g. A)";
  const captureBtn = document.createElement("button");
  captureBtn.textContent = "capture current results as group";
  captureBtn.disabled = !controller.lastResponse
    || controller.lastResponse.results.length === 0;
  captureBtn.addEventListener("click", () => {
    const name = nameInput.value.trim() || `group-${state.baskets.size + 1}`;
    controller.captureResultsAsGroup(name);
  });
  capture.append(nameInput, captureBtn);
  container.appendChild(capture);

  for (const [name, group] of state.baskets) {
    const section = document.createElement("div");
    section.className = "basket-group";
    const title = document.createElement("h3");
    title.textContent =
      `${name} (${group.marked.size}/${group.figures.length} marked)`;
    const markAllBtn = document.createElement("button");
    markAllBtn.textContent = "mark all";
    markAllBtn.addEventListener("click", () => controller.markAll(name));
    title.appendChild(markAllBtn);
    section.appendChild(title);
    const list = document.createElement("div");
    list.className = "mark-list";
    for (const figureId of group.figures) {
      const item = document.createElement("label");
      const box = document.createElement("input");
      box.type = "checkbox";
      box.checked = group.marked.has(figureId);
      box.addEventListener("change", () => controller.toggleMark(name, figureId));
      item.append(box, ` ${figureId}`);
      list.appendChild(item);
    }
    section.appendChild(list);
    container.appendChild(section);
  }

  const submit = document.createElement("button");
  submit.className = "submit-marks";
  submit.textContent = "submit marks";
  submit.disabled = !controller.canSubmitMarks();
  submit.addEventListener("click", () => void controller.submitMarks());
  container.appendChild(submit);

  if (controller.lastMarks) {
    const out = document.createElement("div");
    out.className = "scores";
    const rows: string[] = [];
    for (const [name, score] of Object.entries(controller.lastMarks.scores)) {
      rows.push(`S(${name}) = ${scoreText(score)}`);
    }
    if (controller.lastMarks.anova) {
      rows.push(`ANOVA p = ${pValueText(controller.lastMarks.anova.p_value)}`);
    }
    out.textContent = rows.join("   ");
    container.appendChild(out);
  }
}
