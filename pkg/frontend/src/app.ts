/**
 * Browser entry point: wires the viewer, lasso drawing, the class picker,
 * edit buttons, and the refinement panel to the annotation service.
 */

import { AnnotationClient, TaxonomyInfo } from "./api.js";
import { SplatViewer } from "./viewer.js";
import { ViewState } from "./viewstate.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

export async function boot(baseUrl: string): Promise<void> {
  const client = new AnnotationClient(baseUrl);
  const state = new ViewState(client);
  const canvas = el<HTMLCanvasElement>("viewer");
  const viewer = new SplatViewer(canvas);
  const statusLine = el<HTMLDivElement>("status");
  const reportPanel = el<HTMLDivElement>("report");
  const refineButton = el<HTMLButtonElement>("refine");
  const taxonomy: TaxonomyInfo = await client.taxonomy();

  const classPicker = el<HTMLSelectElement>("class-picker");
  taxonomy.classes.forEach((name, index) => {
    const option = document.createElement("option");
    option.value = String(index);
    option.textContent = name;
    classPicker.appendChild(option);
  });
  classPicker.onchange = () => {
    state.activeClass = Number(classPicker.value);
  };

  let attentionScores: Float64Array | null = null;
  const overlayPicker = el<HTMLSelectElement>("overlay-picker");
  overlayPicker.onchange = async () => {
    state.overlay = overlayPicker.value as typeof state.overlay;
    if (state.overlay === "attention" && state.scanId) {
      const className = taxonomy.classes[state.activeClass];
      attentionScores = await client.attentionMap(state.scanId, className);
    }
    redraw();
  };

  function redraw(): void {
    if (!state.points) return;
    viewer.setOverlay(state.overlay, state.points, taxonomy, state.labels,
                      attentionScores);
    viewer.setHighlight(state.selection);
    viewer.render(state.camera);
    refineButton.disabled = !state.hasPendingCorrections || state.editsLocked;
  }

  // lasso drawing: click to add polygon vertices, double-click to close
  let polygon: number[] = [];
  canvas.addEventListener("click", (event) => {
    const rect = canvas.getBoundingClientRect();
    polygon.push(event.clientX - rect.left, event.clientY - rect.top);
  });
  canvas.addEventListener("dblclick", () => {
    if (polygon.length < 6) {
      statusLine.textContent = "polygon needs at least 3 vertices";
      polygon = [];
      return;
    }
    const picked = state.select(polygon, {
      width: canvas.width,
      height: canvas.height,
    });
    statusLine.textContent = `${picked.length} points selected`;
    polygon = [];
    redraw();
  });

  el<HTMLButtonElement>("load").onclick = async () => {
    const scanId = el<HTMLInputElement>("scan-id").value.trim();
    await state.loadScan(scanId);
    viewer.setPoints(state.points!);
    await state.segment();
    state.overlay = "labels";
    overlayPicker.value = "labels";
    redraw();
    statusLine.textContent = `loaded ${scanId}`;
  };

  el<HTMLButtonElement>("relabel").onclick = async () => {
    await state.applyEdit("relabel");
    redraw();
  };
  el<HTMLButtonElement>("majority").onclick = async () => {
    await state.applyEdit("majority_vote");
    redraw();
  };
  el<HTMLButtonElement>("undo").onclick = () => {
    state.undo();
    redraw();
  };

  refineButton.onclick = async () => {
    refineButton.disabled = true;
    statusLine.textContent = "refining (edits locked)...";
    try {
      const { report, changed } = await state.triggerRefine();
      const drop =
        report.suite_miou_before !== null && report.suite_miou_after !== null
          ? (report.suite_miou_before - report.suite_miou_after) * 100
          : null;
      const overBudget = drop !== null && drop > 1.5;
      reportPanel.innerHTML =
        `target IoU ${report.target_iou_before.toFixed(4)} → ` +
        `${report.target_iou_after.toFixed(4)}<br>` +
        (drop !== null
          ? `suite mIoU drop ${drop.toFixed(2)} pts ` +
            (overBudget
              ? '<span class="badge bad">over budget</span>'
              : '<span class="badge ok">within budget</span>')
          : "no regression suite configured") +
        `<br>${changed.length} points changed by re-segmentation`;
      viewer.setHighlight(changed);
      statusLine.textContent = "refinement done";
      redraw();
      viewer.setHighlight(changed);
      viewer.render(state.camera);
    } catch (error) {
      statusLine.textContent = `refinement failed: ${error}`;
    }
  };
}
