// Console entry point: wires the API client, event subscription, reducer,
// and canvases together. All experiment state comes from the service.

import { ConsoleApi } from "./api.js";
import { buildCurveSeries } from "./curves.js";
import { EventSubscription } from "./events.js";
import {
  buildPayload,
  draftIsValid,
  type InterventionDraft,
  type LassoDraft,
} from "./intervention.js";
import { applyEvent, applySnapshot, emptyViewState, type ViewState } from "./state.js";
import {
  drawCurveView,
  drawLatentView,
  drawRealView,
  renderStagnationBanner,
} from "./render.js";
import type { DatasetSummary } from "./types.js";

const api = new ConsoleApi(
  (window as any).AESIM_BASE_URL ?? `${location.protocol}//${location.host}`
);

let view: ViewState = emptyViewState();
let dataset: DatasetSummary | null = null;
let locations: [number, number][] = [];
let subscription: EventSubscription | null = null;
let draft: InterventionDraft | null = null;

const $ = <T extends HTMLElement>(id: string) => document.getElementById(id) as T;

function redraw(): void {
  if (!dataset) return;
  drawLatentView($("latent-view") as HTMLCanvasElement, view, dataset.latent_coords);
  drawRealView(
    $("real-view") as HTMLCanvasElement,
    view,
    dataset.image,
    dataset.image_width,
    dataset.image_height
  );
  renderStagnationBanner($("stagnation-banner"), view.stagnant);
  $("status-line").textContent =
    `${view.experimentId ?? "-"} | ${view.status} | measured ${view.measuredCount}`;
  $("submit-intervention").toggleAttribute(
    "disabled",
    draft === null || !draftIsValid(draft)
  );
}

async function refreshCurve(): Promise<void> {
  if (!view.experimentId) return;
  const curve = await api.getCurve(view.experimentId);
  drawCurveView($("curve-view") as HTMLCanvasElement, buildCurveSeries(curve));
}

async function resync(): Promise<void> {
  if (!view.experimentId) return;
  const snap = await api.getSnapshot(view.experimentId);
  view = applySnapshot(view, snap);
  subscribe();
  redraw();
  await refreshCurve();
}

function subscribe(): void {
  subscription?.close();
  if (!view.experimentId || !dataset) return;
  const id = view.experimentId;
  subscription = new EventSubscription(
    (after) => api.eventsUrl(id, after),
    view.lastEventStep,
    {
      onEvent: (event) => {
        view = applyEvent(view, event, dataset!.latent_coords, locations);
        redraw();
        void refreshCurve();
      },
      onDesync: () => void resync(),
      onConnectionChange: (ok) => {
        $("connection").textContent = ok ? "live" : "reconnecting";
      },
    }
  );
}

async function attach(experimentId: string): Promise<void> {
  const snap = await api.getSnapshot(experimentId);
  view = applySnapshot(emptyViewState(), snap);
  subscribe();
  redraw();
  await refreshCurve();
}

async function boot(): Promise<void> {
  dataset = await api.getDatasetSummary();
  const patchSize = Math.round(
    dataset.image_width - Math.sqrt(dataset.n_patches) + 1
  );
  locations = (await import("./state.js")).patchLocations(
    dataset.image_width,
    patchSize,
    dataset.n_patches
  );
  $("exam-note").hidden = !dataset.exam_mode;

  $("create-btn").addEventListener("click", async () => {
    const created = await api.createExperiment({});
    await attach(created.id);
  });
  $("attach-btn").addEventListener("click", async () => {
    const id = ($("experiment-id") as HTMLInputElement).value.trim();
    if (id) await attach(id);
  });
  $("step-btn").addEventListener("click", async () => {
    if (view.experimentId) await api.advance(view.experimentId, 1);
  });
  $("exclusion-btn").addEventListener("click", () => {
    draft = { kind: "exclusion", radius: null, trappedCenters: null, nPoints: 5 };
    redraw();
  });
  $("submit-intervention").addEventListener("click", async () => {
    if (!view.experimentId || draft === null) return;
    try {
      await api.intervene(
        view.experimentId,
        buildPayload(draft, view.defaultExclusionRadius)
      );
      draft = null;
      $("intervention-error").textContent = "";
    } catch (err: any) {
      // rejection keeps the draft so the operator can fix and resubmit
      $("intervention-error").textContent =
        err?.detail?.message ?? err?.message ?? "intervention rejected";
    }
    redraw();
  });

  // lasso drawing on the latent canvas
  const latent = $("latent-view") as HTMLCanvasElement;
  let lasso: LassoDraft | null = null;
  latent.addEventListener("pointerdown", () => {
    lasso = { kind: "lasso", vertices: [], nPoints: 5 };
  });
  latent.addEventListener("pointermove", (ev) => {
    if (!lasso || !dataset) return;
    const rect = latent.getBoundingClientRect();
    // invert the latent->canvas transform used by the renderer
    const coords = dataset.latent_coords;
    let xMin = Infinity,
      xMax = -Infinity,
      yMin = Infinity,
      yMax = -Infinity;
    for (const [x, y] of coords) {
      xMin = Math.min(xMin, x);
      xMax = Math.max(xMax, x);
      yMin = Math.min(yMin, y);
      yMax = Math.max(yMax, y);
    }
    const padX = 0.05 * (xMax - xMin || 1);
    const padY = 0.05 * (yMax - yMin || 1);
    const u = (ev.clientX - rect.left) / rect.width;
    const v = (ev.clientY - rect.top) / rect.height;
    lasso.vertices.push([
      xMin - padX + u * (xMax - xMin + 2 * padX),
      yMin - padY + (1 - v) * (yMax - yMin + 2 * padY),
    ]);
  });
  latent.addEventListener("pointerup", () => {
    if (lasso && lasso.vertices.length >= 3) {
      draft = lasso;
    }
    lasso = null;
    redraw();
  });
}

void boot();
