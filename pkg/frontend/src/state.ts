// Pure view-state reducer. UI state is a function of (snapshot, event log,
// local draft); no client-side simulation happens here.

import type { Snapshot, StreamEvent, Source, TraceRecord } from "./types.js";

export interface TracePoint {
  step: number;
  index: number;
  latent: [number, number];
  location: [number, number];
  source: Source;
}

export interface ViewState {
  experimentId: string | null;
  status: string;
  stagnant: boolean;
  measuredCount: number;
  defaultExclusionRadius: number;
  lastEventStep: number;
  trace: TracePoint[];
  meanSigmaByStep: Map<number, number>;
  liveFollow: boolean;
}

export function emptyViewState(): ViewState {
  return {
    experimentId: null,
    status: "idle",
    stagnant: false,
    measuredCount: 0,
    defaultExclusionRadius: 0,
    lastEventStep: -1,
    trace: [],
    meanSigmaByStep: new Map(),
    liveFollow: true,
  };
}

function tracePoint(r: TraceRecord): TracePoint {
  return {
    step: r.step,
    index: r.index,
    latent: r.latent,
    location: r.location,
    source: r.source,
  };
}

/** Rebuild view state from a full snapshot (page load, reconnect resync). */
export function applySnapshot(state: ViewState, snap: Snapshot): ViewState {
  const trace = snap.trace.map(tracePoint);
  const lastEventStep = trace.length ? trace[trace.length - 1].step : -1;
  return {
    ...state,
    experimentId: snap.id,
    status: snap.status,
    stagnant: snap.stagnant,
    measuredCount: snap.measured_count,
    defaultExclusionRadius: snap.default_exclusion_radius,
    lastEventStep,
    trace,
  };
}

/**
 * Fold one stream event into the view state. Events must arrive in step
 * order with no gaps; a gap means the stream desynchronized and the caller
 * should resync from a snapshot.
 */
export function applyEvent(
  state: ViewState,
  event: StreamEvent,
  latentCoords: [number, number][],
  locations: [number, number][]
): ViewState {
  if (event.step <= state.lastEventStep) {
    return state; // replayed duplicate; already applied
  }
  if (event.step !== state.lastEventStep + 1) {
    throw new Error(
      `event gap: expected step ${state.lastEventStep + 1}, got ${event.step}`
    );
  }
  const point: TracePoint = {
    step: event.step,
    index: event.index,
    latent: latentCoords[event.index],
    location: locations[event.index],
    source: event.source,
  };
  const meanSigmaByStep = new Map(state.meanSigmaByStep);
  meanSigmaByStep.set(event.step, event.mean_sigma);
  return {
    ...state,
    stagnant: event.stagnant,
    measuredCount: state.measuredCount + 1,
    lastEventStep: event.step,
    trace: [...state.trace, point],
    meanSigmaByStep,
  };
}

/** Patch-index -> real-space location table from the dataset summary. */
export function patchLocations(
  imageWidth: number,
  patchSize: number,
  nPatches: number
): [number, number][] {
  const nCols = imageWidth - patchSize + 1;
  const offset = patchSize % 2 === 0 ? patchSize / 2 - 1 : (patchSize - 1) / 2;
  const out: [number, number][] = [];
  for (let i = 0; i < nPatches; i++) {
    const r = Math.floor(i / nCols);
    const c = i % nCols;
    out.push([r + offset, c + offset]);
  }
  return out;
}
