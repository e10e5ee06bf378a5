// Intervention draft handling: operator selections become service payloads.

import type { InterventionPayload, RegionSpec } from "./types.js";

export interface LassoDraft {
  kind: "lasso";
  vertices: [number, number][]; // latent-space polygon
  nPoints: number;
}

export interface RectangleDraft {
  kind: "rectangle";
  z1Min: number;
  z1Max: number;
  z2Min: number;
  z2Max: number;
  nPoints: number;
}

export interface ExclusionDraft {
  kind: "exclusion";
  radius: number | null; // null -> service-advertised default
  trappedCenters: [number, number][] | null; // null -> engine default
  nPoints: number;
}

export type InterventionDraft = LassoDraft | RectangleDraft | ExclusionDraft;

/** A draft the submit button should accept. */
export function draftIsValid(draft: InterventionDraft): boolean {
  if (draft.nPoints < 1) return false;
  switch (draft.kind) {
    case "lasso":
      return draft.vertices.length >= 3;
    case "rectangle":
      return draft.z1Max > draft.z1Min && draft.z2Max > draft.z2Min;
    case "exclusion":
      return draft.radius === null || draft.radius > 0;
  }
}

/**
 * Build the POST /interventions payload. Lasso and rectangle selections map
 * to prioritizing regions posted verbatim; exclusion drafts without an
 * explicit radius carry the service's advertised default.
 */
export function buildPayload(
  draft: InterventionDraft,
  defaultExclusionRadius: number
): InterventionPayload {
  if (!draftIsValid(draft)) {
    throw new Error("intervention draft is incomplete");
  }
  if (draft.kind === "lasso") {
    const region: RegionSpec = { kind: "polygon", vertices: draft.vertices };
    return { type: "prioritizing", n_points: draft.nPoints, region };
  }
  if (draft.kind === "rectangle") {
    const region: RegionSpec = {
      kind: "rectangle",
      z1_min: draft.z1Min,
      z1_max: draft.z1Max,
      z2_min: draft.z2Min,
      z2_max: draft.z2Max,
    };
    return { type: "prioritizing", n_points: draft.nPoints, region };
  }
  const payload: InterventionPayload = {
    type: "exclusion",
    n_points: draft.nPoints,
    radius: draft.radius ?? defaultExclusionRadius,
  };
  if (draft.trappedCenters !== null) {
    payload.trapped_centers = draft.trappedCenters;
  }
  return payload;
}

/**
 * Map a real-space rectangle (row/col bounds) to the latent bounding box of
 * the patches whose centers fall inside it. Returns null when the rectangle
 * contains no patch centers.
 */
export function realRectangleToLatentRegion(
  rowMin: number,
  rowMax: number,
  colMin: number,
  colMax: number,
  locations: [number, number][],
  latentCoords: [number, number][]
): RegionSpec | null {
  let z1Min = Infinity;
  let z1Max = -Infinity;
  let z2Min = Infinity;
  let z2Max = -Infinity;
  let hits = 0;
  for (let i = 0; i < locations.length; i++) {
    const [r, c] = locations[i];
    if (r < rowMin || r > rowMax || c < colMin || c > colMax) continue;
    const [z1, z2] = latentCoords[i];
    z1Min = Math.min(z1Min, z1);
    z1Max = Math.max(z1Max, z1);
    z2Min = Math.min(z2Min, z2);
    z2Max = Math.max(z2Max, z2);
    hits++;
  }
  if (hits === 0) return null;
  // degenerate (single column of patches) rectangles get a tiny pad so the
  // region keeps positive extent on both axes
  const pad1 = z1Max > z1Min ? 0 : 1e-9;
  const pad2 = z2Max > z2Min ? 0 : 1e-9;
  return {
    kind: "rectangle",
    z1_min: z1Min - pad1,
    z1_max: z1Max + pad1,
    z2_min: z2Min - pad2,
    z2_max: z2Max + pad2,
  };
}
