// Curve-view series assembly: per-step sigma quantile bands plus mean line,
// with the MAE series present only when the service exposes it (exam mode
// off). Quantile bands stand in for violin plots; wide upper quantiles show
// the same "sharp peak" diagnostic.

import type { CurveEntry, CurveResponse } from "./types.js";

export interface Band {
  lowLevel: number;
  highLevel: number;
  low: number[];
  high: number[];
}

export interface CurveSeries {
  steps: number[];
  meanSigma: number[];
  median: number[];
  bands: Band[]; // outer band first
  mae: number[] | null; // null when exam mode hides ground truth
}

export function buildCurveSeries(curve: CurveResponse): CurveSeries {
  const levels = curve.quantile_levels;
  const entries = curve.entries;
  const steps = entries.map((e) => e.step);
  const meanSigma = entries.map((e) => e.mean_sigma);

  const levelIndex = new Map(levels.map((l, i) => [l, i]));
  const quantileAt = (e: CurveEntry, level: number): number => {
    const i = levelIndex.get(level);
    if (i === undefined) throw new Error(`quantile level ${level} not published`);
    return e.sigma_quantiles[i];
  };

  const bands: Band[] = [];
  // pair outermost levels inward: (5, 95), (25, 75), ... median stays a line
  const sorted = [...levels].sort((a, b) => a - b);
  for (let i = 0; i * 2 + 1 < sorted.length; i++) {
    const lo = sorted[i];
    const hi = sorted[sorted.length - 1 - i];
    bands.push({
      lowLevel: lo,
      highLevel: hi,
      low: entries.map((e) => quantileAt(e, lo)),
      high: entries.map((e) => quantileAt(e, hi)),
    });
  }
  const mid = sorted[Math.floor(sorted.length / 2)];
  const median =
    sorted.length % 2 === 1 ? entries.map((e) => quantileAt(e, mid)) : meanSigma;

  const hasMae = entries.length > 0 && entries.every((e) => e.mae !== undefined);
  const mae = hasMae ? entries.map((e) => e.mae as number) : null;
  return { steps, meanSigma, median, bands, mae };
}
