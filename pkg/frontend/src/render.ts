// Canvas rendering for the three views. Everything drawn comes from service
// data held in ViewState; these functions are draw-only.

import type { CurveSeries } from "./curves.js";
import type { ViewState } from "./state.js";
import type { Source } from "./types.js";

export const SOURCE_COLORS: Record<Source, string> = {
  seed: "#1f77b4",
  bo: "#d62728",
  intervention: "#2ca02c",
};

interface Bounds {
  xMin: number;
  xMax: number;
  yMin: number;
  yMax: number;
}

function latentBounds(coords: [number, number][]): Bounds {
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
  return { xMin: xMin - padX, xMax: xMax + padX, yMin: yMin - padY, yMax: yMax + padY };
}

export function latentToCanvas(
  z: [number, number],
  bounds: Bounds,
  width: number,
  height: number
): [number, number] {
  const x = ((z[0] - bounds.xMin) / (bounds.xMax - bounds.xMin)) * width;
  const y = height - ((z[1] - bounds.yMin) / (bounds.yMax - bounds.yMin)) * height;
  return [x, y];
}

export function drawLatentView(
  canvas: HTMLCanvasElement,
  state: ViewState,
  coords: [number, number][]
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  const bounds = latentBounds(coords);

  ctx.fillStyle = "#cccccc";
  for (const z of coords) {
    const [x, y] = latentToCanvas(z, bounds, width, height);
    ctx.fillRect(x - 1, y - 1, 2, 2);
  }
  for (const p of state.trace) {
    const [x, y] = latentToCanvas(p.latent, bounds, width, height);
    ctx.fillStyle = SOURCE_COLORS[p.source];
    ctx.beginPath();
    ctx.arc(x, y, 4, 0, 2 * Math.PI);
    ctx.fill();
    ctx.strokeStyle = "#ffffff";
    ctx.stroke();
  }
}

export function drawRealView(
  canvas: HTMLCanvasElement,
  state: ViewState,
  image: number[][],
  imageWidth: number,
  imageHeight: number
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const sx = canvas.width / imageWidth;
  const sy = canvas.height / imageHeight;

  let vMin = Infinity,
    vMax = -Infinity;
  for (const row of image)
    for (const v of row) {
      vMin = Math.min(vMin, v);
      vMax = Math.max(vMax, v);
    }
  const span = vMax - vMin || 1;
  for (let r = 0; r < imageHeight; r++) {
    for (let c = 0; c < imageWidth; c++) {
      const g = Math.round(((image[r][c] - vMin) / span) * 255);
      ctx.fillStyle = `rgb(${g},${g},${g})`;
      ctx.fillRect(c * sx, r * sy, Math.ceil(sx), Math.ceil(sy));
    }
  }
  for (const p of state.trace) {
    const [r, c] = p.location;
    ctx.fillStyle = SOURCE_COLORS[p.source];
    ctx.beginPath();
    ctx.arc((c + 0.5) * sx, (r + 0.5) * sy, 4, 0, 2 * Math.PI);
    ctx.fill();
    ctx.strokeStyle = "#ffffff";
    ctx.stroke();
  }
}

export function drawCurveView(canvas: HTMLCanvasElement, series: CurveSeries): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  if (series.steps.length === 0) return;

  let yMax = 0;
  for (const band of series.bands) yMax = Math.max(yMax, ...band.high);
  yMax = Math.max(yMax, ...series.meanSigma) || 1;
  const px = (step: number) =>
    (step / Math.max(series.steps[series.steps.length - 1], 1)) * width;
  const py = (v: number) => height - (v / yMax) * (height - 10) - 5;

  const alphas = [0.15, 0.3];
  series.bands.forEach((band, i) => {
    ctx.fillStyle = `rgba(255, 140, 0, ${alphas[Math.min(i, alphas.length - 1)]})`;
    ctx.beginPath();
    series.steps.forEach((s, j) =>
      j === 0 ? ctx.moveTo(px(s), py(band.low[j])) : ctx.lineTo(px(s), py(band.low[j]))
    );
    for (let j = series.steps.length - 1; j >= 0; j--) {
      ctx.lineTo(px(series.steps[j]), py(band.high[j]));
    }
    ctx.closePath();
    ctx.fill();
  });

  ctx.strokeStyle = "#ff8c00";
  ctx.lineWidth = 2;
  ctx.beginPath();
  series.steps.forEach((s, j) =>
    j === 0 ? ctx.moveTo(px(s), py(series.meanSigma[j])) : ctx.lineTo(px(s), py(series.meanSigma[j]))
  );
  ctx.stroke();

  if (series.mae !== null) {
    const maeMax = Math.max(...series.mae) || 1;
    ctx.strokeStyle = "#9467bd";
    ctx.setLineDash([5, 4]);
    ctx.beginPath();
    series.steps.forEach((s, j) => {
      const y = height - (series.mae![j] / maeMax) * (height - 10) - 5;
      j === 0 ? ctx.moveTo(px(s), y) : ctx.lineTo(px(s), y);
    });
    ctx.stroke();
    ctx.setLineDash([]);
  }
}

export function renderStagnationBanner(el: HTMLElement, stagnant: boolean): void {
  el.hidden = !stagnant;
  el.textContent = stagnant
    ? "Exploration stagnating: recent selections are trapped in one latent region"
    : "";
}
