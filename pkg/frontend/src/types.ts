// Wire types mirroring the control plane's published JSON schemas (/schema v1).

export type Source = "seed" | "bo" | "intervention";

export interface TraceRecord {
  step: number;
  index: number;
  location: [number, number];
  latent: [number, number];
  value: number;
  source: Source;
}

export interface PredictionSummary {
  mean_sigma: number;
  sigma_of_sigma: number;
  sigma_quantiles: number[];
  mae?: number;
}

export interface Snapshot {
  id: string;
  created_at: string;
  config: Record<string, unknown>;
  status: string;
  stagnant: boolean;
  measured_count: number;
  default_exclusion_radius: number;
  trace: TraceRecord[];
  prediction_summary: PredictionSummary | null;
}

export interface StreamEvent {
  step: number;
  type: "step" | "intervention";
  source: Source;
  index: number;
  mean_sigma: number;
  stagnant: boolean;
}

export interface CurveEntry {
  step: number;
  mean_sigma: number;
  sigma_of_sigma: number;
  sigma_quantiles: number[];
  mae?: number;
}

export interface CurveResponse {
  id: string;
  quantile_levels: number[];
  entries: CurveEntry[];
}

export interface DatasetSummary {
  image_height: number;
  image_width: number;
  image: number[][];
  n_patches: number;
  latent_coords: [number, number][];
  latent_source: string;
  exam_mode: boolean;
}

export interface RegionSpec {
  kind: "rectangle" | "polygon";
  z1_min?: number;
  z1_max?: number;
  z2_min?: number;
  z2_max?: number;
  vertices?: [number, number][];
}

export interface InterventionPayload {
  type: "exclusion" | "prioritizing";
  n_points: number;
  region?: RegionSpec;
  radius?: number;
  trapped_centers?: [number, number][];
  base?: string;
}
