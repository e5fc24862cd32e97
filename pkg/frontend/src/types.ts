/** Wire types for the tagshield HTTP API. Field names match the JSON exactly. */

export type Metric = "inaccuracy" | "incorrectness" | "expected_distance_km";

export interface TopEntry {
  location: string;
  name: string;
  prob: number;
}

export interface Prediction {
  topk: TopEntry[];
  posterior_entropy: number;
}

export interface Recommendation {
  mechanism: string;
  hashtags: string[];
  privacy_level: number;
  utility_loss: number;
  edits: number;
  satisfiable: boolean;
}

export interface Advice {
  original: Recommendation;
  recommendations: Recommendation[];
}

export interface LocationRow {
  key: string;
  name: string;
  lat: number;
  lon: number;
}

export interface ModelInfo {
  n_trees: number;
  vocab_size: number;
  n_classes: number;
  embedding_dim: number;
  metrics: string[];
  mechanisms: string[];
  locations: LocationRow[];
}

export interface RecommendRequest {
  hashtags: string[];
  true_location: string;
  alpha: number;
  metric: Metric;
  max_obfuscated: number | null;
}
