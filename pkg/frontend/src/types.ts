/** Wire contract of the local retrieval service. Field names are frozen. */

export interface ResultEntry {
  id: string;
  similarity: number;
  class_label: number | null;
  type_label: number | null;
  tags: string[];
  thumbnail: string;
}

export interface QueryResponse {
  snapshot_version: number;
  status: "ok" | "no_seeds";
  query_id: string | null;
  results: ResultEntry[];
}

export interface MapPoint {
  id: string;
  x: number;
  y: number;
  class_label: number | null;
  type_label: number | null;
  tags: string[];
}

export interface MapResponse {
  snapshot_version: number;
  points: MapPoint[];
}

export interface StatsResponse {
  snapshot_version: number;
  count: number;
  dim: number;
  metric: string;
  class_histogram: Record<string, number>;
  type_histogram: Record<string, number>;
  tag_histogram: Record<string, number>;
}

export interface MarksGroupPayload {
  name: string;
  marks: boolean[][];
}

export interface AnovaSummary {
  f_stat: number;
  p_value: number;
  df_between: number;
  df_within: number;
  degenerate: boolean;
}

export interface MarksResponse {
  snapshot_version: number;
  scores: Record<string, number>;
  anova?: AnovaSummary;
}

export type QueryRequest =
  | { id: string; k: number; exclude_self?: boolean }
  | { image_pgm_b64: string; k: number }
  | { keyword: string; k: number; k_seed?: number };
