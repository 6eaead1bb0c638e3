// Payload shapes mirroring the HTTP API (snake_case field names).

export type Step =
  | "Train"
  | "Evaluate"
  | "SelectTarget"
  | "Diagnose"
  | "Modify"
  | "Regenerate"
  | "Done";

export interface SessionState {
  step: Step;
  active_version: string;
  iteration: number;
  step_counter: number;
  runs: Record<string, Record<string, RunRecord>>;
  mean_map50: Record<string, number>;
  target: TargetCell | null;
  last_bundle: string | null;
  done_reason: string | null;
  warnings: string[];
}

export interface RunRecord {
  version: string;
  seed: number;
  map50: number;
  confusion_path: string;
  checkpoint_path: string;
  duration_s: number;
}

export interface TargetCell {
  source: string;
  predicted: string;
  count: number;
  override: boolean;
}

export interface JobStatus {
  id: string;
  kind: string;
  state: "running" | "done" | "failed";
  error: string | null;
}

export interface SessionResponse {
  state: SessionState | null;
  job: JobStatus | null;
  drafts: ModificationDraft[];
  workdir: string;
}

export interface ConfusionResponse {
  version: string;
  seed: string;
  class_order: string[];
  matrix: number[][];
}

export interface VersionMetrics {
  version: string;
  parent: string | null;
  per_seed_map50: Record<string, number>;
  mean_map50: number | null;
  specs: ModificationDraft[];
}

export interface MetricsResponse {
  versions: VersionMetrics[];
}

export interface ModificationDraft {
  target_class: string;
  action: "set_smoothness" | "scale_emission" | "set_reflectance";
  value: number;
  kind: "reinforcing" | "disruptive";
  new_version_label: string;
  region_tags: string[];
  face_indices?: number[];
  note?: string;
}

export interface SuggestionEntry {
  kind: "common" | "unique";
  owning_class: string;
  orientation_bin: number;
  cells: [number, number][];
  saliency: number;
  correlation: number;
  similarity: number;
}

export interface SuggestionsResponse {
  target: TargetCell;
  warning: string | null;
  bins: { bin: number; suggestions: SuggestionEntry[]; n_misclassified: number }[];
}

export interface SaliencyResponse {
  bin: number;
  dst_bin: number;
  correlation: number;
  kind: "src_correct" | "dst_correct" | "misclass";
  meta: Record<string, unknown>;
  image: string; // content-hash artifact id
}

export interface OrientationBinRow {
  bin: number;
  correct: number;
  misclassified: number;
  fraction: number;
}

export interface OrientationFractionsResponse {
  pair: [string, string];
  bins: OrientationBinRow[];
}

export const BACKGROUND = "background";
