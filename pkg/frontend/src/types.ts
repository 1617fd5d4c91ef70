// Wire types for the /v1 API.

export const ATTRIBUTE_FIELDS = [
  "gender",
  "age_range",
  "hair",
  "clothing_type",
  "clothing_color",
  "footwear_type",
  "footwear_color",
  "posture_gait",
  "patterns_accessories",
  "distinguishing_features",
] as const;

export type AttributeField = (typeof ATTRIBUTE_FIELDS)[number];
export type AttributeFragment = Partial<Record<AttributeField, string>>;

export interface QueryParts {
  image?: string;
  text?: string;
  attributes?: AttributeFragment;
}

export interface Candidate {
  image_id: string;
  score: number;
  flagged?: boolean;
}

export interface RoundAction {
  kind: string;
  image_id?: string;
}

export interface OpenedEvent {
  event: "opened";
  session_id: string;
  scope: Record<string, unknown>;
  gallery_size: number;
  config: Record<string, unknown>;
}

export interface RoundEvent {
  event: "round";
  round_index: number;
  query: QueryParts;
  candidates: Candidate[];
  action: RoundAction;
  backend_calls: number;
  degraded?: boolean;
  error?: string;
}

export interface ActionEvent {
  event: "action";
  round_index: number;
  action: RoundAction;
}

export interface ClosedEvent {
  event: "closed";
  session_id: string;
}

export type SessionEvent = OpenedEvent | RoundEvent | ActionEvent | ClosedEvent;

export interface DatasetInfo {
  dataset_id: string;
  images: number;
  identities: number;
  sample_image_ids: string[];
}

export interface EvalResult {
  mAP?: number;
  rank1?: number;
  [key: string]: unknown;
}

export interface RunRecord {
  run_id: string;
  kind: string;
  status: "running" | "done" | "failed";
  config: Record<string, unknown>;
  created_at: number;
  finished_at?: number;
  result?: EvalResult;
  error?: string;
}

export interface SessionStateView {
  session_id: string;
  status: string;
  scope: Record<string, unknown>;
  rounds: unknown[];
}
