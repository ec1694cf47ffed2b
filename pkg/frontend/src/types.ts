// Shapes of the curation service's JSON payloads.

export type Decision = "accept" | "reject" | "unsure";

export interface QueueItem {
  pair_id: string;
  a: string;
  b: string;
  score: number;
  status: "pending" | "decided";
}

export interface QueuePage {
  total: number;
  offset: number;
  limit: number;
  items: QueueItem[];
}

/** One explanation row: [key, value, weight] for attributes,
 *  [relation, neighbor label, weight] for neighbors. */
export type ExplanationRow = [string, string, number];

export interface SideDetail {
  entity: string;
  attributes: ExplanationRow[];
  neighbors: ExplanationRow[];
}

export interface DecisionView {
  decision: Decision;
  confident: boolean;
  annotator: string;
}

export interface PairDetail {
  pair_id: string;
  score: number;
  a: SideDetail;
  b: SideDetail;
  labels: { a: string; b: string };
  status: string;
  decision: DecisionView | null;
}

export interface Stats {
  total: number;
  pending: number;
  decided: number;
  counts: Record<Decision, number>;
  confidence_rate: number;
}
