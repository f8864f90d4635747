// JSON shapes exchanged with the curation service REST API.

export interface ImageRef {
  id: string
  width: number
  height: number
  uri: string
}

/** [x1, y1, x2, y2] in absolute image pixels, top-left origin. */
export type Box = [number, number, number, number]

export type Cue =
  | { label: string; type: 'boxes'; boxes: Box[] }
  | { label: string; type: 'text'; text: string }
  | { label: string; type: 'caption'; caption: string }
  | { label: string; type: 'none' }

export interface PlanEntry {
  capability: string
  targets: string[]
}

export interface Analysis {
  key_entities: string[]
  plan: PlanEntry[]
  raw_entity_response: string
  raw_plan_response: string
  warnings: string[]
}

export interface Lease {
  reviewer_id: string
  expiry: number
}

export interface Sample {
  id: string
  image: ImageRef
  question: string
  answer: string
  source_dataset: string
  state: 'raw' | 'ai_annotated' | 'human_review' | 'accepted' | 'rejected'
  analysis: Analysis | null
  cues: Cue[]
  review_notes: string
  lease?: Lease
  trace?: unknown
}

export interface Violation {
  code: string
  message: string
  path: string
}

export interface ApiError {
  error: string
  detail: string
  code?: string
  report?: Violation[]
}
