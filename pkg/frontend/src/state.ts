// View state for the single-sample review page.
//
// Draft cues are kept separately from the sample's AI cues and only ever
// originate from a user gesture (drawBox) or an explicit edit of an existing
// cue; nothing here invents evidence. The dirty flag blocks navigation until
// the reviewer submits or confirms discarding.

import type { Box, Cue, Sample } from './types.js'
import type { Viewport } from './coords.js'

export interface ViewState {
  sample: Sample | null
  draftCues: Cue[]
  view: Viewport
  dirty: boolean
  notes: string
  violations: string[]
}

export function initialState(): ViewState {
  return {
    sample: null,
    draftCues: [],
    view: { zoom: 1, panX: 0, panY: 0 },
    dirty: false,
    violations: [],
    notes: '',
  }
}

export function loadSample(state: ViewState, sample: Sample): ViewState {
  return {
    ...initialState(),
    sample,
    // AI cues are shown read-only; drafts start from the human's empty slate
    // and override by label on submit (server-side merge rule).
  }
}

/** Add a drawn box under a label; a second box for the same label appends. */
export function addDraftBox(state: ViewState, label: string, box: Box): ViewState {
  const trimmed = label.trim()
  if (!trimmed) return state
  const drafts = state.draftCues.map((cue) => ({ ...cue }))
  const existing = drafts.find((cue) => cue.label === trimmed)
  if (existing && existing.type === 'boxes') {
    existing.boxes = [...existing.boxes, box]
  } else if (existing) {
    // human boxes replace a non-box draft of the same label
    drafts[drafts.indexOf(existing)] = { label: trimmed, type: 'boxes', boxes: [box] }
  } else {
    drafts.push({ label: trimmed, type: 'boxes', boxes: [box] })
  }
  return { ...state, draftCues: drafts, dirty: true }
}

/** Mark an entity as explicitly absent (the null cue). */
export function addDraftNone(state: ViewState, label: string): ViewState {
  const trimmed = label.trim()
  if (!trimmed) return state
  const drafts = state.draftCues.filter((cue) => cue.label !== trimmed)
  drafts.push({ label: trimmed, type: 'none' })
  return { ...state, draftCues: drafts, dirty: true }
}

export function renameDraft(state: ViewState, oldLabel: string, newLabel: string): ViewState {
  const trimmed = newLabel.trim()
  if (!trimmed || oldLabel === trimmed) return state
  const drafts = state.draftCues.map((cue) =>
    cue.label === oldLabel ? { ...cue, label: trimmed } : { ...cue },
  )
  return { ...state, draftCues: drafts, dirty: true }
}

export function removeDraft(state: ViewState, label: string): ViewState {
  const drafts = state.draftCues.filter((cue) => cue.label !== label)
  return { ...state, draftCues: drafts, dirty: drafts.length > 0 || state.dirty }
}

export function markSubmitted(state: ViewState, sample: Sample): ViewState {
  return { ...state, sample, draftCues: [], dirty: false, violations: [] }
}

/** Labels the plan expects a human to ground, with their current status. */
export function planChecklist(state: ViewState): { target: string; capability: string; done: boolean }[] {
  if (!state.sample || !state.sample.analysis) return []
  const covered = new Set<string>()
  for (const cue of state.sample.cues) covered.add(cue.label)
  for (const cue of state.draftCues) covered.add(cue.label)
  const rows: { target: string; capability: string; done: boolean }[] = []
  for (const entry of state.sample.analysis.plan) {
    if (entry.targets.length === 0) {
      rows.push({ target: '(whole image)', capability: entry.capability, done: true })
    }
    for (const target of entry.targets) {
      rows.push({ target, capability: entry.capability, done: covered.has(target) })
    }
  }
  return rows
}

export function canNavigateAway(state: ViewState): boolean {
  return !state.dirty
}

export function leaseSecondsLeft(state: ViewState, nowEpochSeconds: number): number | null {
  const lease = state.sample?.lease
  if (!lease) return null
  return Math.max(0, Math.floor(lease.expiry - nowEpochSeconds))
}
