import { describe, expect, it } from 'vitest'

import {
  addDraftBox,
  addDraftNone,
  canNavigateAway,
  initialState,
  leaseSecondsLeft,
  loadSample,
  markSubmitted,
  planChecklist,
  removeDraft,
  renameDraft,
} from '../src/state'
import type { Sample } from '../src/types'

function sample(overrides: Partial<Sample> = {}): Sample {
  return {
    id: 's1',
    image: { id: 'img', width: 640, height: 480, uri: 'file:///img.jpg' },
    question: 'Is there a dog?',
    answer: 'yes',
    source_dataset: 'demo',
    state: 'human_review',
    analysis: {
      key_entities: ['dog'],
      plan: [{ capability: 'visual_grounding', targets: ['dog', 'cat'] }],
      raw_entity_response: 'dog',
      raw_plan_response: 'Visual Grounding: dog, cat',
      warnings: [],
    },
    cues: [],
    review_notes: '',
    lease: { reviewer_id: 'alice', expiry: 2000 },
    ...overrides,
  }
}

describe('draft lifecycle', () => {
  it('starts clean and only a gesture makes it dirty', () => {
    let state = loadSample(initialState(), sample())
    expect(state.dirty).toBe(false)
    expect(state.draftCues).toEqual([])
    state = addDraftBox(state, 'dog', [10, 10, 60, 60])
    expect(state.dirty).toBe(true)
    expect(state.draftCues).toEqual([{ label: 'dog', type: 'boxes', boxes: [[10, 10, 60, 60]] }])
  })

  it('second box for the same label appends instead of replacing', () => {
    let state = loadSample(initialState(), sample())
    state = addDraftBox(state, 'dog', [10, 10, 60, 60])
    state = addDraftBox(state, 'dog', [100, 100, 160, 160])
    expect(state.draftCues).toHaveLength(1)
    expect(state.draftCues[0]).toMatchObject({ type: 'boxes' })
    expect((state.draftCues[0] as { boxes: unknown[] }).boxes).toHaveLength(2)
  })

  it('empty labels are ignored, never fabricated', () => {
    let state = loadSample(initialState(), sample())
    state = addDraftBox(state, '   ', [10, 10, 60, 60])
    expect(state.draftCues).toEqual([])
    expect(state.dirty).toBe(false)
  })

  it('rename and remove edit existing drafts only', () => {
    let state = loadSample(initialState(), sample())
    state = addDraftBox(state, 'dog', [10, 10, 60, 60])
    state = renameDraft(state, 'dog', 'brown dog')
    expect(state.draftCues[0].label).toBe('brown dog')
    state = removeDraft(state, 'brown dog')
    expect(state.draftCues).toEqual([])
  })

  it('explicit absence is a none cue replacing other drafts of the label', () => {
    let state = loadSample(initialState(), sample())
    state = addDraftBox(state, 'cat', [10, 10, 60, 60])
    state = addDraftNone(state, 'cat')
    expect(state.draftCues).toEqual([{ label: 'cat', type: 'none' }])
  })
})

describe('navigation guard and lease', () => {
  it('dirty state blocks navigation until submitted', () => {
    let state = loadSample(initialState(), sample())
    expect(canNavigateAway(state)).toBe(true)
    state = addDraftBox(state, 'dog', [10, 10, 60, 60])
    expect(canNavigateAway(state)).toBe(false)
    state = markSubmitted(state, sample())
    expect(canNavigateAway(state)).toBe(true)
    expect(state.draftCues).toEqual([])
  })

  it('lease countdown floors at zero', () => {
    const state = loadSample(initialState(), sample())
    expect(leaseSecondsLeft(state, 1940)).toBe(60)
    expect(leaseSecondsLeft(state, 5000)).toBe(0)
    expect(leaseSecondsLeft(initialState(), 5000)).toBeNull()
  })
})

describe('plan checklist', () => {
  it('one row per directive target, checked when any cue covers it', () => {
    let state = loadSample(initialState(), sample())
    expect(planChecklist(state)).toEqual([
      { target: 'dog', capability: 'visual_grounding', done: false },
      { target: 'cat', capability: 'visual_grounding', done: false },
    ])
    state = addDraftBox(state, 'dog', [10, 10, 60, 60])
    expect(planChecklist(state)).toEqual([
      { target: 'dog', capability: 'visual_grounding', done: true },
      { target: 'cat', capability: 'visual_grounding', done: false },
    ])
  })

  it('ai cues count as covered', () => {
    const withAiCue = sample({ cues: [{ label: 'cat', type: 'caption', caption: 'a cat' }] })
    const state = loadSample(initialState(), withAiCue)
    expect(planChecklist(state)).toEqual([
      { target: 'dog', capability: 'visual_grounding', done: false },
      { target: 'cat', capability: 'visual_grounding', done: true },
    ])
  })
})
