// Review page wiring: canvas, keyboard shortcuts, REST calls.
//
// Keyboard: N next sample, A accept, R reject (prompts for notes),
// +/- zoom. Drag on the canvas draws a box; a label prompt follows.

import { CurationApi, ServiceError } from './api.js'
import {
  MIN_BOX_PIXELS,
  boxToScreenRect,
  gestureToImageBox,
  imageToScreen,
  zoomIn,
  zoomOut,
} from './coords.js'
import {
  ViewState,
  addDraftBox,
  canNavigateAway,
  initialState,
  leaseSecondsLeft,
  loadSample,
  markSubmitted,
  planChecklist,
  removeDraft,
} from './state.js'
import type { Cue } from './types.js'

const qs = new URLSearchParams(window.location.search)
const api = new CurationApi(qs.get('service') ?? '', qs.get('reviewer') ?? 'anonymous')

let state: ViewState = initialState()
let dragStart: { x: number; y: number } | null = null
let dragNow: { x: number; y: number } | null = null
let statusTimer: number | undefined

const canvas = document.getElementById('scene') as HTMLCanvasElement
const ctx = canvas.getContext('2d')!
const imageEl = new Image()

function el(id: string): HTMLElement {
  return document.getElementById(id)!
}

function toast(message: string): void {
  const node = el('toast')
  node.textContent = message
  node.classList.add('visible')
  window.clearTimeout(statusTimer)
  statusTimer = window.setTimeout(() => node.classList.remove('visible'), 2500)
}

function draw(): void {
  ctx.clearRect(0, 0, canvas.width, canvas.height)
  if (!state.sample) return
  const view = state.view
  if (imageEl.complete && imageEl.naturalWidth > 0) {
    const origin = imageToScreen({ x: 0, y: 0 }, view)
    ctx.drawImage(
      imageEl,
      origin.x,
      origin.y,
      state.sample.image.width * view.zoom,
      state.sample.image.height * view.zoom,
    )
  } else {
    // image may be unreachable (file:// URI); draw its frame instead
    const rect = boxToScreenRect([0, 0, state.sample.image.width, state.sample.image.height], view)
    ctx.fillStyle = '#20242c'
    ctx.fillRect(rect.x, rect.y, rect.w, rect.h)
  }

  ctx.font = '12px sans-serif'
  ctx.lineWidth = 2
  const drawCue = (cue: Cue, color: string) => {
    if (cue.type !== 'boxes') return
    for (const box of cue.boxes) {
      const rect = boxToScreenRect(box, state.view)
      ctx.strokeStyle = color
      ctx.strokeRect(rect.x, rect.y, rect.w, rect.h)
      ctx.fillStyle = color
      ctx.fillText(cue.label, rect.x + 3, rect.y - 4)
    }
  }
  for (const cue of state.sample.cues) drawCue(cue, '#7aa2f7')
  for (const cue of state.draftCues) drawCue(cue, '#9ece6a')

  if (dragStart && dragNow) {
    ctx.strokeStyle = '#e0af68'
    ctx.setLineDash([4, 3])
    ctx.strokeRect(dragStart.x, dragStart.y, dragNow.x - dragStart.x, dragNow.y - dragStart.y)
    ctx.setLineDash([])
  }
}

function renderSidebar(): void {
  const sample = state.sample
  el('question').textContent = sample ? sample.question : 'queue drained'
  el('state-chip').textContent = sample ? sample.state : '-'
  el('notes').textContent = ''
  const plan = el('plan')
  plan.innerHTML = ''
  for (const row of planChecklist(state)) {
    const li = document.createElement('li')
    li.textContent = `${row.done ? '✓' : '•'} ${row.capability}: ${row.target}`
    li.className = row.done ? 'done' : 'pending'
    plan.appendChild(li)
  }
  const cueList = el('cues')
  cueList.innerHTML = ''
  const appendCue = (cue: Cue, draft: boolean) => {
    const li = document.createElement('li')
    const body =
      cue.type === 'boxes'
        ? cue.boxes.map((b) => `[${b.join(', ')}]`).join(' ')
        : cue.type === 'none'
          ? 'none'
          : cue.type === 'text'
            ? JSON.stringify(cue.text)
            : JSON.stringify(cue.caption)
    li.textContent = `${cue.label}: ${body}`
    li.className = draft ? 'draft' : 'ai'
    if (state.violations.some((v) => v.includes(cue.label))) li.classList.add('violation')
    if (draft) {
      const remove = document.createElement('button')
      remove.textContent = 'x'
      remove.onclick = () => {
        state = removeDraft(state, cue.label)
        render()
      }
      li.appendChild(remove)
    }
    cueList.appendChild(li)
  }
  for (const cue of sample?.cues ?? []) appendCue(cue, false)
  for (const cue of state.draftCues) appendCue(cue, true)

  const problems = el('violations')
  problems.innerHTML = ''
  for (const violation of state.violations) {
    const li = document.createElement('li')
    li.textContent = violation
    problems.appendChild(li)
  }
}

function render(): void {
  draw()
  renderSidebar()
}

async function next(): Promise<void> {
  if (!canNavigateAway(state) && !window.confirm('Discard unsaved boxes?')) return
  try {
    const sample = await api.fetchNext()
    if (!sample) {
      state = initialState()
      toast('queue drained')
      render()
      return
    }
    state = loadSample(state, sample)
    imageEl.src = sample.image.uri
    imageEl.onload = draw
    render()
  } catch (error) {
    toast(String(error))
  }
}

async function submitDrafts(): Promise<boolean> {
  if (!state.sample) return false
  if (state.draftCues.length === 0) return true
  try {
    const updated = await api.submitAnnotation(state.sample.id, state.draftCues)
    state = markSubmitted(state, updated)
    render()
    return true
  } catch (error) {
    if (error instanceof ServiceError && error.status === 409) {
      toast('lease lost; press N to re-fetch')
    } else {
      toast(String(error))
    }
    return false
  }
}

async function decide(decision: 'accept' | 'reject'): Promise<void> {
  if (!state.sample) return
  let notes = ''
  if (decision === 'reject') {
    notes = window.prompt('Reject notes (required):')?.trim() ?? ''
    if (!notes) {
      toast('rejection requires notes')
      return
    }
  }
  if (!(await submitDrafts())) return
  try {
    const updated = await api.decide(state.sample.id, decision, notes)
    state = { ...state, sample: updated, violations: [] }
    render()
    toast(`sample ${updated.state}`)
    await next()
  } catch (error) {
    if (error instanceof ServiceError && error.body.report) {
      state = { ...state, violations: error.body.report.map((v) => `${v.code}: ${v.message}`) }
      render()
      toast('trace invalid; offending cues highlighted')
    } else if (error instanceof ServiceError && error.status === 409) {
      toast('lease lost; press N to re-fetch')
    } else {
      toast(String(error))
    }
  }
}

canvas.addEventListener('mousedown', (event) => {
  dragStart = { x: event.offsetX, y: event.offsetY }
})
canvas.addEventListener('mousemove', (event) => {
  if (!dragStart) return
  dragNow = { x: event.offsetX, y: event.offsetY }
  draw()
})
canvas.addEventListener('mouseup', (event) => {
  if (!dragStart || !state.sample) return
  const box = gestureToImageBox(
    dragStart,
    { x: event.offsetX, y: event.offsetY },
    state.view,
    state.sample.image,
  )
  dragStart = dragNow = null
  if (!box) {
    toast(`box must be at least ${MIN_BOX_PIXELS}x${MIN_BOX_PIXELS} image pixels`)
    draw()
    return
  }
  const label = window.prompt('Label for this box:')?.trim()
  if (label) state = addDraftBox(state, label, box)
  render()
})

document.addEventListener('keydown', (event) => {
  if (event.target instanceof HTMLInputElement) return
  if (event.key === 'n' || event.key === 'N') void next()
  else if (event.key === 'a' || event.key === 'A') void decide('accept')
  else if (event.key === 'r' || event.key === 'R') void decide('reject')
  else if (event.key === '+') {
    state = { ...state, view: { ...state.view, zoom: zoomIn(state.view.zoom) } }
    render()
  } else if (event.key === '-') {
    state = { ...state, view: { ...state.view, zoom: zoomOut(state.view.zoom) } }
    render()
  }
})

window.addEventListener('beforeunload', (event) => {
  if (!canNavigateAway(state)) event.preventDefault()
})

// Lease countdown plus a keep-alive poll while there is unsaved work; the
// poll notices an expired/stolen lease early rather than at submit time.
window.setInterval(() => {
  const left = leaseSecondsLeft(state, Date.now() / 1000)
  el('lease').textContent = left === null ? '' : `lease ${Math.floor(left / 60)}:${String(left % 60).padStart(2, '0')}`
}, 1000)

window.setInterval(() => {
  if (state.dirty && state.sample) void api.getSample(state.sample.id).catch(() => undefined)
}, 60_000)

el('btn-next').onclick = () => void next()
el('btn-accept').onclick = () => void decide('accept')
el('btn-reject').onclick = () => void decide('reject')
el('btn-save').onclick = () => void submitDrafts()

void next()
