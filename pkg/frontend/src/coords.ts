// Screen <-> image coordinate transforms.
//
// The canvas shows the image scaled by `zoom` and shifted by a pan offset in
// screen pixels. Draft boxes always live in image-pixel coordinates; the
// transform pair below is exactly invertible (the UI only offers power-of-two
// zoom levels, so the float math round-trips without error).

import type { Box, ImageRef } from './types.js'

export interface Viewport {
  zoom: number
  panX: number
  panY: number
}

export interface Point {
  x: number
  y: number
}

export const ZOOM_LEVELS = [0.25, 0.5, 1, 2, 4, 8]
export const MIN_BOX_PIXELS = 3

export function imageToScreen(p: Point, view: Viewport): Point {
  return { x: p.x * view.zoom + view.panX, y: p.y * view.zoom + view.panY }
}

export function screenToImage(p: Point, view: Viewport): Point {
  return { x: (p.x - view.panX) / view.zoom, y: (p.y - view.panY) / view.zoom }
}

export function zoomIn(zoom: number): number {
  const i = ZOOM_LEVELS.indexOf(zoom)
  return i >= 0 && i < ZOOM_LEVELS.length - 1 ? ZOOM_LEVELS[i + 1] : zoom
}

export function zoomOut(zoom: number): number {
  const i = ZOOM_LEVELS.indexOf(zoom)
  return i > 0 ? ZOOM_LEVELS[i - 1] : zoom
}

function clamp(v: number, lo: number, hi: number): number {
  return Math.min(Math.max(v, lo), hi)
}

/**
 * Convert a drag gesture (two corners in screen space) into an image-space
 * box: corners normalized, coordinates rounded to whole pixels and clamped
 * to the image. Returns null for boxes smaller than 3x3 image pixels; the
 * caller shows a toast rather than creating a useless sliver.
 */
export function gestureToImageBox(
  start: Point,
  end: Point,
  view: Viewport,
  image: ImageRef,
): Box | null {
  const a = screenToImage(start, view)
  const b = screenToImage(end, view)
  let x1 = clamp(Math.round(Math.min(a.x, b.x)), 0, image.width)
  let y1 = clamp(Math.round(Math.min(a.y, b.y)), 0, image.height)
  let x2 = clamp(Math.round(Math.max(a.x, b.x)), 0, image.width)
  let y2 = clamp(Math.round(Math.max(a.y, b.y)), 0, image.height)
  if (x2 - x1 < MIN_BOX_PIXELS || y2 - y1 < MIN_BOX_PIXELS) return null
  return [x1, y1, x2, y2]
}

/** Box corners in screen space, for canvas rendering. */
export function boxToScreenRect(box: Box, view: Viewport): { x: number; y: number; w: number; h: number } {
  const tl = imageToScreen({ x: box[0], y: box[1] }, view)
  const br = imageToScreen({ x: box[2], y: box[3] }, view)
  return { x: tl.x, y: tl.y, w: br.x - tl.x, h: br.y - tl.y }
}
