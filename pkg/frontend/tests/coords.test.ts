import { describe, expect, it } from 'vitest'

import {
  ZOOM_LEVELS,
  boxToScreenRect,
  gestureToImageBox,
  imageToScreen,
  screenToImage,
  zoomIn,
  zoomOut,
} from '../src/coords'
import type { ImageRef } from '../src/types'

const image: ImageRef = { id: 'img', width: 640, height: 480, uri: '' }

function mulberry32(seed: number): () => number {
  let a = seed >>> 0
  return () => {
    a = (a + 0x6d2b79f5) >>> 0
    let t = a
    t = Math.imul(t ^ (t >>> 15), t | 1)
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61)
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

describe('screen/image transform', () => {
  it('round-trips exactly at zoom 0.5, 1, 2 and 4', () => {
    const rand = mulberry32(42)
    for (const zoom of [0.5, 1, 2, 4]) {
      for (let i = 0; i < 2000; i++) {
        const view = {
          zoom,
          panX: Math.floor(rand() * 400) - 200,
          panY: Math.floor(rand() * 400) - 200,
        }
        const point = { x: Math.floor(rand() * 1022), y: Math.floor(rand() * 1022) }
        const there = imageToScreen(point, view)
        const back = screenToImage(there, view)
        expect(back.x).toBe(point.x)
        expect(back.y).toBe(point.y)
        const screenPoint = { x: Math.floor(rand() * 2048), y: Math.floor(rand() * 2048) }
        const inv = imageToScreen(screenToImage(screenPoint, view), view)
        expect(inv.x).toBe(screenPoint.x)
        expect(inv.y).toBe(screenPoint.y)
      }
    }
  })

  it('round-trips at every offered zoom level', () => {
    for (const zoom of ZOOM_LEVELS) {
      const view = { zoom, panX: 37, panY: -18 }
      const point = { x: 123, y: 456 }
      expect(screenToImage(imageToScreen(point, view), view)).toEqual(point)
    }
  })
})

describe('gestureToImageBox', () => {
  it('produces the same image-space box for the same image-space gesture at any zoom', () => {
    const gestureImage = { start: { x: 50, y: 60 }, end: { x: 120, y: 140 } }
    const reference = gestureToImageBox(
      gestureImage.start,
      gestureImage.end,
      { zoom: 1, panX: 0, panY: 0 },
      image,
    )
    for (const zoom of [0.5, 2, 4]) {
      const view = { zoom, panX: 11, panY: -7 }
      const box = gestureToImageBox(
        imageToScreen(gestureImage.start, view),
        imageToScreen(gestureImage.end, view),
        view,
        image,
      )
      expect(box).toEqual(reference)
    }
  })

  it('normalizes corner order', () => {
    const view = { zoom: 1, panX: 0, panY: 0 }
    expect(gestureToImageBox({ x: 120, y: 140 }, { x: 50, y: 60 }, view, image)).toEqual([
      50, 60, 120, 140,
    ])
  })

  it('clamps drags past the image edge', () => {
    const view = { zoom: 1, panX: 0, panY: 0 }
    expect(gestureToImageBox({ x: 600, y: 400 }, { x: 900, y: 700 }, view, image)).toEqual([
      600, 400, 640, 480,
    ])
  })

  it('rejects boxes smaller than 3x3 image pixels', () => {
    const view = { zoom: 1, panX: 0, panY: 0 }
    expect(gestureToImageBox({ x: 10, y: 10 }, { x: 11, y: 11 }, view, image)).toBeNull()
    // at 4x zoom an 8-screen-pixel drag is only 2 image pixels
    const zoomed = { zoom: 4, panX: 0, panY: 0 }
    expect(gestureToImageBox({ x: 0, y: 0 }, { x: 8, y: 8 }, zoomed, image)).toBeNull()
    expect(gestureToImageBox({ x: 0, y: 0 }, { x: 12, y: 12 }, zoomed, image)).toEqual([0, 0, 3, 3])
  })
})

describe('zoom stepping and rects', () => {
  it('steps through the fixed levels and saturates at the ends', () => {
    expect(zoomIn(1)).toBe(2)
    expect(zoomOut(1)).toBe(0.5)
    expect(zoomOut(ZOOM_LEVELS[0])).toBe(ZOOM_LEVELS[0])
    expect(zoomIn(ZOOM_LEVELS[ZOOM_LEVELS.length - 1])).toBe(ZOOM_LEVELS[ZOOM_LEVELS.length - 1])
  })

  it('boxToScreenRect scales extent by zoom', () => {
    const rect = boxToScreenRect([10, 10, 30, 40], { zoom: 2, panX: 5, panY: 5 })
    expect(rect).toEqual({ x: 25, y: 25, w: 40, h: 60 })
  })
})
