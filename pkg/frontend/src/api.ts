// Thin typed client for the curation service REST API.

import type { ApiError, Cue, Sample } from './types.js'

export class ServiceError extends Error {
  status: number
  body: ApiError

  constructor(status: number, body: ApiError) {
    super(`${body.error}: ${body.detail}`)
    this.status = status
    this.body = body
  }
}

async function parseOrThrow(response: Response): Promise<Sample> {
  if (response.ok) return (await response.json()) as Sample
  const body = (await response.json().catch(() => ({ error: 'Unknown', detail: '' }))) as ApiError
  throw new ServiceError(response.status, body)
}

export class CurationApi {
  constructor(
    private baseUrl: string,
    private reviewer: string,
  ) {}

  /** Lease the next reviewable sample; null when the queue is drained. */
  async fetchNext(): Promise<Sample | null> {
    const response = await fetch(
      `${this.baseUrl}/api/queue/next?reviewer=${encodeURIComponent(this.reviewer)}`,
    )
    if (response.status === 204) return null
    return parseOrThrow(response)
  }

  async getSample(id: string): Promise<Sample> {
    return parseOrThrow(await fetch(`${this.baseUrl}/api/samples/${encodeURIComponent(id)}`))
  }

  async submitAnnotation(id: string, cues: Cue[]): Promise<Sample> {
    const response = await fetch(`${this.baseUrl}/api/samples/${encodeURIComponent(id)}/annotation`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ reviewer: this.reviewer, cues }),
    })
    return parseOrThrow(response)
  }

  async decide(id: string, decision: 'accept' | 'reject', notes: string): Promise<Sample> {
    const response = await fetch(`${this.baseUrl}/api/samples/${encodeURIComponent(id)}/decision`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ reviewer: this.reviewer, decision, notes }),
    })
    return parseOrThrow(response)
  }

  async stats(): Promise<Record<string, number>> {
    const response = await fetch(`${this.baseUrl}/api/stats`)
    return (await response.json()) as Record<string, number>
  }
}
