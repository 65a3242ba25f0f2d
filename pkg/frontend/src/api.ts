/**
 * Typed client for the QA service. The chat endpoint streams
 * newline-delimited JSON events; everything else is plain JSON.
 */

export interface Citation {
  index: number
  paragraph_ref: string
}

export type ChatEvent =
  | { type: 'chunk'; text: string }
  | { type: 'final'; citations: Citation[]; trace_id: string }

export interface ParagraphView {
  ref: string
  doc_id: string
  ordinal: number
  text: string
  document_title: string
  source_type: string
}

export interface TurnView {
  seq: number
  role: 'user' | 'assistant'
  text: string
  citations: Citation[]
  trace_id: string | null
  timestamp: number
}

export interface BundleEntryView {
  index: number
  paragraph_ref: string
  text: string
  condensed: boolean
}

export interface TraceView {
  trace_id: string
  query: string
  stages: {
    rewrite?: { rewritten_query: string; keywords: string[] }
    intention?: {
      sources: string[]
      needs_market_data: boolean
      needs_reports: boolean
      confidence: number
    }
    text_recall?: { doc_id: string; score: number }[]
    realtime?: string[]
    rerank?: { paragraph_ref: string; score: number }[]
    bundle?: BundleEntryView[]
  }
  errors: Record<string, string>
  answer?: string
  citations?: Citation[]
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message)
  }
}

export class QaClient {
  constructor(
    readonly baseUrl: string,
    readonly token?: string,
  ) {}

  private headers(json = false): Record<string, string> {
    const headers: Record<string, string> = {}
    if (json) headers['content-type'] = 'application/json'
    if (this.token) headers['authorization'] = `Bearer ${this.token}`
    return headers
  }

  private async checked(response: Response): Promise<Response> {
    if (!response.ok) {
      const body = await response.text().catch(() => '')
      throw new ApiError(response.status, `${response.status}: ${body.slice(0, 200)}`)
    }
    return response
  }

  async createSession(): Promise<string> {
    const response = await this.checked(
      await fetch(`${this.baseUrl}/v1/sessions`, { method: 'POST', headers: this.headers() }),
    )
    const data = (await response.json()) as { session_id: string }
    return data.session_id
  }

  async getSession(sessionId: string): Promise<TurnView[]> {
    const response = await this.checked(
      await fetch(`${this.baseUrl}/v1/sessions/${sessionId}`, { headers: this.headers() }),
    )
    const data = (await response.json()) as { turns: TurnView[] }
    return data.turns
  }

  /** Stream chat events as they arrive (one JSON object per line). */
  async *chat(sessionId: string, query: string): AsyncGenerator<ChatEvent> {
    const response = await this.checked(
      await fetch(`${this.baseUrl}/v1/sessions/${sessionId}/chat`, {
        method: 'POST',
        headers: this.headers(true),
        body: JSON.stringify({ query }),
      }),
    )
    if (!response.body) throw new ApiError(0, 'response has no body stream')
    const reader = response.body.getReader()
    const decoder = new TextDecoder()
    let buffer = ''
    for (;;) {
      const { done, value } = await reader.read()
      if (done) break
      buffer += decoder.decode(value, { stream: true })
      let newline = buffer.indexOf('\n')
      while (newline >= 0) {
        const line = buffer.slice(0, newline).trim()
        buffer = buffer.slice(newline + 1)
        if (line) yield JSON.parse(line) as ChatEvent
        newline = buffer.indexOf('\n')
      }
    }
    const rest = buffer.trim()
    if (rest) yield JSON.parse(rest) as ChatEvent
  }

  async getParagraph(ref: string): Promise<ParagraphView> {
    const response = await this.checked(
      await fetch(`${this.baseUrl}/v1/paragraphs/${encodeURIComponent(ref)}`, {
        headers: this.headers(),
      }),
    )
    return (await response.json()) as ParagraphView
  }

  async getTrace(traceId: string): Promise<TraceView> {
    const response = await this.checked(
      await fetch(`${this.baseUrl}/v1/traces/${traceId}`, { headers: this.headers() }),
    )
    return (await response.json()) as TraceView
  }
}
