/**
 * End-to-end: the client modules against the live fixture-backed service
 * (spawned by global-setup). Exercises streaming, citation resolution,
 * trace inspection, and reload reconstruction.
 */

import { describe, expect, it } from 'vitest'

import { ApiError, QaClient, type ChatEvent } from '../src/api.js'
import {
  applyEvent,
  newSessionState,
  selectCitation,
  startStream,
  stateFromTurns,
} from '../src/state.js'
import {
  renderAnswerText,
  renderConversation,
  renderSourcePanel,
  renderTracePanel,
} from '../src/render.js'

const client = new QaClient(process.env.FINRAG_E2E_URL ?? 'http://127.0.0.1:8799')

// long English answer in the fixture: streams as several chunks
const LONG_QUERY = '美联储最新的利率决议是什么？'
const CITED_QUERY = '央行降准了多少？'
const EMPTY_QUERY = 'zorp blarg quux?'

async function runChat(sessionId: string, query: string) {
  const state = newSessionState(sessionId)
  startStream(state, query)
  const renders: string[] = []
  const events: ChatEvent[] = []
  for await (const event of client.chat(sessionId, query)) {
    events.push(event)
    applyEvent(state, event)
    renders.push(renderConversation(state))
  }
  return { state, events, renders }
}

describe('chat view', () => {
  it('streams the answer progressively and ends with citations', async () => {
    const sessionId = await client.createSession()
    const { state, events, renders } = await runChat(sessionId, LONG_QUERY)

    const chunks = events.filter((e) => e.type === 'chunk')
    expect(chunks.length).toBeGreaterThanOrEqual(2)
    const final = events[events.length - 1]
    expect(final?.type).toBe('final')

    // progressive render: each intermediate snapshot extends the previous text
    const texts = renders.map((html) => html.replace(/<[^>]+>/g, ''))
    for (let i = 1; i < texts.length; i++) {
      expect(texts[i]!.length).toBeGreaterThanOrEqual(texts[i - 1]!.length)
    }
    // mid-stream snapshots show partial text before the final one
    expect(renders.some((html) => html.includes('incomplete'))).toBe(true)

    const turn = state.turns[state.turns.length - 1]!
    expect(turn.incomplete).toBe(false)
    expect(turn.citations.length).toBeGreaterThan(0)
    expect(turn.text).toContain('Federal Reserve')
  })

  it('renders inline markers as citation links that open the right paragraph', async () => {
    const sessionId = await client.createSession()
    const { state } = await runChat(sessionId, CITED_QUERY)
    const turn = state.turns[state.turns.length - 1]!
    const html = renderAnswerText(turn)

    for (const citation of turn.citations) {
      expect(html).toContain(`data-ref="${citation.paragraph_ref}"`)
      // clicking the link fetches this paragraph; it must resolve and match
      const paragraph = await client.getParagraph(citation.paragraph_ref)
      expect(paragraph.ref).toBe(citation.paragraph_ref)
      expect(paragraph.text.length).toBeGreaterThan(0)
      expect(citation.paragraph_ref.startsWith(paragraph.doc_id)).toBe(true)

      selectCitation(state, citation, paragraph)
      const panel = renderSourcePanel(paragraph)
      expect(panel).toContain(paragraph.text.slice(0, 12))
      expect(panel).toContain(paragraph.document_title)
    }
  })

  it('answers with zero citations and an insufficiency notice when nothing is retrieved', async () => {
    const sessionId = await client.createSession()
    const { state } = await runChat(sessionId, EMPTY_QUERY)
    const turn = state.turns[state.turns.length - 1]!
    expect(turn.citations).toEqual([])
    expect(turn.text.toLowerCase()).toContain('insufficient')
  })

  it('reconstructs the conversation purely from service responses', async () => {
    const sessionId = await client.createSession()
    await runChat(sessionId, CITED_QUERY)
    await runChat(sessionId, LONG_QUERY)

    const turns = await client.getSession(sessionId)
    const reloaded = stateFromTurns(sessionId, turns)
    expect(reloaded.turns.length).toBe(4)
    expect(reloaded.turns.map((t) => t.role)).toEqual(['user', 'assistant', 'user', 'assistant'])
    const lastAssistant = reloaded.turns[3]!
    expect(lastAssistant.traceId).toBeTruthy()
    expect(lastAssistant.citations.length).toBeGreaterThan(0)
    expect(renderConversation(reloaded)).toContain('Federal Reserve')
  })

  it('surfaces 404 for unknown sessions so the app can redirect', async () => {
    await expect(client.getSession('definitely-not-a-session')).rejects.toThrowError(ApiError)
    await expect(client.getSession('definitely-not-a-session')).rejects.toMatchObject({
      status: 404,
    })
  })
})

describe('trace view', () => {
  it('shows every pipeline stage with hits and the knowledge bundle', async () => {
    const sessionId = await client.createSession()
    const { state } = await runChat(sessionId, CITED_QUERY)
    const traceId = state.turns[state.turns.length - 1]!.traceId!
    const trace = await client.getTrace(traceId)
    const html = renderTracePanel(trace)

    for (const stage of ['rewrite', 'intention', 'text_recall', 'rerank', 'bundle']) {
      expect(html).toContain(`data-stage="${stage}"`)
    }
    expect(trace.stages.text_recall!.length).toBeGreaterThan(0)
    expect(trace.stages.bundle!.length).toBeGreaterThan(0)
    // bundle entries are the citation targets
    const bundleRefs = new Set(trace.stages.bundle!.map((e) => e.paragraph_ref))
    for (const citation of state.turns[state.turns.length - 1]!.citations) {
      expect(bundleRefs.has(citation.paragraph_ref)).toBe(true)
    }
  })

  it('marks an empty bundle with the insufficient-knowledge badge', async () => {
    const sessionId = await client.createSession()
    const { state } = await runChat(sessionId, EMPTY_QUERY)
    const traceId = state.turns[state.turns.length - 1]!.traceId!
    const trace = await client.getTrace(traceId)
    expect(trace.stages.bundle).toEqual([])
    expect(renderTracePanel(trace)).toContain('insufficient knowledge')
  })

  it('404 traces render the empty state', async () => {
    await expect(client.getTrace('missing-trace')).rejects.toMatchObject({ status: 404 })
  })
})
