/**
 * Client-side session state. Everything in here mirrors data received from
 * the service; the UI never fabricates citation targets or trace content.
 */

import type { Citation, ChatEvent, ParagraphView, TurnView } from './api.js'

export interface UiTurn {
  role: 'user' | 'assistant'
  text: string
  citations: Citation[]
  traceId: string | null
  /** true while the turn is still streaming or after a dropped connection */
  incomplete: boolean
}

export interface UiSessionState {
  sessionId: string
  turns: UiTurn[]
  pendingStream: boolean
  connectionError: string | null
  selectedCitation: { citation: Citation; paragraph: ParagraphView } | null
}

export function newSessionState(sessionId: string): UiSessionState {
  return {
    sessionId,
    turns: [],
    pendingStream: false,
    connectionError: null,
    selectedCitation: null,
  }
}

/** Rebuild state purely from the service's turn log (page reload path). */
export function stateFromTurns(sessionId: string, turns: TurnView[]): UiSessionState {
  const state = newSessionState(sessionId)
  state.turns = turns.map((turn) => ({
    role: turn.role,
    text: turn.text,
    citations: turn.citations ?? [],
    traceId: turn.trace_id,
    incomplete: false,
  }))
  return state
}

export function startStream(state: UiSessionState, query: string): UiSessionState {
  state.turns.push({ role: 'user', text: query, citations: [], traceId: null, incomplete: false })
  state.turns.push({ role: 'assistant', text: '', citations: [], traceId: null, incomplete: true })
  state.pendingStream = true
  state.connectionError = null
  return state
}

function streamingTurn(state: UiSessionState): UiTurn {
  const last = state.turns[state.turns.length - 1]
  if (!last || last.role !== 'assistant') throw new Error('no assistant turn is streaming')
  return last
}

export function applyEvent(state: UiSessionState, event: ChatEvent): UiSessionState {
  const turn = streamingTurn(state)
  if (event.type === 'chunk') {
    turn.text += event.text
  } else {
    turn.citations = event.citations
    turn.traceId = event.trace_id
    turn.incomplete = false
    state.pendingStream = false
  }
  return state
}

/** Connection dropped mid-stream: keep the partial text, mark it incomplete. */
export function streamFailed(state: UiSessionState, reason: string): UiSessionState {
  const turn = streamingTurn(state)
  turn.incomplete = true
  state.pendingStream = false
  state.connectionError = reason
  return state
}

export function selectCitation(
  state: UiSessionState,
  citation: Citation,
  paragraph: ParagraphView,
): UiSessionState {
  state.selectedCitation = { citation, paragraph }
  return state
}

export function clearCitation(state: UiSessionState): UiSessionState {
  state.selectedCitation = null
  return state
}
