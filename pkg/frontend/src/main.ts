/**
 * Browser wiring: binds the API client, session state, and renderers to the
 * DOM. The session id rides in the URL hash so a reload reconstructs the
 * conversation purely from service responses.
 */

import { ApiError, QaClient } from './api.js'
import {
  applyEvent,
  newSessionState,
  selectCitation,
  startStream,
  stateFromTurns,
  streamFailed,
  type UiSessionState,
} from './state.js'
import {
  renderConversation,
  renderSourcePanel,
  renderTraceNotFound,
  renderTracePanel,
} from './render.js'

const baseUrl = (window as { FINRAG_BASE_URL?: string }).FINRAG_BASE_URL ?? ''
const token = new URLSearchParams(window.location.search).get('token') ?? undefined
const client = new QaClient(baseUrl, token)

const conversationEl = document.getElementById('conversation') as HTMLElement
const sourceEl = document.getElementById('source') as HTMLElement
const traceEl = document.getElementById('trace') as HTMLElement
const formEl = document.getElementById('ask') as HTMLFormElement
const inputEl = document.getElementById('query') as HTMLInputElement

let state: UiSessionState

function redraw(): void {
  conversationEl.innerHTML = renderConversation(state)
  conversationEl.scrollTop = conversationEl.scrollHeight
}

async function ensureSession(): Promise<void> {
  const fromHash = window.location.hash.replace(/^#/, '')
  if (fromHash) {
    try {
      const turns = await client.getSession(fromHash)
      state = stateFromTurns(fromHash, turns)
      redraw()
      return
    } catch (error) {
      if (!(error instanceof ApiError && error.status === 404)) throw error
      // stale hash: fall through to a fresh session
    }
  }
  const sessionId = await client.createSession()
  window.location.hash = sessionId
  state = newSessionState(sessionId)
  redraw()
}

async function send(query: string): Promise<void> {
  startStream(state, query)
  redraw()
  try {
    for await (const event of client.chat(state.sessionId, query)) {
      applyEvent(state, event)
      redraw()
    }
  } catch (error) {
    if (error instanceof ApiError && error.status === 404) {
      // session evaporated server-side: start a fresh one
      window.location.hash = ''
      await ensureSession()
      return
    }
    streamFailed(state, error instanceof Error ? error.message : String(error))
    redraw()
  }
}

formEl.addEventListener('submit', (event) => {
  event.preventDefault()
  const query = inputEl.value.trim()
  if (!query || state.pendingStream) return
  inputEl.value = ''
  void send(query)
})

conversationEl.addEventListener('click', (event) => {
  const target = event.target as HTMLElement
  const ref = target.dataset['ref']
  if (ref) {
    event.preventDefault()
    void client.getParagraph(ref).then((paragraph) => {
      const citation = state.turns
        .flatMap((t) => t.citations)
        .find((c) => c.paragraph_ref === ref)
      if (citation) selectCitation(state, citation, paragraph)
      sourceEl.innerHTML = renderSourcePanel(paragraph)
    })
    return
  }
  const traceId = target.dataset['trace']
  if (traceId) {
    void client
      .getTrace(traceId)
      .then((trace) => {
        traceEl.innerHTML = renderTracePanel(trace)
      })
      .catch((error) => {
        if (error instanceof ApiError && error.status === 404) {
          traceEl.innerHTML = renderTraceNotFound(traceId)
        } else {
          throw error
        }
      })
    return
  }
  if (target.classList.contains('retry')) {
    const lastUser = [...state.turns].reverse().find((t) => t.role === 'user')
    if (lastUser) void send(lastUser.text)
  }
})

void ensureSession()
