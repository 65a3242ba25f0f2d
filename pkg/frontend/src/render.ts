/**
 * HTML renderers. Pure string-in/string-out so they are testable without a
 * DOM; main.ts injects the results and wires event delegation.
 */

import type { ParagraphView, TraceView } from './api.js'
import type { UiSessionState, UiTurn } from './state.js'

export function escapeHtml(text: string): string {
  return text
    .replaceAll('&', '&amp;')
    .replaceAll('<', '&lt;')
    .replaceAll('>', '&gt;')
    .replaceAll('"', '&quot;')
}

/** Inline "[n]" markers become citation links when n is in the turn's citations. */
export function renderAnswerText(turn: UiTurn): string {
  const known = new Map(turn.citations.map((c) => [c.index, c.paragraph_ref]))
  return escapeHtml(turn.text).replace(/\[(\d+)\]/g, (match, digits: string) => {
    const ref = known.get(Number(digits))
    if (!ref) return match
    return `<a class="citation" href="#source" data-ref="${escapeHtml(ref)}">[${digits}]</a>`
  })
}

export function renderTurn(turn: UiTurn): string {
  const classes = ['turn', turn.role, turn.incomplete ? 'incomplete' : '']
    .filter(Boolean)
    .join(' ')
  const body = turn.role === 'assistant' ? renderAnswerText(turn) : escapeHtml(turn.text)
  const trace =
    turn.traceId === null
      ? ''
      : `<button class="trace-link" data-trace="${escapeHtml(turn.traceId)}">trace</button>`
  const spinner = turn.incomplete ? '<span class="spinner">…</span>' : ''
  return `<div class="${classes}">${body}${spinner}${trace}</div>`
}

export function renderConversation(state: UiSessionState): string {
  const banner = state.connectionError
    ? `<div class="banner error">connection lost: ${escapeHtml(state.connectionError)} <button class="retry">retry</button></div>`
    : ''
  return banner + state.turns.map(renderTurn).join('\n')
}

export function renderSourcePanel(paragraph: ParagraphView): string {
  return [
    '<aside class="source-panel">',
    `<h3>${escapeHtml(paragraph.document_title)} <small>${escapeHtml(paragraph.source_type)}</small></h3>`,
    `<p class="ref">${escapeHtml(paragraph.ref)}</p>`,
    `<blockquote>${escapeHtml(paragraph.text)}</blockquote>`,
    '</aside>',
  ].join('')
}

function errorBadge(trace: TraceView, stage: string): string {
  const message = trace.errors?.[stage]
  return message ? `<span class="badge error" title="${escapeHtml(message)}">error</span>` : ''
}

export function renderTracePanel(trace: TraceView): string {
  const parts: string[] = [`<section class="trace" data-trace-id="${escapeHtml(trace.trace_id)}">`]
  parts.push(`<h2>Retrieval trace</h2><p class="query">${escapeHtml(trace.query)}</p>`)

  const rewrite = trace.stages.rewrite
  parts.push('<details open class="stage" data-stage="rewrite"><summary>rewrite' + errorBadge(trace, 'rewrite') + '</summary>')
  if (rewrite) {
    parts.push(`<p>${escapeHtml(rewrite.rewritten_query)}</p>`)
    parts.push(`<p class="keywords">${rewrite.keywords.map(escapeHtml).join(' · ')}</p>`)
  }
  parts.push('</details>')

  const intention = trace.stages.intention
  parts.push('<details open class="stage" data-stage="intention"><summary>intention' + errorBadge(trace, 'intention') + '</summary>')
  if (intention) {
    parts.push(
      `<p>sources: ${intention.sources.map(escapeHtml).join(', ')} (confidence ${intention.confidence.toFixed(2)})</p>`,
    )
  }
  parts.push('</details>')

  const recall = trace.stages.text_recall ?? []
  parts.push(
    `<details open class="stage" data-stage="text_recall"><summary>text recall (${recall.length})</summary><ol>` +
      recall
        .map((h) => `<li>${escapeHtml(h.doc_id)} <span class="score">${h.score.toFixed(4)}</span></li>`)
        .join('') +
      '</ol></details>',
  )

  const realtime = trace.stages.realtime ?? []
  if (realtime.length > 0) {
    parts.push(
      `<details open class="stage" data-stage="realtime"><summary>realtime (${realtime.length})</summary><ol>` +
        realtime.map((id) => `<li>${escapeHtml(id)}</li>`).join('') +
        '</ol></details>',
    )
  }

  const rerank = trace.stages.rerank ?? []
  parts.push(
    `<details open class="stage" data-stage="rerank"><summary>rerank (${rerank.length})</summary><ol>` +
      rerank
        .map(
          (h) =>
            `<li>${escapeHtml(h.paragraph_ref)} <span class="score">${h.score.toFixed(4)}</span></li>`,
        )
        .join('') +
      '</ol></details>',
  )

  const bundle = trace.stages.bundle ?? []
  const insufficient = bundle.length === 0 ? '<span class="badge warn">insufficient knowledge</span>' : ''
  parts.push(
    `<details open class="stage" data-stage="bundle"><summary>bundle (${bundle.length})${insufficient}${errorBadge(trace, 'generate')}</summary><ol>` +
      bundle
        .map(
          (e) =>
            `<li>[${e.index}] ${escapeHtml(e.text)}${e.condensed ? ' <span class="badge">condensed</span>' : ''}</li>`,
        )
        .join('') +
      '</ol></details>',
  )

  const fetchErrors = Object.keys(trace.errors ?? {}).filter((k) => k.startsWith('fetch:'))
  for (const key of fetchErrors) {
    parts.push(`<p class="badge error" data-stage="${escapeHtml(key)}">${escapeHtml(trace.errors[key] ?? '')}</p>`)
  }
  if (trace.errors?.pipeline) {
    parts.push(`<p class="badge error" data-stage="pipeline">${escapeHtml(trace.errors.pipeline)}</p>`)
  }
  parts.push('</section>')
  return parts.join('\n')
}

export function renderTraceNotFound(traceId: string): string {
  return `<section class="trace empty"><p>No trace ${escapeHtml(traceId)} — it may have expired.</p></section>`
}
