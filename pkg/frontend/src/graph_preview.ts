/** SVG preview of a weighted testing graph. */

import type { DesignDoc } from "./types.js";
import { hypothesisNames } from "./validate.js";

const R = 28;

function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;").replace(/"/g, "&quot;");
}

function fmt(x: number): string {
  const r = Math.round(x * 1000) / 1000;
  return String(r);
}

/**
 * Render the design's graph (nodes with weights, arrows with transition
 * fractions) as a standalone SVG string. Nodes are laid out on a circle.
 */
export function renderGraphPreview(design: DesignDoc, width = 480, height = 360): string {
  const names = hypothesisNames(design);
  const m = names.length;
  const cx = width / 2;
  const cy = height / 2;
  const rad = Math.min(width, height) / 2 - R - 24;
  const pos = names.map((_, i) => {
    const a = -Math.PI / 2 + (2 * Math.PI * i) / m;
    return { x: cx + rad * Math.cos(a), y: cy + rad * Math.sin(a) };
  });

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${width} ${height}" class="graph-preview" role="img">`,
    `<defs><marker id="arrow" viewBox="0 0 10 10" refX="9" refY="5" markerWidth="7" markerHeight="7" orient="auto-start-reverse"><path d="M 0 0 L 10 5 L 0 10 z" fill="#555"/></marker></defs>`,
  );

  for (let i = 0; i < m; i++) {
    for (let j = 0; j < m; j++) {
      const gij = design.transition[i]?.[j] ?? 0;
      if (i === j || gij <= 0) continue;
      const a = pos[i];
      const b = pos[j];
      const dx = b.x - a.x;
      const dy = b.y - a.y;
      const d = Math.hypot(dx, dy) || 1;
      const ux = dx / d;
      const uy = dy / d;
      // Offset sideways so a pair of opposite arrows does not overlap.
      const off = design.transition[j]?.[i] > 0 ? 7 : 0;
      const px = -uy * off;
      const py = ux * off;
      const x1 = a.x + ux * (R + 2) + px;
      const y1 = a.y + uy * (R + 2) + py;
      const x2 = b.x - ux * (R + 6) + px;
      const y2 = b.y - uy * (R + 6) + py;
      const lx = (x1 + x2) / 2 + px * 2 - uy * 10;
      const ly = (y1 + y2) / 2 + py * 2 + ux * 10;
      parts.push(
        `<line class="edge" data-from="${i}" data-to="${j}" x1="${fmt(x1)}" y1="${fmt(y1)}" x2="${fmt(x2)}" y2="${fmt(y2)}" stroke="#555" stroke-width="1.5" marker-end="url(#arrow)"/>`,
        `<text class="edge-label" x="${fmt(lx)}" y="${fmt(ly)}" font-size="11" text-anchor="middle" fill="#555">${fmt(gij)}</text>`,
      );
    }
  }

  names.forEach((name, i) => {
    const p = pos[i];
    const w = design.initial_weights[i] ?? 0;
    parts.push(
      `<g class="node" data-index="${i}">`,
      `<circle cx="${fmt(p.x)}" cy="${fmt(p.y)}" r="${R}" fill="#eef4fb" stroke="#2b5f9e" stroke-width="1.5"/>`,
      `<text x="${fmt(p.x)}" y="${fmt(p.y - 4)}" font-size="13" font-weight="bold" text-anchor="middle" fill="#1d3a5f">${esc(name)}</text>`,
      `<text x="${fmt(p.x)}" y="${fmt(p.y + 12)}" font-size="11" text-anchor="middle" fill="#1d3a5f">${fmt(w)}</text>`,
      `</g>`,
    );
  });

  parts.push("</svg>");
  return parts.join("");
}
