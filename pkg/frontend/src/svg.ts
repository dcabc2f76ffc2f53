/**
 * Deterministic log-log SVG rendering: scatter with error bars, weighted
 * fit lines, dashed reference-slope guides, and a legend that annotates
 * each fitted slope. Fixed style, no timestamps, so equal input bytes
 * give equal output bytes.
 */

import { FigureData, RefSlope, Series } from "./figure";

export interface RenderOptions {
  title: string;
  xLabel: string;
  yLabel: string;
  refSlopes: RefSlope[];
}

const PALETTE = ["#4361ee", "#e63946", "#2d6a4f", "#9d4edd", "#f4a261"];
const GUIDE_COLOR = "#888";

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

function fmtTick(v: number): string {
  if (v >= 0.001 && v < 10000) {
    return String(+v.toPrecision(3));
  }
  return v.toExponential(1).replace(".0e", "e").replace("e+", "e");
}

function fmtPlain(v: number): string {
  return String(+v.toPrecision(4));
}

/** Ticks at 1, 2, 5 times powers of ten inside [min, max]. */
function logTicks(min: number, max: number): number[] {
  const ticks: number[] = [];
  const kLo = Math.floor(Math.log10(min));
  const kHi = Math.ceil(Math.log10(max));
  for (let k = kLo; k <= kHi; k++) {
    for (const m of [1, 2, 5]) {
      const t = m * Math.pow(10, k);
      if (t >= min * 0.999 && t <= max * 1.001) ticks.push(t);
    }
  }
  if (ticks.length > 8) {
    const decades = ticks.filter((t) => {
      const e = Math.log10(t);
      return Math.abs(e - Math.round(e)) < 1e-9;
    });
    if (decades.length >= 2) return decades;
  }
  return ticks;
}

// ---------------------------------------------------------------------------
// Chart builder
// ---------------------------------------------------------------------------

export function renderFigure(data: FigureData, opts: RenderOptions): string {
  const W = 560;
  const H = 400;
  const ml = 64;
  const mr = 20;
  const mt = 44;
  const mb = 48;
  const pw = W - ml - mr;
  const ph = H - mt - mb;

  // Log-space ranges over points and error-bar tips.
  const xs: number[] = [];
  const yLo: number[] = [];
  const yHi: number[] = [];
  for (const s of data.series) {
    for (const p of s.points) {
      xs.push(p.x);
      yHi.push(p.y + p.se);
      yLo.push(p.y - p.se > 0 ? p.y - p.se : p.y);
    }
  }
  const lxMin = Math.log10(Math.min(...xs));
  const lxMax = Math.log10(Math.max(...xs));
  const lyMin = Math.log10(Math.min(...yLo));
  const lyMax = Math.log10(Math.max(...yHi));
  const padX = 0.04 * (lxMax - lxMin || 1);
  const padY = 0.06 * (lyMax - lyMin || 1);
  const x0 = lxMin - padX;
  const x1 = lxMax + padX;
  const y0 = lyMin - padY;
  const y1 = lyMax + padY;
  const xOf = (v: number) => ml + ((Math.log10(v) - x0) / (x1 - x0)) * pw;
  const yOf = (v: number) => mt + ph - ((Math.log10(v) - y0) / (y1 - y0)) * ph;

  const subtitleParts: string[] = [];
  if (data.d !== null) subtitleParts.push(`d=${fmtPlain(data.d)}`);
  if (data.alpha !== null) subtitleParts.push(`alpha=${fmtPlain(data.alpha)}`);
  if (data.kappa !== null) subtitleParts.push(`kappa=${fmtPlain(data.kappa)}`);
  subtitleParts.push(`${xs.length} points`);
  if (data.excluded > 0) {
    subtitleParts.push(`${data.excluded} nonpositive row(s) excluded`);
  }
  const subtitle = subtitleParts.join(" · ");

  let s = `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${W} ${H}" font-family="Helvetica, Arial, sans-serif">\n`;
  s += `<rect width="${W}" height="${H}" fill="#fff"/>\n`;
  s += `<text x="${ml}" y="${mt - 26}" font-size="11" font-weight="600" fill="#222">${esc(opts.title)}</text>\n`;
  s += `<text x="${ml}" y="${mt - 14}" font-size="7.5" fill="#888">${esc(subtitle)}</text>\n`;
  s += `<defs><clipPath id="plot"><rect x="${ml}" y="${mt}" width="${pw}" height="${ph}"/></clipPath></defs>\n`;

  // Grid and y ticks.
  const yTicks = logTicks(Math.pow(10, y0), Math.pow(10, y1));
  for (const v of yTicks) {
    const y = yOf(v);
    s += `<line x1="${ml}" y1="${y.toFixed(1)}" x2="${ml + pw}" y2="${y.toFixed(1)}" stroke="#eee" stroke-width="0.5"/>\n`;
    s += `<line x1="${ml - 3}" y1="${y.toFixed(1)}" x2="${ml}" y2="${y.toFixed(1)}" stroke="#333" stroke-width="0.5"/>\n`;
    s += `<text x="${ml - 5}" y="${(y + 2.5).toFixed(1)}" text-anchor="end" font-size="7" fill="#555">${esc(fmtTick(v))}</text>\n`;
  }

  // X ticks: the distinct sampled abscissae when few, decades otherwise.
  const distinctX = [...new Set(xs)].sort((a, b) => a - b);
  const xTicks =
    distinctX.length <= 8
      ? distinctX
      : logTicks(Math.pow(10, x0), Math.pow(10, x1));
  for (const v of xTicks) {
    const x = xOf(v);
    s += `<line x1="${x.toFixed(1)}" y1="${mt + ph}" x2="${x.toFixed(1)}" y2="${mt + ph + 3}" stroke="#333" stroke-width="0.5"/>\n`;
    s += `<text x="${x.toFixed(1)}" y="${mt + ph + 12}" text-anchor="middle" font-size="7" fill="#555">${esc(fmtTick(v))}</text>\n`;
  }

  // Reference guide lines, anchored at the lead series' log centroid.
  const lead =
    data.series.find((sr) => sr.fit !== null) ?? data.series[0];
  const gx =
    lead.points.reduce((a, p) => a + Math.log(p.x), 0) / lead.points.length;
  const gy =
    lead.points.reduce((a, p) => a + Math.log(p.y), 0) / lead.points.length;
  const LN10 = Math.LN10;
  for (const ref of opts.refSlopes) {
    const yAt = (lx10: number) =>
      (gy + ref.slope * (lx10 * LN10 - gx)) / LN10;
    const px0 = ml;
    const px1 = ml + pw;
    const py0 = mt + ph - ((yAt(x0) - y0) / (y1 - y0)) * ph;
    const py1 = mt + ph - ((yAt(x1) - y0) / (y1 - y0)) * ph;
    s += `<line clip-path="url(#plot)" x1="${px0}" y1="${py0.toFixed(1)}" x2="${px1}" y2="${py1.toFixed(1)}" stroke="${GUIDE_COLOR}" stroke-width="1" stroke-dasharray="6,3"/>\n`;
  }

  // Fit lines across each fitted series' own x extent.
  data.series.forEach((sr, i) => {
    if (!sr.fit) return;
    const color = PALETTE[i % PALETTE.length];
    const la = Math.log(sr.points[0].x);
    const lb = Math.log(sr.points[sr.points.length - 1].x);
    const ya = Math.exp(sr.fit.intercept + sr.fit.slope * la);
    const yb = Math.exp(sr.fit.intercept + sr.fit.slope * lb);
    s += `<line clip-path="url(#plot)" x1="${xOf(sr.points[0].x).toFixed(1)}" y1="${yOf(ya).toFixed(1)}" x2="${xOf(sr.points[sr.points.length - 1].x).toFixed(1)}" y2="${yOf(yb).toFixed(1)}" stroke="${color}" stroke-width="1.2"/>\n`;
  });

  // Error bars, then markers.
  data.series.forEach((sr, i) => {
    const color = PALETTE[i % PALETTE.length];
    for (const p of sr.points) {
      if (p.se > 0) {
        const x = xOf(p.x);
        const top = yOf(p.y + p.se);
        const clipped = p.y - p.se <= 0;
        const bot = clipped ? mt + ph : yOf(p.y - p.se);
        s += `<line x1="${x.toFixed(1)}" y1="${top.toFixed(1)}" x2="${x.toFixed(1)}" y2="${bot.toFixed(1)}" stroke="${color}" stroke-width="0.7"/>\n`;
        s += `<line x1="${(x - 2.5).toFixed(1)}" y1="${top.toFixed(1)}" x2="${(x + 2.5).toFixed(1)}" y2="${top.toFixed(1)}" stroke="${color}" stroke-width="0.7"/>\n`;
        if (!clipped) {
          s += `<line x1="${(x - 2.5).toFixed(1)}" y1="${bot.toFixed(1)}" x2="${(x + 2.5).toFixed(1)}" y2="${bot.toFixed(1)}" stroke="${color}" stroke-width="0.7"/>\n`;
        }
      }
    }
    for (const p of sr.points) {
      s += `<circle cx="${xOf(p.x).toFixed(1)}" cy="${yOf(p.y).toFixed(1)}" r="2.2" fill="${color}"/>\n`;
    }
  });

  // Axes frame.
  s += `<line x1="${ml}" y1="${mt}" x2="${ml}" y2="${mt + ph}" stroke="#333" stroke-width="0.7"/>\n`;
  s += `<line x1="${ml}" y1="${mt + ph}" x2="${ml + pw}" y2="${mt + ph}" stroke="#333" stroke-width="0.7"/>\n`;
  s += `<text x="${ml + pw / 2}" y="${H - 6}" text-anchor="middle" font-size="8.5" fill="#444">${esc(opts.xLabel)} (log)</text>\n`;
  s += `<text x="14" y="${mt + ph / 2}" text-anchor="middle" font-size="8.5" fill="#444" transform="rotate(-90,14,${mt + ph / 2})">${esc(opts.yLabel)} (log)</text>\n`;

  // Legend: one entry per series (with its slope annotation) and per guide.
  const entries: { color: string; dash?: string; text: string }[] = [];
  data.series.forEach((sr, i) => {
    entries.push({
      color: PALETTE[i % PALETTE.length],
      text: sr.fit ? `${sr.kind}: ${slopeLabel(sr.fit)}` : sr.kind,
    });
  });
  for (const ref of opts.refSlopes) {
    entries.push({ color: GUIDE_COLOR, dash: "6,3", text: ref.label });
  }
  const legendW = Math.max(...entries.map((e) => e.text.length)) * 4.6 + 28;
  const legendH = entries.length * 11 + 6;
  const lx = ml + pw - legendW - 4;
  const ly = mt + 5;
  s += `<rect x="${lx}" y="${ly}" width="${legendW}" height="${legendH}" rx="2" fill="white" fill-opacity="0.88" stroke="#ddd" stroke-width="0.5"/>\n`;
  entries.forEach((e, i) => {
    const yy = ly + 9 + i * 11;
    s += `<line x1="${lx + 5}" y1="${yy - 2.5}" x2="${lx + 19}" y2="${yy - 2.5}" stroke="${e.color}" stroke-width="1.2"${e.dash ? ` stroke-dasharray="${e.dash}"` : ""}/>\n`;
    s += `<text x="${lx + 23}" y="${yy}" font-size="7" fill="#333">${esc(e.text)}</text>\n`;
  });

  s += `</svg>\n`;
  return s;
}

function slopeLabel(fit: { slope: number; slopeSe: number }): string {
  return `slope = ${fit.slope.toFixed(6)} ± ${fit.slopeSe.toFixed(6)}`;
}
