/**
 * Figure model for loopsoup experiment CSVs.
 *
 * The measurement tool writes rows under one fixed header; this module
 * parses them, groups them into per-kind series, and reproduces the
 * tool's weighted log-log fit so the annotated slope agrees with the
 * fits.json sidecar. Parsing refuses any file whose header differs from
 * the contract, so schema drift fails loudly instead of plotting the
 * wrong column.
 */

import { readFileSync, writeFileSync } from "fs";

import { renderFigure } from "./svg";

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

export const CSV_HEADER =
  "kind,d,alpha,kappa,n,value,stderr,replicas,walltime_s";

/** One measurement row, one CSV line. */
export interface EstimateRow {
  kind: string;
  d: number;
  alpha: number;
  kappa: number;
  n: number;
  value: number;
  stderr: number;
  replicas: number;
  walltime_s: number;
}

/** A dashed guide line of fixed slope through the data. */
export interface RefSlope {
  slope: number;
  label: string;
}

export interface FigureSpec {
  csv: string;
  x: string;
  y: string;
  refSlopes: RefSlope[];
  out: string;
  title?: string;
}

export interface SlopeFit {
  slope: number;
  slopeSe: number;
  intercept: number;
  pointsUsed: number;
  excludedSmallN: number[];
}

/** One plotted point: x, y, and the reported standard error on y. */
export interface Point {
  x: number;
  y: number;
  se: number;
}

export interface Series {
  kind: string;
  points: Point[];
  fit: SlopeFit | null;
}

export interface FigureData {
  series: Series[];
  excluded: number;
  d: number | null;
  alpha: number | null;
  kappa: number | null;
}

const NUMERIC_COLUMNS = CSV_HEADER.split(",").slice(1);

// ---------------------------------------------------------------------------
// CSV parsing
// ---------------------------------------------------------------------------

export function parseCsv(text: string): EstimateRow[] {
  const lines = text.split("\n").filter((l) => l.trim().length > 0);
  if (lines.length === 0 || lines[0].trim() !== CSV_HEADER) {
    throw new Error(
      `unexpected CSV header; the contract is "${CSV_HEADER}"`
    );
  }
  return lines.slice(1).map((line, i) => {
    const parts = line.split(",");
    if (parts.length !== 9) {
      throw new Error(`line ${i + 2}: expected 9 fields, got ${parts.length}`);
    }
    const nums = parts.slice(1).map((p, j) => {
      const v = Number(p);
      if (!Number.isFinite(v)) {
        throw new Error(
          `line ${i + 2}: column ${NUMERIC_COLUMNS[j]} is not a number: ${p}`
        );
      }
      return v;
    });
    return {
      kind: parts[0],
      d: nums[0],
      alpha: nums[1],
      kappa: nums[2],
      n: nums[3],
      value: nums[4],
      stderr: nums[5],
      replicas: nums[6],
      walltime_s: nums[7],
    };
  });
}

// ---------------------------------------------------------------------------
// Weighted log-log fit (mirrors the measurement tool)
// ---------------------------------------------------------------------------

/**
 * Weighted least squares of log y on log x, weights 1/relSE^2 with the
 * relative error floored at 1e-12 for exact inputs. The smallest-x point
 * is dropped when its relative error exceeds 20%. Returns null when
 * fewer than 3 usable points remain; callers plot the series without a
 * fit line in that case.
 */
export function fitLogLog(points: Point[]): SlopeFit | null {
  let pts = [...points].sort(
    (a, b) => a.x - b.x || a.y - b.y || a.se - b.se
  );
  const excluded: number[] = [];
  if (pts.length > 0 && pts[0].se / pts[0].y > 0.2) {
    excluded.push(pts[0].x);
    pts = pts.slice(1);
  }
  if (pts.length < 3) return null;
  const lx = pts.map((p) => Math.log(p.x));
  const ly = pts.map((p) => Math.log(p.y));
  const w = pts.map((p) => 1 / Math.max(p.se / p.y, 1e-12) ** 2);
  const wSum = w.reduce((a, b) => a + b, 0);
  const xbar = lx.reduce((a, v, i) => a + w[i] * v, 0) / wSum;
  const ybar = ly.reduce((a, v, i) => a + w[i] * v, 0) / wSum;
  let sxx = 0;
  let sxy = 0;
  for (let i = 0; i < pts.length; i++) {
    sxx += w[i] * (lx[i] - xbar) ** 2;
    sxy += w[i] * (lx[i] - xbar) * (ly[i] - ybar);
  }
  const slope = sxy / sxx;
  return {
    slope,
    slopeSe: 1 / Math.sqrt(sxx),
    intercept: ybar - slope * xbar,
    pointsUsed: pts.length,
    excludedSmallN: excluded,
  };
}

// ---------------------------------------------------------------------------
// Series assembly
// ---------------------------------------------------------------------------

function columnValue(row: EstimateRow, column: string): number {
  if (!NUMERIC_COLUMNS.includes(column)) {
    throw new Error(
      `no numeric column "${column}"; choose one of ${NUMERIC_COLUMNS.join(", ")}`
    );
  }
  return row[column as keyof EstimateRow] as number;
}

function uniqueOrNull(values: number[]): number | null {
  const set = new Set(values);
  return set.size === 1 ? values[0] : null;
}

/**
 * Group rows into per-kind series on log-log axes. Rows with a
 * nonpositive x or y are excluded and counted; both axes are
 * logarithmic, so such rows have no finite position. Error bars carry
 * the stderr column only when y is the value column.
 */
export function buildFigureData(
  rows: EstimateRow[],
  xColumn: string,
  yColumn: string
): FigureData {
  const byKind = new Map<string, Point[]>();
  let excluded = 0;
  const kept: EstimateRow[] = [];
  for (const row of rows) {
    const x = columnValue(row, xColumn);
    const y = columnValue(row, yColumn);
    if (x <= 0 || y <= 0) {
      excluded++;
      continue;
    }
    kept.push(row);
    const se = yColumn === "value" ? row.stderr : 0;
    let pts = byKind.get(row.kind);
    if (!pts) {
      pts = [];
      byKind.set(row.kind, pts);
    }
    pts.push({ x, y, se });
  }
  const series: Series[] = [];
  byKind.forEach((points, kind) => {
    points.sort((a, b) => a.x - b.x);
    series.push({ kind, points, fit: fitLogLog(points) });
  });
  return {
    series,
    excluded,
    d: uniqueOrNull(kept.map((r) => r.d)),
    alpha: uniqueOrNull(kept.map((r) => r.alpha)),
    kappa: uniqueOrNull(kept.map((r) => r.kappa)),
  };
}

// ---------------------------------------------------------------------------
// The render operation
// ---------------------------------------------------------------------------

export interface RenderResult {
  svg: string;
  excluded: number;
  fits: Record<string, SlopeFit>;
}

/** Parse "S:LABEL" into a reference slope (label defaults to "slope S"). */
export function parseRefSlope(text: string): RefSlope {
  const idx = text.indexOf(":");
  const head = idx < 0 ? text : text.slice(0, idx);
  const slope = Number(head);
  if (!Number.isFinite(slope)) {
    throw new Error(`reference slope is not a number: "${text}"`);
  }
  const label = idx < 0 ? `slope ${head}` : text.slice(idx + 1);
  return { slope, label };
}

/** Read spec.csv, build the figure, and write the SVG to spec.out. */
export function renderLogLog(spec: FigureSpec): RenderResult {
  const rows = parseCsv(readFileSync(spec.csv, "utf-8"));
  const data = buildFigureData(rows, spec.x, spec.y);
  const total = data.series.reduce((a, s) => a + s.points.length, 0);
  if (total < 3) {
    throw new Error(
      `need at least 3 rows with positive ${spec.x} and ${spec.y}, ` +
        `have ${total} (${data.excluded} excluded)`
    );
  }
  const svg = renderFigure(data, {
    title: spec.title ?? data.series.map((s) => s.kind).join(" / "),
    xLabel: spec.x,
    yLabel: spec.y,
    refSlopes: spec.refSlopes,
  });
  writeFileSync(spec.out, svg);
  const fits: Record<string, SlopeFit> = {};
  for (const s of data.series) {
    if (s.fit) fits[s.kind] = s.fit;
  }
  return { svg, excluded: data.excluded, fits };
}
