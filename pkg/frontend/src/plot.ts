/**
 * Render a federation trace as a self-contained SVG line chart.
 *
 * Each metric column becomes one series: shared-model norm on the left
 * axis, distance to the attack target on the right axis (log-scaled when
 * it spans several decades), target accuracy as a dashed 0..1 series.
 * Rounds with rejected reports are marked along the bottom edge. An empty
 * trace renders an axes-only chart; a single-round trace renders markers.
 */

import type { Trace, TraceRow } from "./trace.js";
import { TraceFormatError } from "./trace.js";

export const METRIC_COLUMNS = ["rho_norm", "target_dist", "target_accuracy"] as const;
export type MetricName = (typeof METRIC_COLUMNS)[number];

export interface PlotOptions {
  title?: string;
  width?: number;
  height?: number;
  /** Metric columns to draw; default: every metric with values. */
  metrics?: string[];
}

interface AxisScale {
  frac: (v: number) => number; // 0 = bottom of the plot, 1 = top
  ticks: Array<[number, string]>;
  axisLabel: string;
}

interface SeriesSpec {
  name: MetricName;
  color: string;
  dash?: string;
  points: Array<[number, number]>; // [round, metric value]
  scale: AxisScale;
  legendLabel: string;
}

const COLORS: Record<MetricName, string> = {
  rho_norm: "#4361ee",
  target_dist: "#e63946",
  target_accuracy: "#2d6a4f",
};
const REJECTED_COLOR = "#b5179e";

function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

function niceTicks(min: number, max: number, count: number): number[] {
  const range = max - min || 1;
  const rough = range / count;
  const mag = Math.pow(10, Math.floor(Math.log10(rough)));
  const step = [1, 2, 5, 10].map((m) => m * mag).find((n) => n >= rough) ?? rough;
  const ticks: number[] = [];
  for (let v = Math.ceil(min / step) * step; v <= max + step * 0.01; v += step) {
    ticks.push(v);
  }
  return ticks;
}

function decadeTicks(minExp: number, maxExp: number): number[] {
  const every = Math.max(1, Math.ceil((maxExp - minExp) / 6));
  const ticks: number[] = [];
  for (let e = Math.ceil(minExp); e <= maxExp; e += every) ticks.push(e);
  return ticks;
}

function fmt(v: number): string {
  if (v === 0) return "0";
  const a = Math.abs(v);
  if (a >= 1e4 || a < 1e-3) return v.toExponential(0).replace("+", "");
  return Number.isInteger(v) ? String(v) : String(Number(v.toPrecision(3)));
}

function metricValues(rows: TraceRow[], name: MetricName): Array<[number, number]> {
  const pick = (r: TraceRow): number | null => {
    if (name === "rho_norm") return r.rhoNorm;
    if (name === "target_dist") return r.targetDist;
    return r.targetAccuracy;
  };
  const out: Array<[number, number]> = [];
  for (const r of rows) {
    const v = pick(r);
    if (v !== null) out.push([r.t, v]);
  }
  return out;
}

function buildScale(name: MetricName, points: Array<[number, number]>): AxisScale {
  const vals = points.map(([, v]) => v);
  if (name === "target_accuracy") {
    return {
      frac: (v) => v,
      ticks: niceTicks(0, 1, 5).map((v) => [v, fmt(v)]),
      axisLabel: "target accuracy",
    };
  }
  if (name === "target_dist" && vals.length > 0) {
    const vMax = Math.max(...vals);
    const positive = vals.filter((v) => v > 0);
    const floor = positive.length > 0 ? Math.min(...positive) : 1;
    if (positive.length === vals.length && vMax / floor > 100) {
      const eMin = Math.floor(Math.log10(floor));
      const eMax = Math.ceil(Math.log10(vMax));
      return {
        frac: (v) => (Math.log10(Math.max(v, floor)) - eMin) / (eMax - eMin || 1),
        ticks: decadeTicks(eMin, eMax).map((e) => [Math.pow(10, e), `1e${e}`]),
        axisLabel: "distance to target (log)",
      };
    }
  }
  const label = name === "rho_norm" ? "shared-model norm" : "distance to target";
  const vMax = (vals.length > 0 ? Math.max(...vals, 1e-12) : 1) * 1.08;
  return {
    frac: (v) => v / vMax,
    ticks: niceTicks(0, vMax, 5).map((v) => [v, fmt(v)]),
    axisLabel: label,
  };
}

function selectMetrics(trace: Trace, requested?: string[]): MetricName[] {
  if (requested === undefined) {
    return METRIC_COLUMNS.filter(
      (m) => metricValues(trace.rows, m).length > 0,
    );
  }
  for (const name of requested) {
    if (!(METRIC_COLUMNS as readonly string[]).includes(name)) {
      throw new TraceFormatError(
        `unknown metric "${name}" (expected one of ${METRIC_COLUMNS.join(", ")})`,
      );
    }
  }
  const selected = METRIC_COLUMNS.filter((m) => requested.includes(m));
  if (trace.rows.length > 0) {
    for (const m of selected) {
      if (metricValues(trace.rows, m).length === 0) {
        throw new TraceFormatError(`metric "${m}" has no values in this trace`);
      }
    }
  }
  return selected;
}

export function plotTrace(trace: Trace, opts: PlotOptions = {}): string {
  const rows = trace.rows;
  const W = opts.width ?? 720;
  const H = opts.height ?? 300;
  const title = opts.title ?? "federation trace";
  const selected = selectMetrics(trace, opts.metrics);

  // Axis assignment: the first selected metric owns the left axis, the
  // next target metric owns the right axis, anything left over (only ever
  // the accuracy) is drawn dashed against its own 0..1 scale.
  const leftMetric = selected[0];
  const rightMetric = selected.find(
    (m) => m !== leftMetric && m !== "rho_norm",
  );

  const series: SeriesSpec[] = selected.map((name) => {
    const points = metricValues(rows, name);
    const scale = buildScale(name, points);
    const onAxis = name === leftMetric || name === rightMetric;
    return {
      name,
      color: COLORS[name],
      dash: name === "target_accuracy" ? "5,3" : undefined,
      points,
      scale,
      legendLabel:
        !onAxis && name === "target_accuracy"
          ? "target accuracy (0–1)"
          : scale.axisLabel,
    };
  });
  const byName = new Map(series.map((s) => [s.name, s]));

  const ml = 56;
  const mr = rightMetric !== undefined ? 56 : 20;
  const mt = 30;
  const mb = 40;
  const pw = W - ml - mr;
  const ph = H - mt - mb;

  const ts = rows.map((r) => r.t);
  const tMin = ts.length > 0 ? Math.min(...ts) : 0;
  const tMax = ts.length > 0 ? Math.max(...ts) : 1;
  const xOf = (t: number) => ml + ((t - tMin) / (tMax - tMin || 1)) * pw;
  const yOf = (scale: AxisScale, v: number) => mt + ph - scale.frac(v) * ph;

  let s = `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${W} ${H}" font-family="Helvetica, Arial, sans-serif">\n`;
  s += `<rect width="${W}" height="${H}" fill="#fff"/>\n`;
  s += `<text x="${ml}" y="${mt - 16}" font-size="11" font-weight="600" fill="#222">${esc(title)}</text>\n`;
  const rejectedTotal = rows.reduce((acc, r) => acc + r.rejectedCount, 0);
  s += `<text x="${ml}" y="${mt - 5}" font-size="7.5" fill="#888">${rows.length} rounds · ${rejectedTotal} rejected reports</text>\n`;

  // Left axis: grid lines and ticks (a bare 0..1 frame when no series).
  const leftSeries = leftMetric !== undefined ? byName.get(leftMetric) : undefined;
  const leftScale = leftSeries?.scale ?? buildScale("target_accuracy", []);
  const leftColor = leftSeries?.color ?? "#666";
  for (const [v, label] of leftScale.ticks) {
    const y = yOf(leftScale, v);
    s += `<line x1="${ml}" y1="${y.toFixed(1)}" x2="${ml + pw}" y2="${y.toFixed(1)}" stroke="#eee" stroke-width="0.5"/>\n`;
    s += `<text x="${ml - 5}" y="${(y + 2.5).toFixed(1)}" text-anchor="end" font-size="7" fill="${leftColor}">${esc(label)}</text>\n`;
  }
  if (leftSeries !== undefined) {
    s += `<text x="13" y="${mt + ph / 2}" text-anchor="middle" font-size="8.5" fill="${leftColor}" transform="rotate(-90,13,${mt + ph / 2})">${esc(leftScale.axisLabel)}</text>\n`;
  }

  // Right axis ticks.
  const rightSeries = rightMetric !== undefined ? byName.get(rightMetric) : undefined;
  if (rightSeries !== undefined) {
    for (const [v, label] of rightSeries.scale.ticks) {
      const y = yOf(rightSeries.scale, v);
      s += `<line x1="${ml + pw}" y1="${y.toFixed(1)}" x2="${ml + pw + 3}" y2="${y.toFixed(1)}" stroke="#333" stroke-width="0.5"/>\n`;
      s += `<text x="${ml + pw + 5}" y="${(y + 2.5).toFixed(1)}" text-anchor="start" font-size="7" fill="${rightSeries.color}">${esc(label)}</text>\n`;
    }
    s += `<text x="${W - 12}" y="${mt + ph / 2}" text-anchor="middle" font-size="8.5" fill="${rightSeries.color}" transform="rotate(90,${W - 12},${mt + ph / 2})">${esc(rightSeries.scale.axisLabel)}</text>\n`;
  }

  // Series: polylines, or a marker when there is only a single round.
  for (const sr of series) {
    if (sr.points.length === 0) continue;
    if (sr.points.length === 1) {
      const [t, v] = sr.points[0];
      s += `<circle cx="${xOf(t).toFixed(1)}" cy="${yOf(sr.scale, v).toFixed(1)}" r="2.5" fill="${sr.color}"/>\n`;
      continue;
    }
    const pts = sr.points
      .map(([t, v]) => `${xOf(t).toFixed(1)},${yOf(sr.scale, v).toFixed(1)}`)
      .join(" ");
    s += `<polyline fill="none" stroke="${sr.color}" stroke-width="1.2"${sr.dash ? ` stroke-dasharray="${sr.dash}"` : ""} points="${pts}"/>\n`;
  }

  // Rejected-report markers.
  for (const r of rows) {
    if (r.rejectedCount === 0) continue;
    const x = xOf(r.t);
    s += `<line x1="${x.toFixed(1)}" y1="${mt + ph - 6}" x2="${x.toFixed(1)}" y2="${mt + ph}" stroke="${REJECTED_COLOR}" stroke-width="1"/>\n`;
  }

  // Axes frame + x ticks.
  s += `<line x1="${ml}" y1="${mt}" x2="${ml}" y2="${mt + ph}" stroke="#333" stroke-width="0.7"/>\n`;
  s += `<line x1="${ml}" y1="${mt + ph}" x2="${ml + pw}" y2="${mt + ph}" stroke="#333" stroke-width="0.7"/>\n`;
  if (rightSeries !== undefined) {
    s += `<line x1="${ml + pw}" y1="${mt}" x2="${ml + pw}" y2="${mt + ph}" stroke="#333" stroke-width="0.7"/>\n`;
  }
  for (const v of niceTicks(tMin, tMax, 8)) {
    const x = xOf(v);
    s += `<line x1="${x.toFixed(1)}" y1="${mt + ph}" x2="${x.toFixed(1)}" y2="${mt + ph + 3}" stroke="#333" stroke-width="0.5"/>\n`;
    s += `<text x="${x.toFixed(1)}" y="${mt + ph + 12}" text-anchor="middle" font-size="7" fill="#666">${esc(fmt(v))}</text>\n`;
  }
  s += `<text x="${ml + pw / 2}" y="${H - 6}" text-anchor="middle" font-size="8.5" fill="#444">round</text>\n`;

  // Legend.
  const entries: Array<{ color: string; label: string; dash?: string }> =
    series.map((sr) => ({ color: sr.color, label: sr.legendLabel, dash: sr.dash }));
  if (rejectedTotal > 0) {
    entries.push({ color: REJECTED_COLOR, label: "rejected report" });
  }
  if (entries.length > 0) {
    const legendW = Math.max(...entries.map((e) => e.label.length)) * 4.3 + 26;
    const legendH = entries.length * 11 + 6;
    const lx = ml + pw - legendW - 6;
    const ly = mt + 4;
    s += `<rect x="${lx}" y="${ly}" width="${legendW}" height="${legendH}" rx="2" fill="white" fill-opacity="0.85" stroke="#ddd" stroke-width="0.5"/>\n`;
    entries.forEach((e, i) => {
      const yy = ly + 9 + i * 11;
      s += `<line x1="${lx + 5}" y1="${yy}" x2="${lx + 19}" y2="${yy}" stroke="${e.color}" stroke-width="1.2"${e.dash ? ` stroke-dasharray="${e.dash}"` : ""}/>\n`;
      s += `<text x="${lx + 23}" y="${yy + 2.5}" font-size="7" fill="#444">${esc(e.label)}</text>\n`;
    });
  }

  s += `</svg>\n`;
  return s;
}
