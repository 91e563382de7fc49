import { writeFileSync } from "fs";
import * as echarts from "echarts";

import { Csv, readCsv, requireHeader, requireRows, SchemaError, toNumber } from "./csv";

export const DECAY_HEADER = ["eta", "k", "rel_err"] as const;
export const COMPARE_HEADER = ["variant", "total_iter", "rel_err"] as const;
export const CONTOUR_HEADER = ["eta", "zeta", "err"] as const;

interface Series {
  name: string;
  points: [number, number][];
}

/** Group (key, x, y) rows into one series per key, first-appearance order.
 *  The emitting harness sorts rows ascending, so groups come out ordered. */
function groupedSeries(path: string, csv: Csv, label: string): Series[] {
  const byKey = new Map<string, [number, number][]>();
  for (const [key, xText, yText] of csv.rows) {
    const x = toNumber(path, csv.header[1], xText);
    const y = toNumber(path, csv.header[2], yText);
    if (!(y > 0)) {
      throw new SchemaError(`${path}: ${csv.header[2]}=${yText} is not positive; log axis needs > 0`);
    }
    let points = byKey.get(key);
    if (!points) {
      points = [];
      byKey.set(key, points);
    }
    points.push([x, y]);
  }
  return [...byKey.entries()].map(([key, points]) => ({ name: `${label}${key}`, points }));
}

function lineOption(series: Series[], xName: string, yName: string, title: string): echarts.EChartsOption {
  return {
    animation: false,
    title: { text: title, left: "center" },
    legend: { data: series.map((s) => s.name), bottom: 0 },
    grid: { left: 70, right: 30, top: 50, bottom: 60 },
    xAxis: { type: "value", name: xName, nameLocation: "middle", nameGap: 28 },
    yAxis: { type: "log", name: yName },
    series: series.map((s) => ({
      name: s.name,
      type: "line",
      data: s.points,
      symbolSize: 5,
    })),
  };
}

export function decayOption(path: string): echarts.EChartsOption {
  const csv = readCsv(path);
  requireHeader(path, csv.header, DECAY_HEADER);
  requireRows(path, csv);
  return lineOption(groupedSeries(path, csv, "eta="), "restart k", "relative error",
    "per-restart error decay");
}

export function compareOption(path: string): echarts.EChartsOption {
  const csv = readCsv(path);
  requireHeader(path, csv.header, COMPARE_HEADER);
  requireRows(path, csv);
  return lineOption(groupedSeries(path, csv, ""), "total iterations", "relative error",
    "restarted vs fixed smoothing, equal budget");
}

export function contourOption(path: string): echarts.EChartsOption {
  const csv = readCsv(path);
  requireHeader(path, csv.header, CONTOUR_HEADER);
  requireRows(path, csv);

  const etas: string[] = [];
  const zetas: string[] = [];
  const seen = new Set<string>();
  const cells: [number, number, number][] = [];
  for (const [etaText, zetaText, errText] of csv.rows) {
    const key = `${etaText}|${zetaText}`;
    if (seen.has(key)) {
      throw new SchemaError(`${path}: duplicate grid cell eta=${etaText}, zeta=${zetaText}`);
    }
    seen.add(key);
    if (!etas.includes(etaText)) etas.push(etaText);
    if (!zetas.includes(zetaText)) zetas.push(zetaText);
    const err = toNumber(path, "err", errText);
    cells.push([etas.indexOf(etaText), zetas.indexOf(zetaText), err > 0 ? Math.log10(err) : NaN]);
  }
  if (cells.length !== etas.length * zetas.length) {
    throw new SchemaError(
      `${path}: grid is ragged: ${cells.length} cells for ${etas.length}x${zetas.length} axes`,
    );
  }

  const finite = cells.map((c) => c[2]).filter(Number.isFinite);
  const lo = Math.min(...finite);
  const hi = Math.max(...finite);
  return {
    animation: false,
    title: { text: "final error over (eta, zeta)", left: "center" },
    grid: { left: 90, right: 110, top: 50, bottom: 60 },
    // the axes are log-spaced by construction; category labels carry the values
    xAxis: { type: "category", data: etas, name: "eta", nameLocation: "middle", nameGap: 28 },
    yAxis: { type: "category", data: zetas, name: "zeta" },
    visualMap: {
      type: "continuous",
      min: lo,
      max: hi,
      right: 10,
      top: "center",
      calculable: false,
      formatter: (value) => `1e${Number(value).toFixed(1)}`,
      inRange: { color: ["#440154", "#365c8d", "#1fa187", "#fde725"] },
    },
    series: [{ type: "heatmap", data: cells, label: { show: false } }],
  };
}

export function renderToSvg(option: echarts.EChartsOption, width = 860, height = 560): string {
  const chart = echarts.init(null, null, { renderer: "svg", ssr: true, width, height });
  try {
    chart.setOption(option);
    return chart.renderToSVGString();
  } finally {
    chart.dispose();
  }
}

export function renderDecay(csvPath: string, outPath: string): void {
  writeFileSync(outPath, renderToSvg(decayOption(csvPath)));
}

export function renderCompare(csvPath: string, outPath: string): void {
  writeFileSync(outPath, renderToSvg(compareOption(csvPath)));
}

export function renderContour(csvPath: string, outPath: string): void {
  writeFileSync(outPath, renderToSvg(contourOption(csvPath), 720, 620));
}
