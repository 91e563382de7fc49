import { existsSync, readFileSync, writeFileSync } from "fs";
import { join } from "path";
import { PNG } from "pngjs";

import { readCsv, requireHeader, requireRows, SchemaError, toNumber } from "./csv";

export const STABILITY_HEADER = ["eta_tilde", "trial", "best_objective"] as const;

// Power-law display exponents: perturbation images are nearly flat, the
// reconstruction difference is spiky, so they get different gammas.
export const PERTURBATION_POWER = 4 / 5;
export const DIFFERENCE_POWER = 2 / 5;

export interface GrayImage {
  width: number;
  height: number;
  /** Row-major intensities in [0, 1]. */
  values: Float64Array;
}

/** Read a grayscale PNG at full stored depth (the harness writes 16-bit). */
export function readGray(path: string): GrayImage {
  const png = PNG.sync.read(readFileSync(path), { skipRescale: true } as never);
  const data = png.data as unknown as Uint8Array | Uint16Array;
  const peak = data instanceof Uint16Array ? 65535 : 255;
  const n = png.width * png.height;
  const values = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    values[i] = data[4 * i] / peak;
  }
  return { width: png.width, height: png.height, values };
}

// Fixed 9-stop dark-to-bright ramp (viridis-like), linearly interpolated.
const RAMP: [number, number, number][] = [
  [68, 1, 84],
  [71, 44, 122],
  [59, 81, 139],
  [44, 113, 142],
  [33, 144, 141],
  [39, 173, 129],
  [92, 200, 99],
  [170, 220, 50],
  [253, 231, 37],
];

export function colormap(v: number): [number, number, number] {
  const t = Math.min(1, Math.max(0, v)) * (RAMP.length - 1);
  const i = Math.min(RAMP.length - 2, Math.floor(t));
  const f = t - i;
  return [0, 1, 2].map((c) => Math.round(RAMP[i][c] + f * (RAMP[i + 1][c] - RAMP[i][c]))) as [
    number,
    number,
    number,
  ];
}

/** Apply v^power and the color ramp; return an encoded 8-bit RGBA PNG. */
export function encodePanel(img: GrayImage, power: number): Buffer {
  const png = new PNG({ width: img.width, height: img.height });
  for (let i = 0; i < img.values.length; i++) {
    const [r, g, b] = colormap(Math.pow(img.values[i], power));
    png.data[4 * i] = r;
    png.data[4 * i + 1] = g;
    png.data[4 * i + 2] = b;
    png.data[4 * i + 3] = 255;
  }
  return PNG.sync.write(png);
}

interface PanelRow {
  etaTilde: number;
  perturbation: string;
  difference: string;
}

/** Pair each eta_tilde with its perturbation/difference PNGs via the manifest. */
function panelRows(runDir: string): PanelRow[] {
  const manifestPath = join(runDir, "manifest.json");
  if (!existsSync(manifestPath)) {
    throw new SchemaError(
      `${manifestPath}: missing; stability panels need the run manifest to map PNGs to eta_tilde`,
    );
  }
  const manifest = JSON.parse(readFileSync(manifestPath, "utf8")) as {
    outputs?: Record<string, { eta_tilde?: number }>;
  };
  const partial = new Map<number, Partial<PanelRow>>();
  for (const [name, info] of Object.entries(manifest.outputs ?? {})) {
    const match = /^stability_\d+_(perturbation|difference)\.png$/.exec(name);
    if (!match || info.eta_tilde === undefined) continue;
    const row = partial.get(info.eta_tilde) ?? { etaTilde: info.eta_tilde };
    row[match[1] as "perturbation" | "difference"] = join(runDir, name);
    partial.set(info.eta_tilde, row);
  }
  const rows = [...partial.values()].sort((a, b) => a.etaTilde! - b.etaTilde!);
  for (const row of rows) {
    for (const kind of ["perturbation", "difference"] as const) {
      const path = row[kind];
      if (!path) {
        throw new SchemaError(`${runDir}: manifest lists no ${kind} PNG for eta_tilde=${row.etaTilde}`);
      }
      if (!existsSync(path)) {
        throw new SchemaError(`${path}: listed in the manifest but not on disk`);
      }
    }
  }
  if (rows.length === 0) {
    throw new SchemaError(`${runDir}: manifest lists no stability panel PNGs`);
  }
  return rows as PanelRow[];
}

const PANEL = 220;
const GAP = 14;
const LABEL_W = 240;
const HEADER_H = 46;

function svgImage(buf: Buffer, x: number, y: number): string {
  const uri = `data:image/png;base64,${buf.toString("base64")}`;
  return (
    `<image x="${x}" y="${y}" width="${PANEL}" height="${PANEL}" href="${uri}" ` +
    `style="image-rendering:pixelated"/>`
  );
}

function svgText(text: string, x: number, y: number, size = 14): string {
  return `<text x="${x}" y="${y}" font-family="sans-serif" font-size="${size}">${text}</text>`;
}

/** Panel montage: one row per eta_tilde, perturbation and difference columns. */
export function renderStability(runDir: string, outPath: string): void {
  const csvPath = join(runDir, "stability.csv");
  const csv = readCsv(csvPath);
  requireHeader(csvPath, csv.header, STABILITY_HEADER);
  requireRows(csvPath, csv);

  const best = new Map<number, number>();
  for (const [etaText, , objText] of csv.rows) {
    const etaTilde = toNumber(csvPath, "eta_tilde", etaText);
    const obj = toNumber(csvPath, "best_objective", objText);
    if (Number.isNaN(obj)) continue; // aborted trial sentinel
    best.set(etaTilde, Math.max(best.get(etaTilde) ?? -Infinity, obj));
  }

  const rows = panelRows(runDir);
  const width = LABEL_W + 2 * PANEL + 3 * GAP;
  const height = HEADER_H + rows.length * (PANEL + GAP);
  const parts: string[] = [
    `<svg width="${width}" height="${height}" xmlns="http://www.w3.org/2000/svg">`,
    `<rect width="${width}" height="${height}" fill="white"/>`,
    svgText(`perturbation, power ${PERTURBATION_POWER}`, LABEL_W + GAP, 30),
    svgText(`reconstruction difference, power ${DIFFERENCE_POWER}`, LABEL_W + PANEL + 2 * GAP, 30),
  ];
  rows.forEach((row, i) => {
    const y = HEADER_H + i * (PANEL + GAP);
    parts.push(svgText(`eta_tilde = ${row.etaTilde}`, GAP, y + PANEL / 2 - 10));
    const peak = best.get(row.etaTilde);
    if (peak !== undefined && peak > 0) {
      const amp = Math.sqrt(peak) / row.etaTilde;
      parts.push(svgText(`amplification = ${amp.toPrecision(3)}`, GAP, y + PANEL / 2 + 12, 12));
    }
    parts.push(svgImage(encodePanel(readGray(row.perturbation), PERTURBATION_POWER), LABEL_W + GAP, y));
    parts.push(
      svgImage(encodePanel(readGray(row.difference), DIFFERENCE_POWER), LABEL_W + PANEL + 2 * GAP, y),
    );
  });
  parts.push("</svg>");
  writeFileSync(outPath, parts.join("\n"));
}
