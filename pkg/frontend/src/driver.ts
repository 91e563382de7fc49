import { readdirSync } from "fs";
import { dirname, join } from "path";

import { renderCompare, renderContour, renderDecay } from "./charts";
import { renderStability } from "./panels";

export interface DriverResult {
  written: string[];
  failures: { file: string; error: string }[];
}

const TARGETS: Record<string, { out: string; render: (csvPath: string, outPath: string) => void }> = {
  "exp_decay.csv": { out: "decay.svg", render: renderDecay },
  "compare.csv": { out: "compare.svg", render: renderCompare },
  "contour.csv": { out: "contour.svg", render: renderContour },
  "stability.csv": {
    out: "stability.svg",
    render: (csvPath, outPath) => renderStability(dirname(csvPath), outPath),
  },
};

/** Render a figure for every recognized CSV in a run directory.
 *  Purely file-to-file: nothing here can invoke the solver. */
export function renderRunDirectory(runDir: string, outDir: string = runDir): DriverResult {
  const written: string[] = [];
  const failures: { file: string; error: string }[] = [];
  for (const name of readdirSync(runDir).sort()) {
    const target = TARGETS[name];
    if (!target) continue;
    const csvPath = join(runDir, name);
    const outPath = join(outDir, target.out);
    try {
      target.render(csvPath, outPath);
      written.push(outPath);
    } catch (err) {
      failures.push({ file: csvPath, error: err instanceof Error ? err.message : String(err) });
    }
  }
  return { written, failures };
}
