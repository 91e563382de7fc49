#!/usr/bin/env node
import { renderStability } from "../panels";

const [runDir, output] = process.argv.slice(2);
if (!runDir || !output) {
  console.error("usage: plot-stability <run-dir> <out.svg>");
  console.error("  run-dir must hold stability.csv, manifest.json and the panel PNGs");
  process.exit(2);
}
renderStability(runDir, output);
console.log(`wrote ${output}`);
