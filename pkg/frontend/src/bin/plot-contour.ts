#!/usr/bin/env node
import { renderContour } from "../charts";

const [input, output] = process.argv.slice(2);
if (!input || !output) {
  console.error("usage: plot-contour <contour.csv> <out.svg>");
  process.exit(2);
}
renderContour(input, output);
console.log(`wrote ${output}`);
