#!/usr/bin/env node
import { renderCompare } from "../charts";

const [input, output] = process.argv.slice(2);
if (!input || !output) {
  console.error("usage: plot-compare <compare.csv> <out.svg>");
  process.exit(2);
}
renderCompare(input, output);
console.log(`wrote ${output}`);
