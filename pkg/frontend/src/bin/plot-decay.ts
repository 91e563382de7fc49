#!/usr/bin/env node
import { renderDecay } from "../charts";

const [input, output] = process.argv.slice(2);
if (!input || !output) {
  console.error("usage: plot-decay <exp_decay.csv> <out.svg>");
  process.exit(2);
}
renderDecay(input, output);
console.log(`wrote ${output}`);
