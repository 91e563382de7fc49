#!/usr/bin/env node
import { renderRunDirectory } from "../driver";

const [runDir, outDir] = process.argv.slice(2);
if (!runDir) {
  console.error("usage: render-run <run-dir> [out-dir]");
  process.exit(2);
}
const result = renderRunDirectory(runDir, outDir);
for (const path of result.written) {
  console.log(`wrote ${path}`);
}
for (const failure of result.failures) {
  // the message already names the offending file
  console.error(failure.error);
}
if (result.failures.length > 0) {
  process.exit(1);
}
if (result.written.length === 0) {
  console.error(`${runDir}: no recognized experiment CSVs`);
  process.exit(1);
}
