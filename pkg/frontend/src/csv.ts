import { readFileSync } from "fs";

export interface Csv {
  header: string[];
  rows: string[][];
}

/** Raised when a file does not match the expected experiment-output schema. */
export class SchemaError extends Error {}

export function readCsv(path: string): Csv {
  const lines = readFileSync(path, "utf8")
    .split("\n")
    .filter((line) => line.length > 0);
  if (lines.length === 0) {
    throw new SchemaError(`${path}: empty file, expected a header row`);
  }
  const header = lines[0].split(",");
  const rows = lines.slice(1).map((line, i) => {
    const cells = line.split(",");
    if (cells.length !== header.length) {
      throw new SchemaError(
        `${path}: row ${i + 1} has ${cells.length} cells but the header has ${header.length}`,
      );
    }
    return cells;
  });
  return { header, rows };
}

export function requireHeader(path: string, got: string[], expected: readonly string[]): void {
  if (got.length === expected.length && expected.every((name, i) => got[i] === name)) {
    return;
  }
  let offender = "";
  for (let i = 0; i < Math.max(got.length, expected.length); i++) {
    if (got[i] !== expected[i]) {
      offender = got[i] ?? `missing "${expected[i]}"`;
      break;
    }
  }
  throw new SchemaError(
    `${path}: header "${got.join(",")}" does not match expected "${expected.join(",")}" ` +
      `(offending column: ${offender})`,
  );
}

export function requireRows(path: string, csv: Csv): void {
  if (csv.rows.length === 0) {
    throw new SchemaError(`${path}: no data rows (header only)`);
  }
}

/** Strict numeric cell parse; "nan" is allowed (aborted-trial sentinel). */
export function toNumber(path: string, column: string, cell: string): number {
  if (cell === "nan") return NaN;
  const value = Number(cell);
  if (!Number.isFinite(value)) {
    throw new SchemaError(`${path}: column ${column}: cannot parse "${cell}" as a number`);
  }
  return value;
}
