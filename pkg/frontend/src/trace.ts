/**
 * Federation trace CSV: parsing and validation.
 *
 * Expected header (in this order):
 *
 *   t,target_dist,target_accuracy,rho_norm,rejected_count[,rho_0..rho_{d-1}]
 *
 * One row per round, evaluated at that round's starting shared model; a
 * header with no rows is a valid empty trace. `target_dist` /
 * `target_accuracy` are blank when the run had no target or no evaluation
 * queries; the optional `rho_*` columns carry the shared model itself when
 * the producer was asked to include it.
 */

export interface TraceRow {
  t: number;
  targetDist: number | null;
  targetAccuracy: number | null;
  rhoNorm: number;
  rejectedCount: number;
  rho: number[];
}

export interface Trace {
  rows: TraceRow[];
  rhoDims: number;
}

export const REQUIRED_COLUMNS = [
  "t",
  "target_dist",
  "target_accuracy",
  "rho_norm",
  "rejected_count",
] as const;

/** Malformed trace file; the message names the offending column or cell. */
export class TraceFormatError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "TraceFormatError";
  }
}

function parseCell(
  raw: string,
  column: string,
  line: number,
  integer = false,
): number {
  const v = integer ? Number.parseInt(raw, 10) : Number.parseFloat(raw);
  if (!Number.isFinite(v) || (integer && String(v) !== raw.trim())) {
    throw new TraceFormatError(
      `line ${line}: column "${column}" has non-numeric value "${raw}"`,
    );
  }
  return v;
}

function parseOptionalCell(
  raw: string,
  column: string,
  line: number,
): number | null {
  if (raw === "") return null;
  return parseCell(raw, column, line);
}

export function parseTrace(text: string): Trace {
  const lines = text.split(/\r?\n/).filter((l) => l.length > 0);
  if (lines.length === 0) {
    throw new TraceFormatError("empty file: expected a trace header");
  }
  const header = lines[0].split(",");

  for (let i = 0; i < REQUIRED_COLUMNS.length; i++) {
    const want = REQUIRED_COLUMNS[i];
    if (!header.includes(want)) {
      throw new TraceFormatError(`missing required column "${want}"`);
    }
    if (header[i] !== want) {
      throw new TraceFormatError(
        `column ${i + 1} must be "${want}", found "${header[i] ?? ""}"`,
      );
    }
  }
  const rhoCols = header.slice(REQUIRED_COLUMNS.length);
  rhoCols.forEach((name, k) => {
    if (name !== `rho_${k}`) {
      throw new TraceFormatError(
        `column ${REQUIRED_COLUMNS.length + k + 1} must be "rho_${k}", found "${name}"`,
      );
    }
  });

  const rows: TraceRow[] = [];
  for (let i = 1; i < lines.length; i++) {
    const cells = lines[i].split(",");
    if (cells.length !== header.length) {
      throw new TraceFormatError(
        `line ${i + 1}: expected ${header.length} cells, found ${cells.length}`,
      );
    }
    rows.push({
      t: parseCell(cells[0], "t", i + 1, true),
      targetDist: parseOptionalCell(cells[1], "target_dist", i + 1),
      targetAccuracy: parseOptionalCell(cells[2], "target_accuracy", i + 1),
      rhoNorm: parseCell(cells[3], "rho_norm", i + 1),
      rejectedCount: parseCell(cells[4], "rejected_count", i + 1, true),
      rho: rhoCols.map((name, k) =>
        parseCell(cells[REQUIRED_COLUMNS.length + k], name, i + 1),
      ),
    });
  }
  return { rows, rhoDims: rhoCols.length };
}
