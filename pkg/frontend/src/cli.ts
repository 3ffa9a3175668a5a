/**
 * plot-trace: render a simulator trace CSV as an SVG chart.
 *
 * Usage: plot-trace <trace.csv> [-o out.svg] [--title TEXT] [--metrics a,b,c]
 *
 * Exit codes: 0 success, 1 I/O failure, 2 usage or trace-format error.
 */

import { readFile, writeFile } from "fs/promises";

import { parseTrace, TraceFormatError } from "./trace.js";
import { plotTrace } from "./plot.js";

const USAGE =
  "usage: plot-trace <trace.csv> [-o|--out OUT.svg] [--title TEXT] [--metrics a,b,c]";

interface CliArgs {
  input: string;
  out: string;
  title?: string;
  metrics?: string[];
}

class UsageError extends Error {}

function parseArgs(argv: string[]): CliArgs {
  let input: string | undefined;
  let out: string | undefined;
  let title: string | undefined;
  let metrics: string[] | undefined;
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (arg === "-o" || arg === "--out") {
      out = argv[++i];
      if (out === undefined) throw new UsageError(`${arg} requires a value`);
    } else if (arg === "--title") {
      title = argv[++i];
      if (title === undefined) throw new UsageError("--title requires a value");
    } else if (arg === "--metrics") {
      const raw = argv[++i];
      if (raw === undefined) throw new UsageError("--metrics requires a value");
      metrics = raw
        .split(",")
        .map((m) => m.trim())
        .filter((m) => m.length > 0);
      if (metrics.length === 0) {
        throw new UsageError("--metrics requires at least one column name");
      }
    } else if (arg === "-h" || arg === "--help") {
      throw new UsageError(USAGE);
    } else if (arg.startsWith("-")) {
      throw new UsageError(`unknown option ${arg}`);
    } else if (input === undefined) {
      input = arg;
    } else {
      throw new UsageError(`unexpected argument ${arg}`);
    }
  }
  if (input === undefined) throw new UsageError("missing input trace CSV");
  return {
    input,
    out: out ?? input.replace(/\.csv$/i, "") + ".svg",
    title,
    metrics,
  };
}

export async function main(argv: string[]): Promise<number> {
  let args: CliArgs;
  try {
    args = parseArgs(argv);
  } catch (err) {
    console.error(`plot-trace: ${(err as Error).message}`);
    console.error(USAGE);
    return 2;
  }

  let text: string;
  try {
    text = await readFile(args.input, "utf8");
  } catch (err) {
    console.error(`plot-trace: cannot read ${args.input}: ${(err as Error).message}`);
    return 1;
  }

  let svg: string;
  try {
    svg = plotTrace(parseTrace(text), {
      title: args.title ?? args.input,
      metrics: args.metrics,
    });
  } catch (err) {
    if (err instanceof TraceFormatError) {
      console.error(`plot-trace: ${args.input}: ${err.message}`);
      return 2;
    }
    throw err;
  }

  try {
    await writeFile(args.out, svg, "utf8");
  } catch (err) {
    console.error(`plot-trace: cannot write ${args.out}: ${(err as Error).message}`);
    return 1;
  }
  console.log(`wrote ${args.out}`);
  return 0;
}
