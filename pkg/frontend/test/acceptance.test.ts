/**
 * End-to-end guarantees for the trace-plotting package: the bundled
 * steering-attack trace produced by the simulator CLI must render to a
 * non-empty image, and a trace missing a required column must be rejected
 * with a diagnostic that names that column.
 */

import { readFile } from "fs/promises";
import { fileURLToPath } from "url";
import { describe, expect, it } from "vitest";

import { plotTrace } from "../src/plot.js";
import { parseTrace, TraceFormatError } from "../src/trace.js";

const FIXTURE = fileURLToPath(new URL("./fixtures/cga_trace.csv", import.meta.url));

describe("acceptance", () => {
  it("renders the bundled steering-attack trace to a non-empty image", async () => {
    const trace = parseTrace(await readFile(FIXTURE, "utf8"));
    const svg = plotTrace(trace);
    expect(svg.length).toBeGreaterThan(0);
    expect(svg.startsWith("<svg")).toBe(true);
    expect(svg).toContain("<polyline");

    // The trace itself is a converging attack: the distance to the target
    // trends monotonically toward zero (flat once it reaches float noise).
    const dist = (t: number) => trace.rows[t - 1].targetDist as number;
    for (const [a, b] of [[1, 100], [100, 200], [200, 300], [300, 400]]) {
      expect(dist(b)).toBeLessThanOrEqual(dist(a));
    }
    expect(dist(100)).toBeLessThan(dist(1));
    expect(dist(400)).toBeLessThan(1e-10);
  });

  it("rejects a trace missing a required column, naming the column", async () => {
    const text = await readFile(FIXTURE, "utf8");
    const lines = text.split("\n");
    // Drop the rejected_count column from every row.
    const mangled = lines
      .filter((l) => l.length > 0)
      .map((l) => {
        const cells = l.split(",");
        cells.splice(4, 1);
        return cells.join(",");
      })
      .join("\n");
    let caught: unknown;
    try {
      parseTrace(mangled);
    } catch (err) {
      caught = err;
    }
    expect(caught).toBeInstanceOf(TraceFormatError);
    expect((caught as Error).message).toContain('"rejected_count"');
  });
});
