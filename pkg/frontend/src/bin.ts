#!/usr/bin/env node
import { main } from "./cli.js";

main(process.argv.slice(2)).then(
  (code) => {
    process.exitCode = code;
  },
  (err) => {
    console.error(`plot-trace: ${err instanceof Error ? err.message : err}`);
    process.exitCode = 1;
  },
);
