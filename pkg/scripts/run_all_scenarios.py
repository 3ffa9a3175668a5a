#!/usr/bin/env python3
"""Run every bundled scenario through the CLI harness.

Each scenario JSON carries a top-level "command" key naming the subcommand it
is meant for. Outputs land in --out/<scenario-name>/; a nonzero exit from any
scenario aborts with that scenario named.
"""

import argparse
import json
import sys
import time
from pathlib import Path

from persofed.harness import main as harness_main

REPO_ROOT = Path(__file__).resolve().parent.parent


def run_all(scenario_dir: Path, out_dir: Path, quiet: bool) -> int:
    configs = sorted(scenario_dir.glob("*.json"))
    if not configs:
        print(f"no scenario configs found in {scenario_dir}", file=sys.stderr)
        return 2
    for cfg_path in configs:
        command = json.loads(cfg_path.read_text()).get("command")
        if command is None:
            print(f"{cfg_path.name}: missing top-level 'command' key", file=sys.stderr)
            return 2
        out = out_dir / cfg_path.stem
        argv = [command, "--config", str(cfg_path), "--out", str(out)]
        if quiet:
            argv.append("--quiet")
        else:
            print(f"== {cfg_path.name} ({command})")
        start = time.monotonic()
        rc = harness_main(argv)
        if rc != 0:
            print(f"{cfg_path.name}: exit code {rc}", file=sys.stderr)
            return rc
        if not quiet:
            print(f"   done in {time.monotonic() - start:.1f}s -> {out}")
    return 0


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--scenarios", default=str(REPO_ROOT / "scenarios"), help="scenario config directory"
    )
    parser.add_argument("--out", default="scenario_runs", help="output root directory")
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args()
    return run_all(Path(args.scenarios), Path(args.out), args.quiet)


if __name__ == "__main__":
    sys.exit(main())
