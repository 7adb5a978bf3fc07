#!/usr/bin/env python3
"""Regenerate tests/data/golden_scenarios.json.

Runs every scripted scenario once in record mode and once in replay mode,
verifies the two agree, and freezes the replay outcome. Run from the repo
root after an intentional change to scenario wiring or registry layout:

    python3 scripts/generate_goldens.py
"""

import json
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from scenarios import SCENARIOS, canonical, run_scenario  # noqa: E402


def main() -> int:
    golden = {}
    for scenario in SCENARIOS:
        with tempfile.TemporaryDirectory() as tmp:
            tmp_path = Path(tmp)
            transcript = tmp_path / "transcript.jsonl"
            recorded = run_scenario(scenario, tmp_path / "record", "record", transcript)
            replayed = run_scenario(scenario, tmp_path / "replay", "replay", transcript)
            if canonical(recorded) != canonical(replayed):
                print(f"FATAL: {scenario.name} record/replay mismatch", file=sys.stderr)
                return 1
            golden[scenario.name] = replayed
            print(f"{scenario.name}: {replayed['result']['status']}, "
                  f"{len(replayed['registry_diff']['added'])} added, "
                  f"{len(replayed['registry_diff']['modified'])} modified")
    out = ROOT / "tests" / "data" / "golden_scenarios.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(golden, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
