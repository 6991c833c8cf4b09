"""Run the agent x DC-count x request-count sweep and print mean acceptance per cell.

    python scripts/run_sweep.py configs/sweep.yaml --out results/sweep
"""

import argparse
import sys
from pathlib import Path

from genai_sfc.experiments import (
    AGENTS, ParseError, ValidationError, export_metrics, parse_config, run_sweep, summarize,
)


def table(summary, agents):
    cells = sorted({(s["dc_count"], s["request_count"]) for s in summary})
    by = {(s["agent"], s["dc_count"], s["request_count"]): s for s in summary}
    lines = ["dc  rc  " + "  ".join(f"{a:>10}" for a in agents)]
    for dc, rc in cells:
        vals = []
        for a in agents:
            s = by.get((a, dc, rc))
            m = s and s["acc_ratio_mean"]
            vals.append(f"{m:10.3f}" if m is not None else f"{'-':>10}")
        lines.append(f"{dc:<3} {rc:<3} " + "  ".join(vals))
    return "\n".join(lines)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("config", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--workers", type=int)
    a = p.parse_args()
    try:
        cfg = parse_config(a.config)
    except (ParseError, ValidationError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    if a.workers:
        cfg.workers = a.workers
    rows = run_sweep(cfg)
    out = a.out or Path(cfg.out_dir)
    export_metrics(rows, out)
    agents = [x for x in AGENTS if x in cfg.agents]
    print(table(summarize(rows), agents))
    bad = [r for r in rows if r["error"]]
    if bad:
        print(f"{len(bad)} cells failed, first: {bad[0]['error']}", file=sys.stderr)
    return 3 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
