"""Train the DQN, collect the DC dataset, then fit the VAE and the value network.

    python scripts/train_pipeline.py configs/pipeline.yaml --out results/pipeline

Every stage goes through the CLI, so the artifacts are the same files
``genai-sfc <command>`` would write. A stage whose output already exists is
skipped unless --force is given.
"""

import argparse
import sys
import time
from pathlib import Path

from genai_sfc.cli import main as cli


def stage(name, out: Path, product: str, argv, force: bool) -> int:
    if (out / product).exists() and not force:
        print(f"[{name}] {out / product} exists, skipping")
        return 0
    t = time.time()
    code = cli(argv)
    print(f"[{name}] exit {code} after {time.time() - t:.0f}s")
    return code


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("config", type=Path)
    p.add_argument("--out", type=Path, default=Path("results/pipeline"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    a = p.parse_args()
    base = ["--config", str(a.config), "--out", str(a.out), "--seed", str(a.seed)]
    ds, dq, vae = (str(a.out / f) for f in ("dataset.gsds", "dqn.gsnn", "vae.gsnn"))
    stages = [
        ("train-dqn", "dqn.gsnn", ["train-dqn", *base]),
        ("collect-dataset", "dataset.gsds", ["collect-dataset", *base, "--dqn", dq]),
        ("train-vae", "vae.gsnn", ["train-vae", *base, "--dataset", ds]),
        ("train-value", "value.gsnn", ["train-value", *base, "--dataset", ds, "--vae", vae]),
    ]
    for name, product, argv in stages:
        code = stage(name, a.out, product, argv, a.force)
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
