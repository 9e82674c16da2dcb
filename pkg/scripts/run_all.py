"""Run every config in configs/ through the CLI and report the exit codes.

Usage: python3 scripts/run_all.py [--output-root runs] [--only sweep,bounds]
"""
import argparse
import sys
from pathlib import Path

from gibbsmix.cli import main as cli_main
from gibbsmix.config import load_config_file

ROOT = Path(__file__).resolve().parent.parent


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--output-root", default="runs")
    p.add_argument("--only", default="", help="comma-separated config names")
    args = p.parse_args(argv)
    only = {x for x in args.only.split(",") if x}
    worst = 0
    for path in sorted((ROOT / "configs").glob("*.yaml")):
        if only and path.stem not in only:
            continue
        kind = load_config_file(path).kind
        out = Path(args.output_root) / path.stem
        code = cli_main([kind.replace("_", "-"), "--config", str(path), "--output-dir", str(out)])
        print(f"{path.name}: exit {code}")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
