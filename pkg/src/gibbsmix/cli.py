"""Command line entry point: ``gibbsmix <subcommand> [--config FILE] [flags]``.

Flags override values from the config file. Exit codes: 0 when every check
passed, 1 when violations were found, 2 on an execution or config error.
"""
from __future__ import annotations

import argparse
import json
import sys

from .config import ConfigError, load_config_file, resolve_config
from .harness import EXIT_ERROR, EXIT_OK, EXIT_VIOLATIONS, rerun_manifest, run_experiment

SUBCOMMANDS = {"sample": "sample", "bounds": "bounds", "verify-isoperimetry": "verify_isoperimetry",
               "sweep": "sweep", "calibrate": "calibrate"}


def _ints(text):
    return [int(x) for x in text.split(",") if x]


def _floats(text):
    return [float(x) for x in text.split(",") if x]


def _grids(text):
    # "3x2,4x2,2x3" -> [[3, 2], [4, 2], [2, 3]]
    return [[int(a) for a in g.split("x")] for g in text.split(",") if g]


# flag, dest, type, subcommands that accept it
_FLAGS = [
    ("--n", "n", int, {"sample", "bounds", "calibrate"}),
    ("--kappa", "kappa", float, {"sample", "bounds", "calibrate"}),
    ("--M", "M", float, {"bounds"}),
    ("--gamma", "gamma", float, {"bounds", "sweep"}),
    ("--mu", "mu", float, {"bounds"}),
    ("--lipschitz", "lipschitz", float, {"bounds"}),
    ("--c-prime", "c_prime", float, {"bounds"}),
    ("--T", "T", int, {"sample"}),
    ("--replicas", "replicas", int, {"sample"}),
    ("--family", "family", str, {"verify-isoperimetry"}),
    ("--epsilon", "epsilon", float, {"verify-isoperimetry"}),
    ("--grids", "grids", _grids, {"verify-isoperimetry"}),
    ("--cubes", "cubes", int, {"verify-isoperimetry"}),
    ("--halfspaces", "halfspaces", int, {"verify-isoperimetry"}),
    ("--random-partitions", "random_partitions", int, {"verify-isoperimetry"}),
    ("--ball-cells", "ball_cells", int, {"verify-isoperimetry"}),
    ("--checks", "checks", lambda s: s.split(","), {"verify-isoperimetry"}),
    ("--dims", "dims", _ints, {"sweep"}),
    ("--kappas", "kappas", _floats, {"sweep"}),
    ("--criterion", "criterion", str, {"sweep"}),
    ("--threshold", "threshold", float, {"sweep"}),
    ("--replicas-per-dim", "replicas_per_dim", int, {"sweep"}),
    ("--T-max", "T_max", int, {"sweep"}),
    ("--workers", "workers", int, {"sweep"}),
    ("--samples", "samples", int, {"calibrate"}),
    ("--bins", "bins", int, {"calibrate"}),
    ("--ess-length", "ess_length", int, {"calibrate"}),
]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gibbsmix", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--output-dir", dest="output_dir",
                        help="run directory (default: $GIBBSMIX_OUTPUT_DIR or ./runs)")
        for flag, dest, typ, where in _FLAGS:
            if name in where:
                sp.add_argument(flag, dest=dest, type=typ)
        if name in ("sample", "sweep"):
            sp.add_argument("--lazy", action="store_true", default=None)
            sp.add_argument("--scan", choices=["random_uniform", "systematic_cyclic"])
            sp.add_argument("--start-c", dest="start_c", type=float,
                            help="underdispersion factor c of the Normal(mean, c Sigma) start")
        if name == "sample":
            sp.add_argument("--target", dest="target_family")
    rr = sub.add_parser("rerun", help="re-execute a manifest and compare CSV outputs")
    rr.add_argument("manifest")
    rr.add_argument("--output-dir", dest="output_dir", required=True)
    return p


def _config_from_args(args) -> dict:
    kind = SUBCOMMANDS[args.command]
    if args.config:
        data = load_config_file(args.config).resolved()
        if data["kind"] != kind:
            raise ConfigError(f"config kind {data['kind']!r} does not match subcommand {args.command}")
    else:
        data = {"kind": kind}
    for key in ["seed", "output_dir"] + [d for _, d, _, w in _FLAGS if args.command in w]:
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    if getattr(args, "lazy", None) is not None or getattr(args, "scan", None):
        chain = dict(data.get("chain") or {})
        if args.lazy is not None:
            chain["lazy"] = True
        if args.scan:
            chain["scan"] = args.scan
        data["chain"] = chain
    if getattr(args, "start_c", None) is not None:
        data["start"] = {**(data.get("start") or {}), "type": "underdispersed", "c": args.start_c}
    if getattr(args, "target_family", None):
        data["target"] = {**(data.get("target") or {}), "family": args.target_family}
    return data


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "rerun":
            res, cmp = rerun_manifest(args.manifest, args.output_dir)
            print(json.dumps(cmp, indent=2, sort_keys=True))
            same = all(cmp.values())
            print("reproduced byte-identically" if same else "MISMATCH in reproduced CSV files")
            return EXIT_OK if same else EXIT_VIOLATIONS
        cfg = resolve_config(_config_from_args(args))
        res = run_experiment(cfg)
    except (ConfigError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    sys.stdout.write(res.summary)
    print(f"output: {res.output_dir}")
    return res.exit_code if res.exit_code in (EXIT_OK, EXIT_VIOLATIONS) else EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
