"""Command line entry point: ``bench <preset> --method ... --out report.csv``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .experiments import CONTROLS, METHODS, Settings, run_experiment
from .report import write_report

EXIT_OK, EXIT_FIT, EXIT_UNSTABLE, EXIT_ARGS = 0, 2, 3, 4

# flag name -> Settings field
_FLAGS = {
    "dim": "dim", "seed": "seed", "tol_stop": "tol_stop", "lambda": "gradient_weight",
    "shape": "shape", "a_tb": "a_tb", "gamma": "gamma", "control": "control",
    "traj_out": "traj_out", "nodes": "nodes", "rank_cap": "rank_cap",
    "max_sweeps": "max_sweeps", "degree": "degree", "locality": "locality",
    "epochs": "epochs", "samples": None,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ARGS, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bench", description="Surrogate benchmark harness; writes one CSV report row.")
    p.add_argument("preset", help="lowrank-a|b|c, regularity-<l0,l1,l2>, academic-<d>, allencahn")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--dim", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--tol-stop", dest="tol_stop", type=float)
    p.add_argument("--lambda", dest="lambda", type=float, help="gradient weight of the cross fit")
    p.add_argument("--shape", help="kernel shape parameter or 'select'")
    p.add_argument("--a-tb", dest="a_tb", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--control", choices=CONTROLS)
    p.add_argument("--traj-out", dest="traj_out")
    p.add_argument("--nodes", type=int, help="basis functions per mode")
    p.add_argument("--rank-cap", dest="rank_cap", type=int)
    p.add_argument("--max-sweeps", dest="max_sweeps", type=int)
    p.add_argument("--degree", type=int, help="block-sparse total degree bound")
    p.add_argument("--locality", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--samples", type=int, help="training samples (bstt, kernel, nn)")
    p.add_argument("--append", action="store_true", help="append to an existing report")
    p.add_argument("--config", help="JSON file of flag values; explicit flags win")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _settings(args, method) -> Settings:
    values = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise ValueError("config file must hold a JSON object")
        values.update({k.replace("-", "_"): v for k, v in cfg.items()})
    for flag in list(_FLAGS) + ["method", "out"]:
        v = getattr(args, flag, None)
        if v is not None:
            values[flag] = v
    method = values.pop("method", method)
    out = values.pop("out", None)
    mapped = {}
    for key, v in values.items():
        if key not in _FLAGS:
            raise ValueError(f"unknown config key {key!r}")
        if key == "samples":
            mapped.update(bstt_samples=v, kernel_samples=v, nn_samples=v)
            continue
        if key == "shape" and v != "select":
            v = float(v)
        mapped[_FLAGS[key]] = v
    return method, out, Settings.from_mapping(mapped)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        method, out, settings = _settings(args, None)
        if method is None or out is None:
            raise ValueError("--method and --out are required (flag or config file)")
        report = run_experiment(args.preset, method, settings)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"bench: error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    write_report([report], out, append=args.append)
    status = report.extra.get("status", "ok")
    print(f"{report.method} {report.problem} d={report.dim} err_train_2={report.err_train_2:.3e} "
          f"err_test_2={report.err_test_2:.3e} status={status}")
    if status == "fit-failure":
        return EXIT_FIT
    if status == "instability":
        return EXIT_UNSTABLE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
