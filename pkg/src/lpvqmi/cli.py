"""``lpvqmi`` command line: generate, synth, verify, export-sdpa, repro.

Exit codes: 0 success, 2 infeasible / not informative, 3 verification
failure, 4 input error, 5 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline
from .config import PRESETS, ConfigError, ExperimentConfig
from .data import DataRecord
from .sdp import export_sdpa, parse_sdpa, problems_equal
from .synthesis import H2Certificate, NotInformativeError, SynthesisFailed, certificate_from_json

EXIT_OK, EXIT_INFEASIBLE, EXIT_VERIFY, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3, 4, 5


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(path, text):
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True)
    path.write_text(text)


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    return cfg.override(mode=args.mode, seed=args.seed, noise_eps=args.noise_eps,
                        horizon=args.horizon, plants=args.plants, sequences=args.sequences,
                        common_gain=True if args.common_gain else None,
                        trace_normalize=True if args.trace_normalize else None)


def _load_record(path, cfg: ExperimentConfig) -> DataRecord:
    data = _read_json(path)
    try:
        record = DataRecord.from_json(data.get("record", data))
    except (KeyError, ValueError, TypeError) as exc:
        raise InputError(f"{path}: not a data record ({exc})") from None
    plant = cfg.plant
    if (record.n, record.m, record.L) != (plant.n, plant.m, plant.L):
        raise InputError(f"{path}: record has (n, m, L) = {(record.n, record.m, record.L)}, "
                         f"config expects {(plant.n, plant.m, plant.L)}")
    if record.domain is not cfg.domain:
        raise InputError(f"{path}: record is {record.domain.value}-time, mode "
                         f"{cfg.mode.value} is {cfg.domain.value}-time")
    return record


def _print_trace(solution):
    if solution is None:
        return
    print("iteration trace:", file=sys.stderr)
    for h in solution.history:
        print(f"  {h['iter']:4d} pobj {h['pobj']: .6e} dobj {h['dobj']: .6e} "
              f"pinf {h['pinf']:.2e} dinf {h['dinf']:.2e} mu {h['mu']:.2e}", file=sys.stderr)


def cmd_generate(args):
    cfg = _load_config(args)
    record, norms = pipeline.generate(cfg)
    out = {"record": record.to_json(), "realised_noise_norms": norms.tolist(), "config": cfg.raw}
    _write(args.out, _dump(out))
    print(f"wrote {args.out}: T = {record.T}, n = {record.n}, m = {record.m}, L = {record.L}")
    print(f"realised noise norms: max {norms.max():.6f}, mean {norms.mean():.6f}, "
          f"bound eps = {cfg.noise_eps}")
    return EXIT_OK


def cmd_synth(args):
    cfg = _load_config(args)
    record = _load_record(args.data, cfg)
    try:
        cert = pipeline.synth(cfg, record)
    except NotInformativeError as exc:
        print(f"infeasible: {exc}")
        return EXIT_INFEASIBLE
    except SynthesisFailed as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        _print_trace(exc.solution)
        return EXIT_NUMERICAL
    sol = cert.solution
    out = cert.to_json()
    out["solver"] = {"status": sol.status.value, "iterations": sol.iterations,
                     "objective": sol.objective_value, "gap": sol.gap, "margin": sol.margin}
    _write(args.out, _dump(out))
    print(f"{cfg.mode.value}: {sol.status.value} after {sol.iterations} iterations; wrote {args.out}")
    if isinstance(cert, H2Certificate):
        print(f"gamma = {cert.gamma:.6f}")
    return EXIT_OK


def cmd_verify(args):
    cfg = _load_config(args)
    record = _load_record(args.data, cfg)
    try:
        cert = certificate_from_json(_read_json(args.controller))
    except (KeyError, ValueError, TypeError) as exc:
        raise InputError(f"{args.controller}: not a certificate ({exc})") from None
    if cert.mode is not cfg.mode:
        cfg = cfg.override(mode=cert.mode.value)
    try:
        result = pipeline.verify(cfg, record, cert, keep_trajectories=bool(args.csv))
    except ValueError as exc:
        print(f"[FAIL] certificate rejected: {exc}")
        return EXIT_VERIFY
    for c in result.checks:
        print(c.line())
    _write(args.out, _dump(result.to_json()))
    if args.csv:
        _write(args.csv, result.trajectories_csv())
    return EXIT_OK if result.passed else EXIT_VERIFY


def cmd_export_sdpa(args):
    cfg = _load_config(args)
    record = _load_record(args.data, cfg)
    problem = pipeline.assemble(cfg, record)
    text = export_sdpa(problem)
    if not problems_equal(parse_sdpa(text), problem):
        print("SDPA round trip changed the problem", file=sys.stderr)
        return EXIT_NUMERICAL
    _write(args.out, text)
    sizes = problem.block_sizes()
    census = ", ".join(f"{sizes.count(s)}x(size {s})" for s in sorted(set(sizes), reverse=True))
    print(f"wrote {args.out}: {problem.num_scalars} variables; PSD blocks {census}")
    return EXIT_OK


def cmd_repro(args):
    args.config = args.name
    cfg = _load_config(args)
    result = pipeline.repro(cfg, keep_trajectories=bool(args.csv))
    out = Path(args.out)
    if result.record is not None:
        _write(out / "data.json", _dump({"record": result.record.to_json(), "config": cfg.raw}))
    if result.certificate is not None:
        _write(out / "controller.json", _dump(result.certificate.to_json()))
    _write(out / "report.json", _dump(result.to_json()))
    _write(out / "summary.txt", result.summary() + "\n")
    if args.csv and result.verification is not None:
        _write(out / "trajectories.csv", result.verification.trajectories_csv())
    print(result.summary())
    if result.certificate is None:
        return EXIT_INFEASIBLE
    return EXIT_OK if result.passed else EXIT_VERIFY


def build_parser():
    parser = _Parser(prog="lpvqmi", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_default, config=True):
        if config:
            p.add_argument("--config", default="two-state-ct",
                           help=f"preset ({', '.join(PRESETS)}) or JSON file")
        p.add_argument("--mode", choices=["ct-stab", "dt-stab", "ct-h2", "dt-h2"])
        p.add_argument("--seed", type=int)
        p.add_argument("--noise-eps", type=float)
        p.add_argument("--horizon", type=float)
        p.add_argument("--plants", type=int)
        p.add_argument("--sequences", type=int)
        p.add_argument("--common-gain", action="store_true")
        p.add_argument("--trace-normalize", action="store_true")
        p.add_argument("--out", default=out_default)

    p = sub.add_parser("generate", help="collect a noisy data record")
    common(p, "data.json")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("synth", help="synthesise a vertex controller from data")
    common(p, "controller.json")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("verify", help="check a controller against the data and ground truth")
    common(p, "report.json")
    p.add_argument("--data", required=True)
    p.add_argument("--controller", required=True)
    p.add_argument("--csv", help="write long-format trajectories here")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("export-sdpa", help="write the synthesis SDP in SDPA sparse format")
    common(p, "problem.dat-s")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_export_sdpa)

    p = sub.add_parser("repro", help="run a built-in experiment end to end")
    p.add_argument("name", choices=list(PRESETS))
    common(p, "repro-out", config=False)
    p.add_argument("--csv", action="store_true", help="also write trajectories.csv")
    p.set_defaults(func=cmd_repro)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code
    try:
        return args.func(args)
    except (ConfigError, InputError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
