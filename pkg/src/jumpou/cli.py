"""Command-line front end.

Exit codes: 0 success, 1 usage or validation error, 2 I/O error,
3 internal or replication failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import re
import sys
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from jumpou import io
from jumpou.core import LocalAlternative, ModelParams, ParameterError, SamplingScheme, rate_matrix
from jumpou.density import (
    MixtureConfig,
    jump_posterior,
    log_density_grad,
    log_transition_density,
    misclassification_scan,
    truncation_level,
)
from jumpou.inference import FitConfig, fit_mle
from jumpou.lanlab import LanExperimentConfig, ReplicationError, run_efficiency, run_ergodic, run_lan
from jumpou.simulate import RNG_ALGORITHM, RngStream, simulate_path

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("jumpou")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def read_config_file(path: str) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment; keys mirror flag names."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.lstrip("-").replace("-", "_")] = value
    return values


def parse_delta_rule(rule: str, n: int) -> float:
    """Evaluate ``n^-q`` (q decimal or p/r) at the given n."""
    m = re.fullmatch(r"\s*n\s*\^\s*-\s*(\d+(?:\.\d+)?|\d+/\d+)\s*", rule)
    if m is None:
        raise UsageError(f"--delta-rule must look like 'n^-q', got {rule!r}")
    q = Fraction(m.group(1))
    return float(n) ** (-float(q))


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _triple(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated numbers theta,sigma,lambda")
    return tuple(float(p) for p in parts)


def _float_list(text: str) -> list[float]:
    return [float(p) for p in text.split(",") if p.strip()]


def _require(args, *names):
    missing = [_flag(n) for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join(missing))


def _params(args, suffix: str = "") -> ModelParams:
    names = [f"theta{suffix}", f"sigma{suffix}", f"lambda{suffix}"]
    _require(args, *names)
    try:
        return ModelParams(*(getattr(args, n) for n in names))
    except ParameterError as exc:
        raise ParameterError(_flag(exc.name + suffix), str(exc).split(": ", 1)[1]) from None


def _mixture(args) -> MixtureConfig:
    return MixtureConfig(j_max=getattr(args, "jmax", None))


def _scheme(args) -> SamplingScheme:
    _require(args, "n")
    if args.delta is not None and args.delta_rule is not None:
        raise UsageError("give either --delta or --delta-rule, not both")
    if args.delta is None and args.delta_rule is None:
        raise UsageError("missing required option: --delta or --delta-rule")
    delta = args.delta if args.delta is not None else parse_delta_rule(args.delta_rule, args.n)
    return SamplingScheme(args.n, delta, args.x0)


def _emit(args, payload: dict) -> None:
    text = io.dumps(payload)
    out = getattr(args, "out", None)
    if out:
        io.write_text(out, text)
    else:
        sys.stdout.write(text)


def _echo(args) -> dict:
    skip = {"func", "config"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def cmd_simulate(args) -> int:
    _require(args, "seed", "out")
    params = _params(args)
    scheme = _scheme(args)
    path = simulate_path(params, scheme, RngStream(args.seed, args.stream), keep_latent=bool(args.jumps_out))
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        io.write_path_csv(path, fh)
    if args.jumps_out:
        with open(args.jumps_out, "w", encoding="utf-8", newline="\n") as fh:
            io.write_jumps_csv(path, fh)
    print(f"n={scheme.n} delta={io.fmt(scheme.delta)} lambda*delta={io.fmt(params.lam * scheme.delta)} "
          f"seed={args.seed} jumps={int(path.latent.counts.sum()) if path.latent else 'n/a'}")
    return EXIT_OK


def cmd_density(args) -> int:
    _require(args, "delta", "x", "y")
    params = _params(args)
    if not (math.isfinite(args.delta) and args.delta > 0):
        raise ParameterError("--delta", "must be a finite positive number")
    mix = _mixture(args)
    logp = float(log_transition_density(params, args.delta, args.x, args.y, mix))
    payload = {"p": math.exp(logp), "logp": logp, "J": truncation_level(params, args.delta, mix)}
    if args.grad:
        payload["grad"] = log_density_grad(params, args.delta, args.x, args.y, mix).tolist()
    if args.posterior:
        payload["posterior"] = jump_posterior(params, args.delta, args.x, args.y, mix).probabilities.tolist()
    _emit(args, payload)
    return EXIT_OK


def cmd_fit(args) -> int:
    _require(args, "input", "delta")
    init = None
    if args.init is not None:
        try:
            init = ModelParams(*args.init)
        except ParameterError as exc:
            raise ParameterError("--init", str(exc)) from None
    config = FitConfig(
        max_iter=args.max_iter, grad_tol=args.tol, init=init, mixture=_mixture(args)
    )
    try:
        with open(args.input, encoding="utf-8") as fh:
            path = io.read_path_csv(fh, args.delta)
    except io.CsvFormatError as exc:
        print(f"{args.input}: malformed CSV, {exc}", file=sys.stderr)
        return EXIT_IO
    report = fit_mle(path, config)
    payload = report.to_dict()
    payload["rate"] = rate_matrix(path.scheme).tolist()
    payload["metadata"] = {"timestamp": io.timestamp(), "config": _echo(args), "n": path.n}
    _emit(args, payload)
    return EXIT_OK


def _write_raw(path: str, sample: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("rep,loglr\n")
        for r, value in enumerate(sample):
            fh.write(f"{r},{io.fmt(value)}\n")


def cmd_lan(args) -> int:
    _require(args, "reps", "seed")
    params = _params(args, "0")
    scheme = _scheme(args)
    z = LocalAlternative(args.u, args.v, args.w)
    try:
        config = LanExperimentConfig(params, z, scheme, args.reps, args.seed, _mixture(args))
    except ParameterError as exc:
        raise ParameterError(exc.name, "perturbed parameter is not positive; reduce |z| or increase n") from None
    report = run_lan(config, workers=args.threads)
    payload = report.to_dict()
    payload["metadata"].update({"timestamp": io.timestamp(), "resolved_delta": scheme.delta,
                                "cli": _echo(args)})
    _emit(args, payload)
    if args.raw_csv:
        _write_raw(args.raw_csv, report.sample)
    return EXIT_OK


def cmd_efficiency(args) -> int:
    _require(args, "reps", "seed")
    params = _params(args, "0")
    scheme = _scheme(args)
    fit_config = FitConfig(max_iter=args.max_iter, grad_tol=args.tol, mixture=_mixture(args))
    report = run_efficiency(params, scheme, args.reps, args.seed, fit_config, workers=args.threads)
    payload = report.to_dict()
    payload["metadata"].update({"timestamp": io.timestamp(), "resolved_delta": scheme.delta,
                                "cli": _echo(args)})
    _emit(args, payload)
    return EXIT_OK


def cmd_ergodic(args) -> int:
    _require(args, "seed", "g")
    params = _params(args, "0")
    scheme = _scheme(args)
    try:
        report = run_ergodic(params, scheme, args.g, args.seed)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None
    payload = report.to_dict()
    payload["metadata"].update({"timestamp": io.timestamp(), "resolved_delta": scheme.delta,
                                "cli": _echo(args)})
    _emit(args, payload)
    return EXIT_OK


def cmd_scan(args) -> int:
    _require(args, "deltas", "reps", "seed")
    params = _params(args)
    rates = misclassification_scan(params, args.deltas, args.reps, RngStream(args.seed), args.x, _mixture(args))
    payload = {
        "rates": [r.to_dict() for r in rates],
        "metadata": {"timestamp": io.timestamp(), "rng": RNG_ALGORITHM, "cli": _echo(args)},
    }
    _emit(args, payload)
    return EXIT_OK


def _add_params(p, suffix=""):
    for name in ("theta", "sigma", "lambda"):
        p.add_argument(f"--{name}{suffix}", type=float, dest=f"{name}{suffix}")


def _add_scheme(p):
    p.add_argument("--n", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--delta-rule", dest="delta_rule", help="step rule of the form n^-q, e.g. n^-0.6")
    p.add_argument("--x0", type=float, default=0.0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="jumpou", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="flat 'key = value' file; command-line flags override it")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate an exact discretely observed path")
    _add_params(p)
    _add_scheme(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--stream", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--jumps-out", dest="jumps_out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("density", help="evaluate the transition density")
    _add_params(p)
    p.add_argument("--delta", type=float)
    p.add_argument("--x", type=float)
    p.add_argument("--y", type=float)
    p.add_argument("--grad", type=_bool, nargs="?", const=True, default=False)
    p.add_argument("--posterior", type=_bool, nargs="?", const=True, default=False)
    p.add_argument("--jmax", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("fit", help="maximum likelihood fit of a t,x CSV path")
    p.add_argument("--input")
    p.add_argument("--delta", type=float)
    p.add_argument("--init", type=_triple)
    p.add_argument("--max-iter", dest="max_iter", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--jmax", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("lan", help="Monte-Carlo log-likelihood ratio at a local alternative")
    _add_params(p, "0")
    p.add_argument("-u", type=float, default=0.0)
    p.add_argument("-v", type=float, default=0.0)
    p.add_argument("-w", type=float, default=0.0)
    _add_scheme(p)
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--jmax", type=int)
    p.add_argument("--out")
    p.add_argument("--raw-csv", dest="raw_csv")
    p.set_defaults(func=cmd_lan)

    p = sub.add_parser("efficiency", help="spread of the normalised MLE error against Gamma^-1")
    _add_params(p, "0")
    _add_scheme(p)
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--max-iter", dest="max_iter", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--jmax", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_efficiency)

    p = sub.add_parser("ergodic", help="long-run average of a test function along one path")
    _add_params(p, "0")
    _add_scheme(p)
    p.add_argument("--g", choices=["identity", "square", "abs", "cube"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ergodic)

    p = sub.add_parser("scan", help="jump-count misclassification rates over a list of steps")
    _add_params(p)
    p.add_argument("--deltas", type=_float_list)
    p.add_argument("--x", type=float, default=0.0)
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jmax", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_scan)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        return _dispatch(parser, argv)
    except SystemExit as exc:  # argparse errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE


def _dispatch(parser: argparse.ArgumentParser, argv: list[str]) -> int:
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        if args.config:
            try:
                file_values = read_config_file(args.config)
            except OSError as exc:
                print(f"cannot read config file: {exc}", file=sys.stderr)
                return EXIT_IO
            sub = parser._subparsers._group_actions[0].choices[args.command]
            known = {a.dest for a in sub._actions}
            unknown = sorted(set(file_values) - known)
            if unknown:
                raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
            sub.set_defaults(**file_values)
            args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ParameterError) as exc:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.print_usage(sys.stderr)
        print(f"jumpou {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"jumpou {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ReplicationError as exc:
        print(f"jumpou {args.command}: replication {exc.index} aborted: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except OSError as exc:
        print(f"jumpou {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"jumpou {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
