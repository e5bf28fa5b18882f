"""Command line entry point.

    hypstab run <config>                  validate, integrate, write the trace
    hypstab validate <config>             validation pipeline only
    hypstab report <trace.csv> --c-l X    decay summary of a written trace

Exit codes: 0 ok, 1 usage, 2 validation, 3 instability, 4 control infeasible.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import build_scenario, fingerprint, load_config, read_trace, write_trace
from .errors import ControlInfeasibleError, HypstabError, InstabilityError, ValidationError
from .lyapunov import LyapunovTrace, fit_decay_rate
from .scenarios import validate_scenario
from .solver import run

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_INSTABILITY, EXIT_CONTROL = 0, 1, 2, 3, 4

RATE_FRACTION = 0.9
BOUNDARY_TOL = 1e-10

logger = logging.getLogger("hypstab")


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ControlInfeasibleError):
        return EXIT_CONTROL
    if isinstance(exc, InstabilityError):
        return EXIT_INSTABILITY
    return EXIT_VALIDATION


@dataclass
class TraceSummary:
    rate_on_L: float
    ratio: float
    max_B: float
    min_B_ratio: float
    gronwall_margin: float
    rate_ok: bool
    monotone_ok: bool
    boundary_ok: bool

    @property
    def passed(self) -> bool:
        return self.rate_ok and self.monotone_ok and self.boundary_ok

    def text(self) -> str:
        v = lambda ok: "pass" if ok else "FAIL"
        return "\n".join(
            [
                f"fitted rate on L     {self.rate_on_L:.6g}",
                f"ratio to C_L         {self.ratio:.2f}  [{v(self.rate_ok)}, need >= {RATE_FRACTION}]",
                f"max boundary term    {self.max_B:.6g}",
                f"min B/(L+1)          {self.min_B_ratio:.3e}  [{v(self.boundary_ok)}]",
                f"min Gronwall margin  {self.gronwall_margin:.3e}  [{v(self.monotone_ok)}]",
                f"verdict              {v(self.passed)}",
            ]
        )


def summarize_trace(trace: LyapunovTrace, c_l: float) -> TraceSummary:
    """Decay rate against ``C_L``, boundary-term sign and monotonicity of ``L``.

    The Gronwall margin is the smallest ``ln(L_m / L_{m+1})`` over recorded
    intervals; a negative value means ``L`` grew somewhere.
    """
    if len(trace) < 2:
        raise ValidationError("trace needs at least two samples")
    if not c_l > 0:
        raise ValidationError("C_L must be > 0")
    L = trace.array("L")
    B = trace.array("B")
    try:
        rate = fit_decay_rate(trace).rate_on_L
    except ValidationError:
        rate = fit_decay_rate(trace, (trace.t[0], trace.t[-1])).rate_on_L
    with np.errstate(divide="ignore", invalid="ignore"):
        steps = np.log(L[:-1] / L[1:])
    steps = np.where(np.isnan(steps), 0.0, steps)
    margin = float(np.min(steps))
    bratio = B / (L + 1.0)
    return TraceSummary(
        rate_on_L=rate,
        ratio=rate / c_l,
        max_B=float(np.max(B)),
        min_B_ratio=float(np.min(bratio)),
        gronwall_margin=margin,
        rate_ok=bool(rate >= RATE_FRACTION * c_l),
        monotone_ok=bool(margin >= -1e-12),
        boundary_ok=bool(np.min(bratio) >= -BOUNDARY_TOL),
    )


def report_command(path, c_l: float) -> tuple[str, TraceSummary]:
    s = summarize_trace(read_trace(path), c_l)
    return s.text(), s


def validate_command(cfg, scenario=None) -> str:
    sc = scenario or build_scenario(cfg)
    report = validate_scenario(sc)
    counts = report.partition_counts
    lines = [
        f"scenario      {sc.name} ({cfg.kind}), n = {sc.n}, grid {'x'.join(map(str, sc.grid.cells))}",
        f"weights       route {sc.weights.route}, range(mu) = {sc.weights.range():.4g}",
        f"validation    {report.summary()}",
        "partition     " + ", ".join(f"{k} {v.tolist()}" for k, v in counts.items()),
    ]
    report.raise_on_failure()
    return "\n".join(lines)


def run_command(cfg) -> tuple[int, str]:
    """Validate, run and write outputs; returns ``(exit code, summary)``."""
    fp = fingerprint(cfg)
    t0 = time.perf_counter()
    scenario = build_scenario(cfg)
    text = validate_command(cfg, scenario)
    result = run(scenario, cadence=cfg.cadence, validate=False, fingerprint=fp)
    elapsed = time.perf_counter() - t0
    if cfg.trace:
        write_trace(cfg.resolve(cfg.trace), result.trace, fp)
    if cfg.weights:
        np.save(cfg.resolve(cfg.weights), scenario.weights.mu)
    lines = [
        text,
        f"run           {result.steps} steps, dt = {result.dt:.4g}, {elapsed:.2f} s",
        f"fingerprint   {fp}",
    ]
    if len(result.trace) >= 2:
        lines.append(summarize_trace(result.trace, scenario.C_L).text())
    out = "\n".join(lines)
    if cfg.summary:
        cfg.resolve(cfg.summary).write_text(out + "\n")
    return EXIT_OK, out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hypstab", description="Lyapunov boundary feedback for linear hyperbolic systems.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    r = sub.add_parser("run", help="validate and integrate a configured scenario")
    r.add_argument("config")
    r.add_argument("--trace", help="override output.trace")
    v = sub.add_parser("validate", help="run the validation pipeline only")
    v.add_argument("config")
    rep = sub.add_parser("report", help="summarise a trace CSV")
    rep.add_argument("csv")
    rep.add_argument("--c-l", type=float, required=True, dest="c_l")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        if args.command == "report":
            text, _ = report_command(args.csv, args.c_l)
            print(text)
            return EXIT_OK
        cfg = load_config(args.config)
        if args.command == "validate":
            print(validate_command(cfg))
            return EXIT_OK
        if args.trace:
            cfg.trace = str(Path(args.trace).resolve())
        code, text = run_command(cfg)
        print(text)
        return code
    except HypstabError as exc:
        code = exit_code(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
