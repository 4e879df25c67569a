"""Command-line front end.

Every report is a JSON object ``{"command", "version", "config", "result"}``
where ``config`` is the fully resolved RunConfig, so a report carries what
is needed to rerun it.  Series outputs can also be written as CSV.

Exit status: 0 success, 1 computation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .acceptance import MC_SEED, SUITES, run_suite
from .asymptotics import ConjectureConfig, conjecture_report, decay_series, estimate_kappa, oracle_series
from .chain import build_generator, model_from_json, validate_generator
from .errors import DomainError, ParameterError, QSDError, UnsupportedModelError
from .kernel import conditional_distribution, transition_matrix
from .montecarlo import estimate_conditional, estimate_survival
from .spectral import analytic_decay_parameter, classify, decay_parameter, invariant_pair, verify_semigroup_invariance

log = logging.getLogger(__name__)

USAGE_ERRORS = (ParameterError, DomainError, UnsupportedModelError)
CSV_COMMANDS = {"kernel", "lcd", "kappa", "simulate", "conjectures"}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Resolved options of one run.

    Defaults: truncation [2000] ([1000, 2000] for ``decay``); t [1.0]
    (``classify`` uses the last t as its horizon and defaults to 100);
    t_grid 40 points geometrically spaced on [100, 400]; window None,
    meaning [T/4, T] of the grid; i = j = 1; n = 100000 replicates;
    seed 20240601; tol 1e-12; format json.
    """

    model: dict[str, Any] = field(default_factory=lambda: {"model": "killed_mm1", "p": 1.0, "q": 4.0})
    trunc: list[int] | None = None
    t: list[float] = field(default_factory=lambda: [1.0])
    t_grid: list[float] = field(default_factory=lambda: np.geomspace(100.0, 400.0, 40).tolist())
    window: list[float] | None = None
    i: int = 1
    j: int | str = 1
    n: int = 100_000
    seed: int = MC_SEED
    tol: float = 1e-12
    lam: float | None = None
    source: str = "kernel"
    suite: str = "mm1"
    format: str = "json"
    out: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str | dict) -> "RunConfig":
        obj = json.loads(text) if isinstance(text, str) else dict(text)
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _grid(text: str) -> list[float]:
    """``lo:hi:n`` for n geometrically spaced points, or an explicit list."""
    if ":" in text:
        try:
            lo, hi, n = text.split(":")
            return np.geomspace(float(lo), float(hi), int(n)).tolist()
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected lo:hi:n, got {text!r}") from None
    return _floats(text)


def _state(text: str) -> int | str:
    if text == "survival":
        return text
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer state or 'survival', got {text!r}") from None


def _model_arg(text: str) -> dict:
    path = Path(text)
    if not text.lstrip().startswith("{") and path.exists():
        text = path.read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"--model is neither JSON nor a readable file: {exc}") from None
    if not isinstance(obj, dict):
        raise argparse.ArgumentTypeError("--model must be a JSON object")
    return obj


COMMANDS = ("validate", "decay", "invariants", "kernel", "lcd", "classify", "kappa", "simulate", "conjectures", "verify")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", type=_model_arg, help="model as inline JSON or a path to a JSON file")
    common.add_argument("--config", type=Path, help="JSON file with RunConfig fields; flags override it")
    common.add_argument("--trunc", type=_ints, help="truncation level(s) N, comma separated")
    common.add_argument("--t", type=_floats, help="time(s), comma separated")
    common.add_argument("--t-grid", dest="t_grid", type=_grid, help="lo:hi:n (geometric) or explicit list")
    common.add_argument("--window", type=_floats, help="fit window lo,hi")
    common.add_argument("--i", type=int, help="start state")
    common.add_argument("--j", type=_state, help="target state, or 'survival'")
    common.add_argument("--n", type=int, help="Monte Carlo replicates")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--tol", type=float, help="accuracy target")
    common.add_argument("--lam", type=float, help="decay parameter (default: analytic or extrapolated)")
    common.add_argument("--source", choices=("kernel", "oracle"), help="kappa: spectral kernel or closed form")
    common.add_argument("--suite", choices=sorted(SUITES), help="verify: which criteria to run")
    common.add_argument("--format", choices=("json", "csv"), help="output format")
    common.add_argument("--out", help="write the report here instead of stdout")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="qsdlab", description="Quasi-stationary analysis of killed birth-death chains.")
    parser.add_argument("--version", action="version", version=f"qsdlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "validate": "generator diagnostics",
        "decay": "decay parameter per truncation and its extrapolation",
        "invariants": "invariant measure and vector with residuals",
        "kernel": "rows of P(t)",
        "lcd": "conditional distribution given survival",
        "classify": "lambda-potential and positivity",
        "kappa": "log g series and polynomial exponent fit",
        "simulate": "Monte Carlo survival and conditional law",
        "conjectures": "full conjecture report",
        "verify": "run the acceptance criteria",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def resolve_config(ns: argparse.Namespace) -> RunConfig:
    cfg, given = RunConfig(), set()
    if ns.config is not None:
        try:
            obj = json.loads(ns.config.read_text())
            cfg = RunConfig.from_json(obj)
        except (OSError, json.JSONDecodeError, TypeError, AttributeError) as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from None
        given = set(obj)
    for f in fields(RunConfig):
        v = getattr(ns, f.name, None)
        if v is not None:
            setattr(cfg, f.name, v)
            given.add(f.name)
    if cfg.trunc is None:
        n_trunc = cfg.model.get("n_trunc")
        if ns.command == "decay":
            cfg.trunc = [int(n_trunc) // 2, int(n_trunc)] if n_trunc else [1000, 2000]
        else:
            cfg.trunc = [int(n_trunc)] if n_trunc else [2000]
    if ns.command == "classify" and "t" not in given:
        cfg.t = [100.0]
    if cfg.window is not None and len(cfg.window) != 2:
        raise UsageError("--window needs exactly two numbers")
    return cfg


def _lam(spec, cfg: RunConfig) -> float:
    if cfg.lam is not None:
        return cfg.lam
    lam = analytic_decay_parameter(spec)
    if lam is None:
        N = cfg.trunc[-1]
        lam = decay_parameter(spec, [max(N // 2, 1), max(N, 2)]).extrapolated
    return float(lam)


def _csv_rows(header: Sequence[str], rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in r) for r in rows]
    return "\n".join(lines) + "\n"


def cmd_validate(spec, cfg):
    g = build_generator(spec, cfg.trunc[-1])
    d = validate_generator(g)
    return d.to_json(), None, 0 if d.ok else 1


def cmd_decay(spec, cfg):
    return decay_parameter(spec, cfg.trunc).to_json(), None, 0


def cmd_invariants(spec, cfg):
    g = build_generator(spec, cfg.trunc[-1])
    pair = invariant_pair(g, cfg.lam if cfg.lam is not None else analytic_decay_parameter(spec))
    rep = verify_semigroup_invariance(pair, g, cfg.t)
    return {"pair": pair.to_json(), "semigroup": rep.to_json()}, None, 0


def cmd_kernel(spec, cfg):
    g = build_generator(spec, cfg.trunc[-1])
    ks = [transition_matrix(g, t, tol=cfg.tol, rows=[cfg.i]) for t in cfg.t]
    csv_text = "".join(k.to_csv() if n == 0 else k.to_csv().split("\n", 1)[1] for n, k in enumerate(ks))
    return {"kernels": [k.to_json() for k in ks]}, csv_text, 0


def cmd_lcd(spec, cfg):
    g = build_generator(spec, cfg.trunc[-1])
    ds = [conditional_distribution(g, cfg.i, t) for t in cfg.t]
    rows = [(d.t, int(s), p) for d in ds for s, p in zip(d.states, d.probabilities)]
    return {"distributions": [d.to_json() for d in ds]}, _csv_rows(["t", "j", "p"], rows), 0


def cmd_classify(spec, cfg):
    j = cfg.i if cfg.j == "survival" else int(cfg.j)
    c = classify(spec, _lam(spec, cfg), cfg.t[-1], pairs=[(cfg.i, j)], N=cfg.trunc[-1])
    return c.to_json(), None, 0


def cmd_kappa(spec, cfg):
    lam = _lam(spec, cfg)
    j = None if cfg.j == "survival" else cfg.j
    if cfg.source == "oracle":
        s = oracle_series(spec, cfg.i, j, cfg.t_grid, lam)
    else:
        s = decay_series(spec, cfg.i, j, lam, cfg.t_grid, N=cfg.trunc[-1])
    k = estimate_kappa(s, tuple(cfg.window) if cfg.window else None)
    return {"series": s.to_json(), "fit": k.to_json()}, s.to_csv(), 0


def cmd_simulate(spec, cfg):
    surv = estimate_survival(spec, cfg.i, cfg.t, cfg.n, cfg.seed)
    cond = estimate_conditional(spec, cfg.i, max(cfg.t), cfg.n, cfg.seed)
    rows = list(zip(surv.times, surv.estimates, surv.stderr))
    return {"survival": surv.to_json(), "conditional": cond.to_json()}, _csv_rows(["t", "survival", "stderr"], rows), 0


def cmd_conjectures(spec, cfg):
    grid = np.asarray(cfg.t_grid)
    window = tuple(cfg.window) if cfg.window else (float(grid[0]), float(grid[-1]))
    cc = ConjectureConfig(window=window, n_points=len(grid), N=cfg.trunc[-1], lam=cfg.lam)
    rep = conjecture_report(spec, cc)
    ok = all(s["status"] != "fail" for s in (rep.conjecture_i, rep.conjecture_ii, rep.conjecture_iii))
    return rep.to_json(), rep.kappa_table_csv(), 0 if ok else 1


def cmd_verify(spec, cfg):
    """Print one line per criterion; the JSON report goes only to --out."""
    results = run_suite(cfg.suite, print)
    ok = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} criteria passed")
    return {"suite": cfg.suite, "passed": ok, "criteria": [r.to_json() for r in results]}, None, 0 if ok else 1


HANDLERS = {
    "validate": cmd_validate,
    "decay": cmd_decay,
    "invariants": cmd_invariants,
    "kernel": cmd_kernel,
    "lcd": cmd_lcd,
    "classify": cmd_classify,
    "kappa": cmd_kappa,
    "simulate": cmd_simulate,
    "conjectures": cmd_conjectures,
    "verify": cmd_verify,
}


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(ns)
        if cfg.format == "csv" and ns.command not in CSV_COMMANDS:
            raise UsageError(f"{ns.command} has no CSV form; CSV is for series output ({', '.join(sorted(CSV_COMMANDS))})")
        spec = model_from_json(cfg.model)
        result, csv_text, status = HANDLERS[ns.command](spec, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"qsdlab: error: {exc}", file=sys.stderr)
        return 2
    except USAGE_ERRORS as exc:
        print(f"qsdlab: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except QSDError as exc:
        print(f"qsdlab: computation failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"qsdlab: computation failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1

    if cfg.format == "csv":
        _emit(csv_text, cfg.out)
    elif ns.command != "verify" or cfg.out:
        report = {"command": ns.command, "version": __version__, "config": json.loads(cfg.to_json()), "result": result}
        _emit(json.dumps(_clean(report), indent=2) + "\n", cfg.out)
    return status


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
