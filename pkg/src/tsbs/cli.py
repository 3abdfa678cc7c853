"""Command-line front end: ``tsbs <command> [--config FILE] [flags]``.

Configuration is an INI file with one section per concern. Flags override
file values, and ``--set section.key=value`` reaches any field. Without
``--config`` the file named by ``$TSBS_CONFIG`` is used when set.

Exit codes: 0 success, 1 parameter error, 2 gate violation, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import json
import math
import os
import sys
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from tsbs.fd import GridSpec, SchemeError, convergence_study, solve
from tsbs.market import (
    MarketParams,
    OptionKind,
    SubdiffusionParams,
    bs_price,
    pde_coefficients,
)
from tsbs.stability import (
    CONDITION_IDS,
    ConditionReport,
    InfeasibleRescaling,
    check_implicit_condition,
    check_weighted_stability,
    find_stabilizing_beta,
)
from tsbs.stochastic import (
    HorizonOverflow,
    PathParams,
    RngStream,
    crr_price,
    mc_price,
    simulate_tempered_gbm_path,
)

CONFIG_ENV = "TSBS_CONFIG"

EXIT_OK = 0
EXIT_PARAM = 1
EXIT_GATE = 2
EXIT_NUMERIC = 3


@dataclass
class MarketSection:
    spot: float = 1.0
    strike: float = 2.0
    maturity: float = 1.0
    rate: float = 0.5
    volatility: float = 0.5
    dividend: float = 0.0
    kind: str = "call"


@dataclass
class SubdiffusionSection:
    alpha: float = 0.5
    lam: float = 1e-10


@dataclass
class GridSection:
    x_min: float = -10.0
    x_max: float = 10.0
    n: int = 900
    N: int = 900
    theta: float = 0.0


@dataclass
class MonteCarloSection:
    M: int = 400
    k: int = 50
    k_crr: int = 40
    seed: int = 0
    convention: str = "operational"


@dataclass
class OutputSection:
    path: str = ""
    format: str = "json"


@dataclass
class FlagsSection:
    method: str = "fd"
    smoothing: float = 0.0
    enforce_gate: bool = False
    condition: str = "weighted-22"
    grouping: str = "max-then-add"
    first_step_weight: str = "printed"


@dataclass
class SweepSection:
    """Parameter ranges for ``surface`` and ``compare``.

    Value lists are comma separated numbers or ``linspace:a:b:n`` /
    ``geomspace:a:b:n``; geometric spacing concentrates points near 0.
    """

    kind: str = "alpha-lambda"
    alphas: str = "0.5"
    lams: str = "1e-10"
    strikes: str = "2.0"
    maturities: str = "1.0"
    workers: int = 1


@dataclass
class ConvergeSection:
    axis: str = "time"
    levels: int = 4
    reference: str = "successive"


@dataclass
class SimulateSection:
    drift: float = 1.0
    horizon: float = 1.0
    steps: int = 1000


SECTIONS = {
    "market": MarketSection,
    "subdiffusion": SubdiffusionSection,
    "grid": GridSection,
    "mc": MonteCarloSection,
    "output": OutputSection,
    "flags": FlagsSection,
    "sweep": SweepSection,
    "converge": ConvergeSection,
    "simulate": SimulateSection,
}


def _encode(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _decode(raw: str, typ):
    raw = raw.strip()
    if typ is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if typ is int:
        return int(raw)
    if typ is float:
        return float(raw)
    return raw


@dataclass
class RunConfig:
    market: MarketSection = field(default_factory=MarketSection)
    subdiffusion: SubdiffusionSection = field(default_factory=SubdiffusionSection)
    grid: GridSection = field(default_factory=GridSection)
    mc: MonteCarloSection = field(default_factory=MonteCarloSection)
    output: OutputSection = field(default_factory=OutputSection)
    flags: FlagsSection = field(default_factory=FlagsSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    converge: ConvergeSection = field(default_factory=ConvergeSection)
    simulate: SimulateSection = field(default_factory=SimulateSection)

    def set(self, section: str, key: str, raw: str) -> None:
        if section not in SECTIONS:
            raise ValueError(f"unknown config section [{section}]")
        obj = getattr(self, section)
        hints = typing.get_type_hints(type(obj))
        if key not in hints:
            raise ValueError(f"unknown key {key!r} in [{section}]")
        setattr(obj, key, _decode(raw, hints[key]))

    @classmethod
    def from_string(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keys are case sensitive (n vs N)
        parser.read_string(text)
        cfg = cls()
        for section in parser.sections():
            for key, raw in parser.items(section):
                cfg.set(section, key, raw)
        return cfg

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_string(fh.read())

    def to_string(self) -> str:
        lines = []
        for name in SECTIONS:
            lines.append(f"[{name}]")
            for f in dataclasses.fields(getattr(self, name)):
                lines.append(f"{f.name} = {_encode(getattr(getattr(self, name), f.name))}")
            lines.append("")
        return "\n".join(lines)

    # domain objects -------------------------------------------------------

    def market_params(self) -> MarketParams:
        s = self.market
        return MarketParams(s.spot, s.strike, s.maturity, s.rate, s.volatility, s.dividend)

    def kind(self) -> OptionKind:
        return OptionKind.parse(self.market.kind)

    def sub_params(self) -> SubdiffusionParams:
        return SubdiffusionParams(self.subdiffusion.alpha, self.subdiffusion.lam)

    def grid_spec(self) -> GridSpec:
        g = self.grid
        return GridSpec(g.x_min, g.x_max, g.n, g.N, g.theta)

    def smoothing(self) -> float | None:
        return self.flags.smoothing or None


def parse_values(spec: str) -> list[float]:
    spec = spec.strip()
    for name, fn in (("linspace", np.linspace), ("geomspace", np.geomspace)):
        if spec.startswith(name + ":"):
            parts = spec.split(":")[1:]
            if len(parts) != 3:
                raise ValueError(f"expected {name}:start:stop:count, got {spec!r}")
            return [float(v) for v in fn(float(parts[0]), float(parts[1]), int(parts[2]))]
    vals = [float(v) for v in spec.split(",") if v.strip()]
    if not vals:
        raise ValueError("empty value list")
    return vals


class GateViolation(Exception):
    def __init__(self, report: ConditionReport):
        super().__init__(f"stability gate failed: {report.condition} margin {report.margin:.6g}")
        self.report = report


# output helpers ------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def rows_to_csv(header: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(header)
    for row in rows:
        out.writerow([_fmt(row[h]) for h in header])
    return buf.getvalue()


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def to_json(obj) -> str:
    return json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n"


def emit(cfg: RunConfig, text: str) -> None:
    if cfg.output.path:
        with open(cfg.output.path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def emit_table(cfg: RunConfig, header: list[str], rows: list[dict]) -> None:
    if cfg.output.format == "json":
        emit(cfg, to_json(rows))
    else:
        emit(cfg, rows_to_csv(header, rows))


# commands ------------------------------------------------------------------


def gate_report(cfg: RunConfig, m=None, sub=None, condition=None) -> ConditionReport:
    m = m or cfg.market_params()
    sub = sub or cfg.sub_params()
    grid = cfg.grid_spec()
    dt = grid.dt(m.maturity)
    condition = condition or cfg.flags.condition
    if condition == "weighted-22":
        return check_weighted_stability(
            pde_coefficients(m), sub, grid, dt, grouping=cfg.flags.grouping
        )
    if condition in ("implicit-oby1", "convergence-lemma"):
        return check_implicit_condition(sub, m.rate, dt, grid.N, condition)
    raise ValueError(f"condition must be one of {CONDITION_IDS}")


def fd_price(cfg: RunConfig, m=None, sub=None) -> float:
    m = m or cfg.market_params()
    sub = sub or cfg.sub_params()
    if cfg.flags.enforce_gate:
        rep = gate_report(cfg, m, sub)
        if not rep.satisfied:
            raise GateViolation(rep)
    s = solve(
        m,
        sub,
        cfg.grid_spec(),
        smoothing=cfg.smoothing(),
        kind=cfg.kind(),
        u0_weight=cfg.flags.first_step_weight,
    )
    price = s.price()
    if not math.isfinite(price):
        raise SchemeError(f"non-finite FD price {price}")
    return price


def cmd_price(cfg: RunConfig) -> int:
    method = cfg.flags.method
    m, sub = cfg.market_params(), cfg.sub_params()
    record = {"method": method, "kind": cfg.kind().value, "alpha": sub.alpha, "lam": sub.lam}
    if method == "fd":
        record["price"] = fd_price(cfg, m, sub)
    elif method == "bs":
        record["price"] = float(bs_price(m, cfg.kind()))
    elif method in ("mc", "crr"):
        mc = cfg.mc
        if method == "mc":
            est = mc_price(m, sub, cfg.kind(), mc.M, mc.k, mc.seed, mc.convention)
        else:
            est = crr_price(m, sub, cfg.kind(), mc.M, mc.k_crr, mc.seed, mc.k, mc.convention)
        record.update(price=est.mean, **est.to_dict())
    else:
        raise ValueError(f"method must be fd, mc, crr or bs, got {method!r}")
    if cfg.output.path:
        print(_fmt(record["price"]))
    if cfg.output.format == "csv":
        keys = [k for k in ("method", "kind", "alpha", "lam", "price", "stderr", "M", "k", "seed") if k in record]
        emit(cfg, rows_to_csv(keys, [record]))
    else:
        emit(cfg, to_json(record))
    return EXIT_OK


def cmd_stability(cfg: RunConfig) -> int:
    rep = gate_report(cfg)
    emit(cfg, to_json(rep.to_dict()))
    return EXIT_OK if rep.satisfied else EXIT_GATE


def cmd_rescale(cfg: RunConfig) -> int:
    res = find_stabilizing_beta(cfg.market_params(), cfg.sub_params(), cfg.grid_spec())
    emit(cfg, to_json(res.to_dict()))
    return EXIT_OK


def cmd_converge(cfg: RunConfig) -> int:
    axes = ("time", "space") if cfg.converge.axis == "both" else (cfg.converge.axis,)
    rows = []
    for axis in axes:
        res = convergence_study(
            cfg.market_params(),
            cfg.sub_params(),
            cfg.grid_spec(),
            axis=axis,
            levels=cfg.converge.levels,
            smoothing=True,
            reference=cfg.converge.reference,
        )
        for row in res.rows():
            row["conclusive"] = res.conclusive
            row["expected"] = 2.0 - cfg.subdiffusion.alpha if axis == "time" else 2.0
            rows.append(row)
    emit_table(cfg, ["axis", "count", "error", "order", "expected", "conclusive"], rows)
    return EXIT_OK


def _surface_point(args):
    cfg, changes, sub_changes = args
    m = cfg.market_params().replace(**changes)
    sub = dataclasses.replace(cfg.sub_params(), **sub_changes)
    return fd_price(cfg, m, sub)


def _sweep(cfg: RunConfig, tasks: list) -> list[float]:
    """Evaluate FD prices; results come back in task order whatever the workers do."""
    if cfg.sweep.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.sweep.workers) as pool:
            return list(pool.map(_surface_point, tasks))
    return [_surface_point(t) for t in tasks]


def cmd_surface(cfg: RunConfig) -> int:
    kind = cfg.sweep.kind
    if kind == "grid":
        s = solve(
            cfg.market_params(),
            cfg.sub_params(),
            cfg.grid_spec(),
            smoothing=cfg.smoothing(),
            kind=cfg.kind(),
            u0_weight=cfg.flags.first_step_weight,
        )
        if not math.isfinite(s.max_norm()):
            raise SchemeError("surface contains non-finite values")
        if cfg.output.path:
            s.to_csv(cfg.output.path)
        else:
            rows = [
                {"x": float(x), "t": float(t), "u": float(s.values[k, i])}
                for k, t in enumerate(s.t)
                for i, x in enumerate(s.x)
            ]
            sys.stdout.write(rows_to_csv(["x", "t", "u"], rows))
        return EXIT_OK
    if kind == "alpha-lambda":
        pts = [(a, l) for a in parse_values(cfg.sweep.alphas) for l in parse_values(cfg.sweep.lams)]
        tasks = [(cfg, {}, {"alpha": a, "lam": l}) for a, l in pts]
        header = ["alpha", "lambda", "price"]
    elif kind == "strike-maturity":
        pts = [(k, t) for k in parse_values(cfg.sweep.strikes) for t in parse_values(cfg.sweep.maturities)]
        tasks = [(cfg, {"strike": k, "maturity": t}, {}) for k, t in pts]
        header = ["strike", "maturity", "price"]
    else:
        raise ValueError("sweep kind must be alpha-lambda, strike-maturity or grid")
    prices = _sweep(cfg, tasks)
    rows = [dict(zip(header, (float(p[0]), float(p[1]), v))) for p, v in zip(pts, prices)]
    emit_table(cfg, header, rows)
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    sim = cfg.simulate
    if sim.steps < 1 or not sim.horizon > 0:
        raise ValueError("simulate needs steps >= 1 and horizon > 0")
    p = PathParams(cfg.market_params(), cfg.sub_params(), sim.drift)
    t = np.linspace(0.0, sim.horizon, sim.steps + 1)
    path = simulate_tempered_gbm_path(p, t, RngStream(cfg.mc.seed, 0))
    header = ["t", "gbm", "tempered_gbm", "inverse_subordinator"]
    rows = [dict(zip(header, map(float, r))) for r in zip(path.t, path.gbm, path.tempered_gbm, path.inverse_subordinator)]
    emit(cfg, rows_to_csv(header, rows))
    return EXIT_OK


ORACLE_SLACK = 5e-3


def cmd_compare(cfg: RunConfig) -> int:
    m = cfg.market_params()
    mc = cfg.mc
    kind = cfg.kind()
    rows = []
    for lam in parse_values(cfg.sweep.lams):
        sub = SubdiffusionParams(cfg.subdiffusion.alpha, lam)
        gate = gate_report(cfg, m, sub, condition="convergence-lemma")
        try:
            fd = fd_price(cfg, m, sub)
        except (SchemeError, GateViolation):
            fd = math.nan
        e_mc = mc_price(m, sub, kind, mc.M, mc.k, mc.seed, mc.convention)
        e_crr = crr_price(m, sub, kind, mc.M, mc.k_crr, mc.seed, mc.k, mc.convention)
        rows.append(
            {
                "lambda": lam,
                "fd": fd,
                "mc": e_mc.mean,
                "mc_stderr": e_mc.stderr,
                "crr": e_crr.mean,
                "crr_stderr": e_crr.stderr,
                "gate": gate.satisfied,
                "gate_margin": gate.margin,
                "fd_mc_agree": bool(abs(fd - e_mc.mean) <= 3 * e_mc.stderr + ORACLE_SLACK),
                "fd_crr_agree": bool(abs(fd - e_crr.mean) <= 3 * e_crr.stderr + ORACLE_SLACK),
            }
        )
    header = list(rows[0]) if rows else ["lambda"]
    emit_table(cfg, header, rows)
    return EXIT_OK


HELP = {
    "price": "price one option with fd, mc, crr or bs",
    "stability": "evaluate a stability condition; exit 2 when it fails",
    "rescale": "search the time scale that satisfies the convergence condition",
    "converge": "observed temporal or spatial order by grid refinement",
    "surface": "FD prices over (alpha, lambda) or (K, T), or one x,t,u surface",
    "simulate": "GBM path with its time-changed version and S(t)",
    "compare": "FD against MC and CRR over a lambda sweep",
}

COMMANDS = {
    "price": cmd_price,
    "stability": cmd_stability,
    "rescale": cmd_rescale,
    "converge": cmd_converge,
    "surface": cmd_surface,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"INI file (default: ${CONFIG_ENV})")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"))
    common.add_argument("--seed", type=int)
    common.add_argument("--enforce-gate", action="store_true", default=None)
    common.add_argument("--smoothing", type=float, help="payoff smoothing half-width, 0 for none")
    common.add_argument("--theta", type=float)
    common.add_argument("--alpha", type=float)
    common.add_argument("--lambda", dest="lam", type=float)
    common.add_argument("--method", choices=("fd", "mc", "crr", "bs"))
    common.add_argument("--condition", choices=CONDITION_IDS)
    common.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override any config field; repeatable",
    )
    parser = argparse.ArgumentParser(prog="tsbs", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name])
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    path = args.config or os.environ.get(CONFIG_ENV)
    cfg = RunConfig.from_file(path) if path else RunConfig()
    for item in args.set:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise ValueError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        cfg.set(section.strip(), name.strip(), value)
    direct = {
        ("output", "path"): args.out,
        ("output", "format"): args.format,
        ("mc", "seed"): args.seed,
        ("flags", "enforce_gate"): args.enforce_gate,
        ("flags", "smoothing"): args.smoothing,
        ("grid", "theta"): args.theta,
        ("subdiffusion", "alpha"): args.alpha,
        ("subdiffusion", "lam"): args.lam,
        ("flags", "method"): args.method,
        ("flags", "condition"): args.condition,
    }
    for (section, name), value in direct.items():
        if value is not None:
            setattr(getattr(cfg, section), name, value)
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg)
    except GateViolation as exc:
        sys.stderr.write(to_json(exc.report.to_dict()))
        print(f"tsbs: {exc}", file=sys.stderr)
        return EXIT_GATE
    except (SchemeError, HorizonOverflow, FloatingPointError, OverflowError) as exc:
        print(f"tsbs: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, InfeasibleRescaling, OSError, configparser.Error) as exc:
        print(f"tsbs: {exc}", file=sys.stderr)
        return EXIT_PARAM


if __name__ == "__main__":
    sys.exit(main())
