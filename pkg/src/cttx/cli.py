"""Command-line entry point: ``cttx <command> --config FILE [--seed N] [--out PATH] [--format csv|json]``."""

import argparse
import json
import math
import os
import sys

import jsonschema
import numpy as np

from . import __version__
from . import io as cio
from .dte import PairEnsemble, te_comb_sum
from .exceptions import ConfigError, CttxError, NumericalError
from .limits import Schedule, converge_te, te_rate_fd
from .markov import MODELS, ept_monte_carlo, make_model
from .paths import CtmcSpec, PoissonSpec, simulate_ctmc, simulate_thppp
from .poisson import (LaggedPoissonModel, LaggedPoissonParams, analytic_limit,
                      path_kl_batch, tau_S_limit, tau_S_schedule)

COMMANDS = ("simulate", "dte", "ppp", "girsanov", "rate", "converge")
OUTPUT_DIR_ENV = "CTTX_OUTPUT_DIR"

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_WINDOW = {
    "type": "object",
    "required": ["t0", "T", "s", "r"],
    "properties": {"t0": _NUM, "T": _NUM, "s": _POS, "r": _POS},
    "additionalProperties": False,
}
_MODEL = {
    "type": "object",
    "required": ["name"],
    "properties": {"name": {"type": "string"}, "params": {"type": "object"}},
    "additionalProperties": False,
}
_SCHEDULE = {"type": "array", "items": _POS, "minItems": 1}
_COMMON = {
    "command": {"enum": list(COMMANDS)},
    "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
    "n_paths": {"type": "integer", "minimum": 0},
    "output": {
        "type": "object",
        "properties": {"path": {"type": "string"}, "format": {"enum": ["csv", "json"]}},
        "additionalProperties": False,
    },
}


def _schema(required, **props):
    return {"type": "object", "required": required,
            "properties": {**_COMMON, **props}, "additionalProperties": False}


SCHEMAS = {
    "simulate": _schema(["model"], model=_MODEL,
                        window={"type": "object",
                                "properties": {"t_start": _NUM, "t_end": _NUM, "t0": _NUM,
                                               "T": _NUM, "s": _POS, "r": _POS}}),
    "dte": _schema(["model", "window", "dt"], model=_MODEL, window=_WINDOW, dt=_POS,
                   mode={"enum": ["exact", "plugin", "auto"]}),
    "ppp": _schema(["model", "window", "schedule"], model=_MODEL, window=_WINDOW,
                   schedule=_SCHEDULE),
    "girsanov": _schema(["model", "window"], model=_MODEL, window=_WINDOW),
    "rate": _schema(["model", "window", "t", "schedule"], model=_MODEL, window=_WINDOW,
                    t=_NUM, schedule=_SCHEDULE, dt=_POS,
                    surrogate={"enum": ["tauS", "exact"]}),
    "converge": _schema(["model", "window", "schedule"], model=_MODEL, window=_WINDOW,
                        schedule=_SCHEDULE, mode={"enum": ["exact", "plugin", "auto"]}),
}


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None


def validate(command, config):
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    if config.get("command", command) != command:
        raise ConfigError(f"config is for {config['command']!r}, not {command!r}")
    try:
        jsonschema.validate(config, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None


# -- model construction ---------------------------------------------------------

def _lagged(config):
    params = dict(config["model"].get("params", {}))
    w = config["window"]
    try:
        lp = LaggedPoissonParams(lam=params.pop("lam", 1.0),
                                 epsilon=params.pop("epsilon", 1.0),
                                 r=w["r"], s=w["s"], t0=w["t0"], T=w["T"])
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    extra = {k: params.pop(k) for k in ("lam_after", "switch_time") if k in params}
    if params:
        raise ConfigError(f"unknown lagged-poisson parameters {sorted(params)}")
    return LaggedPoissonModel(lp, **extra)


def build_model(config):
    name = config["model"]["name"]
    if name == "lagged-poisson":
        return _lagged(config)
    if name in MODELS:
        params = {**config["model"].get("params", {}), **config["window"]}
        return make_model(name, params)
    raise ConfigError(
        f"unknown model {name!r}; choose from {sorted(['lagged-poisson', *MODELS])}")


# -- commands --------------------------------------------------------------------
# Each returns (columns, rows, json_body, summary).

def _seed(config):
    return int(config.get("seed", 0))


def cmd_simulate(config):
    name = config["model"]["name"]
    params = config["model"].get("params", {})
    n = int(config.get("n_paths", 1)) or 1
    seed = _seed(config)
    window = config.get("window", {})
    if name in ("poisson", "ctmc"):
        t_start, t_end = window.get("t_start", 0.0), window.get("t_end", 1.0)
        if name == "poisson":
            spec = PoissonSpec(params.get("lam", 1.0))
            paths = [simulate_thppp(spec, t_start, t_end, seed, j) for j in range(n)]
        else:
            spec = CtmcSpec(params["rate_matrix"], params.get("init_state", 0))
            paths = [simulate_ctmc(spec, t_start, t_end, seed, j) for j in range(n)]
        return ("paths", paths, f"{n} path(s), {sum(p.n_jumps for p in paths)} jumps")
    if "window" not in config:
        raise ConfigError(f"model {name!r} needs a window {{t0, T, s, r}}")
    model = build_model(config)
    pairs = model.simulate(n, seed)
    jumps = sum(p.x.n_jumps for p in pairs)
    return ("pairs", pairs, f"{n} pair(s), {jumps} destination jumps")


def cmd_dte(config):
    model = build_model(config)
    grid = model.grid(config["dt"])
    mode = config.get("mode", "auto")
    if mode == "auto":
        mode = "exact" if hasattr(model, "exact_step_tables") else "plugin"
    if mode == "exact":
        est = te_comb_sum(model, grid)
    else:
        ens = PairEnsemble(model.simulate(int(config.get("n_paths", 1000)), _seed(config),
                                          dt_max=grid.dt))
        est = te_comb_sum(ens, grid, relative=getattr(model, "plugin_relative", False),
                          **model.plugin_lengths(grid))
    rows = [(i, t, v) for (i, v), t in zip(est.per_step, est.node_times)]
    return (["i", "node_time", "te_nats"], rows, est.to_dict(),
            f"te_sum={cio.fmt(est.value)} stderr={cio.fmt(est.stderr)} ({mode}, tau={grid.tau})")


def cmd_ppp(config):
    model = build_model(config)
    if not isinstance(model, LaggedPoissonModel):
        raise ConfigError("ppp needs model 'lagged-poisson'")
    params = model.params
    sched = Schedule(tuple(config["schedule"]))
    n = int(config.get("n_paths", 0))
    ens = None
    if n:
        ens = PairEnsemble(model.simulate(n, _seed(config), dt_max=sched.dt_values[0]))
    rows = []
    for row in tau_S_schedule(params, sched):
        mc = err = math.nan
        if ens is not None:
            kl, _ = path_kl_batch(params, row["dt"], ens)
            mc = float(kl.mean())
            err = float(kl.std(ddof=1) / math.sqrt(kl.size)) if kl.size > 1 else math.nan
        rows.append((row["dt"], row["tau"], row["S"], row["tauS"], row["analytic_limit"],
                     mc, err))
    cols = ["dt", "tau", "S", "tauS", "analytic_limit", "mc_te", "mc_stderr"]
    body = {"rows": [dict(zip(cols, r)) for r in rows], "tauS_limit": tau_S_limit(params)}
    last = rows[-1]
    return (cols, rows, body,
            f"{len(rows)} rows; tauS(dt={cio.fmt(last[0])})={cio.fmt(last[3])} "
            f"analytic_limit={cio.fmt(analytic_limit(params))}",
            {"tauS_limit": cio.fmt(tau_S_limit(params))})


def cmd_girsanov(config):
    model = build_model(config)
    if isinstance(model, LaggedPoissonModel):
        raise ConfigError("girsanov needs a jump-rate model: " + ", ".join(sorted(MODELS)))
    n = int(config.get("n_paths", 1000))
    est = ept_monte_carlo(model, n, _seed(config))
    qs = [0.05, 0.25, 0.5, 0.75, 0.95]
    quant = np.quantile(est.samples, qs).tolist()
    body = {"ept": est.value, "stderr": est.stderr, "n_paths": est.n_paths,
            "per_path_quantiles": {f"q{int(q * 100):02d}": v for q, v in zip(qs, quant)}}
    cols = ["ept", "stderr", "n_paths"] + [f"q{int(q * 100):02d}" for q in qs]
    rows = [[est.value, est.stderr, est.n_paths] + quant]
    return (cols, rows, body,
            f"ept={cio.fmt(est.value)} stderr={cio.fmt(est.stderr)} n_paths={n}")


def cmd_rate(config):
    model = build_model(config)
    rep = te_rate_fd(model, config["t"], config["schedule"], dt=config.get("dt"),
                     surrogate=config.get("surrogate", "tauS"),
                     n_paths=int(config.get("n_paths", 1000)), seed=_seed(config))
    rows = [(h, v) for h, v, _ in rep.rows()]
    body = {"rows": [{"h": h, "ept_over_h": v, "stderr": e} for h, v, e in rep.rows()],
            "rate": rep.rate, "divergent": rep.divergent}
    return (["h", "ept_over_h"], rows, body, f"rate={cio.fmt(rep.rate)}")


def cmd_converge(config):
    model = build_model(config)
    rep = converge_te(model, config["schedule"], mode=config.get("mode", "auto"),
                      n_paths=int(config.get("n_paths", 0)), seed=_seed(config))
    rows = [(r.dt, r.te_sum, r.stderr, r.bound_value, r.bound_satisfied_fraction)
            for r in rep.rows]
    return (["dt", "te_sum", "stderr", "bound", "fraction_in_bound"], rows, rep.to_dict(),
            f"limit={cio.fmt(rep.limit_estimate)} cauchy_gap={cio.fmt(rep.cauchy_gap)}")


HANDLERS = {"simulate": cmd_simulate, "dte": cmd_dte, "ppp": cmd_ppp,
            "girsanov": cmd_girsanov, "rate": cmd_rate, "converge": cmd_converge}


def _check_finite_rows(rows):
    for row in rows:
        for v in row:
            if isinstance(v, float) and math.isnan(v):
                continue
            if isinstance(v, float) and math.isinf(v):
                # +inf is a legitimate divergence marker, -inf is not.
                if v < 0:
                    raise NumericalError("non-finite value in output")


def render(command, config, fmt, result):
    meta = {"cttx_version": __version__, "command": command,
            # The output block only says where bytes go, not what they are.
            "config_sha256": cio.config_hash({k: v for k, v in config.items()
                                              if k != "output"})}
    if command == "simulate":
        kind, items, summary = result
        if fmt == "json":
            text = (cio.pairs_to_json(items, meta) if kind == "pairs"
                    else cio.dumps({"paths": [p.to_dict() for p in items], "metadata": meta}))
        else:
            if kind == "pairs":
                raise ConfigError("CSV output covers single-process paths; use --format json")
            text = cio.paths_to_csv(items, meta)
        return text, summary
    cols, rows, body, summary, *extra = result
    _check_finite_rows(rows)
    if extra:
        meta.update(extra[0])
    if fmt == "json":
        return cio.dumps({**body, "metadata": {**body.get("metadata", {}), **meta}}), summary
    return cio.csv_text(cols, rows, meta), summary


def output_path(command, config, fmt):
    out = config.get("output", {}).get("path") or f"{command}.{fmt}"
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not os.path.isabs(out):
        out = os.path.join(base, out)
    return out


def run(command, config):
    """Validate ``config``, execute it and write the artifact; returns ``(path, summary)``."""
    validate(command, config)
    fmt = config.get("output", {}).get("format", "csv")
    result = HANDLERS[command](config)
    text, summary = render(command, config, fmt, result)
    path = output_path(command, config, fmt)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path, summary


def build_parser():
    parser = argparse.ArgumentParser(prog="cttx", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"cttx {__version__}")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="override the output path")
    parser.add_argument("--format", choices=("csv", "json"), help="override the output format")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    try:
        config = load_config(args.config)
        if not isinstance(config, dict):
            raise ConfigError("config must be a JSON object")
        output = dict(config.get("output", {}))
        if args.out is not None:
            output["path"] = args.out
        if args.format is not None:
            output["format"] = args.format
        if output:
            config["output"] = output
        if args.seed is not None:
            config["seed"] = args.seed
        path, summary = run(args.command, config)
    except CttxError as exc:
        print(f"cttx {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"cttx {args.command}: numerical error: {exc}", file=sys.stderr)
        return NumericalError.exit_code
    print(f"{args.command}: {summary} -> {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
