"""Command-line entry point: ``fgplab <command> --config run.json``.

Each command writes ``report.json`` plus plot-data CSVs into ``--out``.
Exit status is 0 on success, 2 on invalid input and 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .exceptions import FGPLabError, NumericalError, ValidationError
from .fgp import hitting_switch, master_equation, resolve_numeraire
from .generating import from_config as gf_from_config
from .immunize import (capm_beta_series, immunization_residual, immunized_gf, load_factors_csv, orthonormalize,
                       save_factors_csv)
from .market import MarketSpec, TimeGrid, covariance, load_price_csv, realized_covariation, simulate_paths
from .portfolio import PassivePortfolio, WeightProcess, load_weights_csv
from .reporting import SCHEMA_VERSION, dump_json, write_columns, write_csv
from .statarb import (LongShortInputs, VariogramFit, expected_log_with_drift, fit_variogram, growth_rate,
                      load_variogram_csv, long_short_analyze, long_short_from_paths, optimal_c, optimal_c_with_drift,
                      optimal_horizon, realized_variogram, v_of_T)
from .units import MINUTE, parse_duration, to_minutes
from .verify import convergence_study, mirror_checks, mirror_decay_mc, scenario_compare

COMMANDS = ("simulate", "verify-master", "scenario", "statarb-ls", "statarb-quad", "variogram", "immunize", "mirror")
SIMULATION_COMMANDS = {"simulate", "verify-master", "scenario", "immunize", "mirror"}


# ------------------------------------------------------------ config helpers

def _require(cfg, key, where=""):
    if key not in cfg:
        raise ValidationError(f"missing required field {where}{key}", field=f"{where}{key}")
    return cfg[key]


def _duration(value, field):
    return parse_duration(value, field)


def _grid(cfg):
    g = _require(cfg, "grid")
    horizon = _duration(_require(g, "horizon", "grid."), "grid.horizon")
    if "dt" in g:
        steps = horizon / _duration(g["dt"], "grid.dt")
        if abs(steps - round(steps)) > 1e-6 * max(steps, 1.0):
            raise ValidationError("grid.horizon is not a whole number of grid.dt", field="grid.dt")
        steps = int(round(steps))
    else:
        steps = _require(g, "steps", "grid.")
    return TimeGrid.uniform(horizon, steps)


def _market(cfg):
    has_spec, has_csv = "market" in cfg, "input_csv" in cfg
    if has_spec == has_csv:
        raise ValidationError("exactly one of 'market' and 'input_csv' is required", field="market")
    if has_csv:
        return None, load_price_csv(cfg["input_csv"])
    try:
        return MarketSpec.from_dict(cfg["market"]), None
    except KeyError as exc:
        raise ValidationError(f"market.{exc.args[0]} is required", field=f"market.{exc.args[0]}") from exc


def _seed(cfg):
    seed = cfg.get("seed")
    if seed is None:
        raise ValidationError("a seed is required for simulation commands", field="seed")
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ValidationError("seed must be an unsigned 64-bit integer", field="seed")
    return seed


def _n_paths(cfg, default=200):
    n = cfg.get("paths", default)
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise ValidationError("paths must be a positive integer", field="paths")
    return n


def _paths(cfg):
    spec, ingested = _market(cfg)
    if ingested is not None:
        return spec, ingested
    return spec, simulate_paths(spec, _grid(cfg), _n_paths(cfg), _seed(cfg))


def _numeraire(cfg, spec, paths):
    block = cfg.get("numeraire", {"kind": "market"})
    kind = block.get("kind", "market") if isinstance(block, dict) else block
    if kind == "market":
        return "market"
    if kind == "money-market":
        idx = None if spec is None else spec.money_market_index
        idx = block.get("index", idx) if isinstance(block, dict) else idx
        if idx is None:
            raise ValidationError("money-market numeraire needs market.money_market_index", field="numeraire")
        return int(idx)
    if kind == "passive":
        return PassivePortfolio(_require(block, "shares", "numeraire."))
    if kind == "constant":
        return WeightProcess.constant(_require(block, "weights", "numeraire."), paths)
    if kind == "weights_csv":
        return load_weights_csv(_require(block, "path", "numeraire."), paths)
    raise ValidationError(f"unknown numeraire kind {kind!r}", field="numeraire.kind")


def _gf(cfg, n, L0=None):
    return gf_from_config(_require(cfg, "generating_function"), n, L0)


def _switch_aux(cfg):
    sw = cfg.get("switch")
    if sw is None:
        return None
    level, asset = float(_require(sw, "level", "switch.")), int(sw.get("asset", 0))
    return lambda paths, Lr: hitting_switch(Lr, level, asset)[0]


# ------------------------------------------------------------------ commands

def cmd_simulate(cfg, out):
    spec, paths = _paths(cfg)
    if spec is None:
        raise ValidationError("simulate needs a market spec", field="market")
    rc = realized_covariation(paths, 1)
    results = {
        "n_paths": paths.n_paths, "steps": paths.grid.M, "horizon": paths.grid.T,
        "terminal_log_price_mean": paths.logs[:, -1].mean(axis=0),
        "realized_covariance_rate_mean": rc.rate.mean(axis=0),
        "model_covariance": covariance(spec),
    }
    keep = min(int(cfg.get("csv_paths", 10)), paths.n_paths)
    rows = ([p, t] + list(paths.logs[p, m]) for p in range(keep) for m, t in enumerate(paths.grid.times))
    write_csv(os.path.join(out, "paths.csv"), ["path", "time"] + [f"log_{s}" for s in paths.names],
              ([int(r[0])] + [float(x) for x in r[1:]] for r in rows))
    return results


def cmd_verify_master(cfg, out):
    spec, ingested = _market(cfg)
    mode = cfg.get("covariance", "discrete")
    aux = _switch_aux(cfg)
    if ingested is not None:
        H = _gf(cfg, ingested.n, ingested.logs[0, 0])
        rho = _numeraire(cfg, None, ingested)
        F = None
        if aux is not None:
            log_vr, _ = resolve_numeraire(rho, ingested)
            F = aux(ingested, ingested.logs - log_vr[..., None])
        rep = master_equation(H, ingested, rho, F, covariance_mode="realized" if mode == "model" else mode)
        summary = rep.summary()
        summary["passed"] = bool(summary["max_abs_residual"] < 5e-3)
        write_columns(os.path.join(out, "residuals.csv"),
                      {"path": np.arange(ingested.n_paths), "lhs": rep.lhs, "delta_H": rep.delta_H,
                       "aux_correction": rep.aux_correction, "drift_integral": rep.drift_integral,
                       "residual": rep.residual})
        return summary
    grid = _grid(cfg)
    H = _gf(cfg, spec.n, spec.L0)
    rungs = int(cfg.get("ladder", 3))
    dt = grid.T / grid.M
    ladder = [dt * 2 ** (rungs - 1 - i) for i in range(rungs)]
    rho = cfg.get("numeraire", {"kind": "market"})
    kind = rho.get("kind", "market") if isinstance(rho, dict) else rho
    if kind == "passive":
        rho_kind = PassivePortfolio(_require(rho, "shares", "numeraire."))
    elif kind == "constant":
        rho_kind = np.asarray(_require(rho, "weights", "numeraire."), dtype=float)
    elif kind in ("market", "money-market"):
        rho_kind = kind
    else:
        raise ValidationError(f"numeraire kind {kind!r} needs ingested data", field="numeraire.kind")
    rep = convergence_study(spec, H, rho_kind, ladder, _n_paths(cfg), _seed(cfg), grid.T, aux, mode)
    finest = rep.per_path[ladder[-1]]
    write_columns(os.path.join(out, "convergence.csv"), {"dt": rep.dt, "max_abs_residual": rep.max_abs,
                                                          "mean_abs_residual": rep.mean_abs})
    write_columns(os.path.join(out, "residuals.csv"),
                  {"path": np.arange(finest.residual.shape[0]), "lhs": finest.lhs, "delta_H": finest.delta_H,
                   "aux_correction": finest.aux_correction, "drift_integral": finest.drift_integral,
                   "residual": finest.residual})
    res = rep.to_dict()
    res["max_abs_residual"] = max(rep.max_abs)
    res["covariance"] = mode
    return res


def cmd_scenario(cfg, out):
    spec, _ = _market(cfg)
    if spec is None:
        raise ValidationError("scenario needs a market spec", field="market")
    grid = _grid(cfg)
    eps = cfg.get("eps", [0.2, 0.1, 0.05])
    rep, per_path = scenario_compare(spec, _require(cfg, "p"), grid.T, grid.M, _n_paths(cfg, 4000), _seed(cfg),
                                     eps)
    write_columns(os.path.join(out, "per_path.csv"), per_path)
    cond = rep["conditioning"]
    write_columns(os.path.join(out, "conditioning.csv"),
                  {k: [c.get(k, math.nan) for c in cond] for k in ("eps", "count", "min_excess", "xi")})
    return rep


def cmd_statarb_ls(cfg, out):
    if "inputs" in cfg:
        block = cfg["inputs"]
        try:
            inp = LongShortInputs(*(float(block[k]) for k in ("a11", "a22", "a_diff", "h1", "h2")))
        except KeyError as exc:
            raise ValidationError(f"inputs.{exc.args[0]} is required", field=f"inputs.{exc.args[0]}") from exc
    else:
        spec, paths = _paths(cfg)
        dt = paths.grid.T / paths.grid.M
        fast = int(round(_duration(_require(cfg, "fast_lag"), "fast_lag") / dt))
        slow = int(round(_duration(_require(cfg, "slow_lag"), "slow_lag") / dt))
        mm = None if spec is None else spec.money_market_index
        n_risky = paths.n - (mm is not None)
        L0 = paths.logs[0, 0] if mm is None else np.delete(paths.logs[0, 0] - paths.logs[0, 0, mm], mm)
        inp = long_short_from_paths(paths, _gf(cfg, n_risky, L0), fast, slow, mm)
    rep = long_short_analyze(inp)
    scale = rep.kappa_check if np.isfinite(rep.kappa_check) and rep.kappa_check > 0 else 1.0
    kappa = np.linspace(0.0, 2.5 * scale, 101)
    write_columns(os.path.join(out, "growth_curve.csv"), {"kappa": kappa, "growth": rep.growth(kappa)})
    res = {"inputs": inp.to_dict(), "report": rep.to_dict()}
    if inp.samples:
        res["A_standard_error"] = inp.A_standard_error()
    if "kappa" in cfg:
        res["growth_at_kappa"] = float(rep.growth(float(cfg["kappa"])))
    return res


def _fit_from(cfg):
    if "variogram" in cfg:
        v = cfg["variogram"]
        try:
            B = _duration(v["B_fit"], "variogram.B_fit")
            return VariogramFit(float(v["C"]), float(v["U"]), B, float(v["k"])), "config"
        except KeyError as exc:
            raise ValidationError(f"variogram.{exc.args[0]} is required",
                                  field=f"variogram.{exc.args[0]}") from exc
    lags, rates = load_variogram_csv(_require(cfg, "variogram_csv"))
    return fit_variogram(lags, rates), "fitted"


def cmd_statarb_quad(cfg, out):
    fit, source = _fit_from(cfg)
    if "a" in cfg:
        a = float(cfg["a"])
    else:
        a = float(fit.rate(_duration(_require(cfg, "trade_interval"), "trade_interval")))
    lo, hi = (_duration(x, "T_range") for x in cfg.get("T_range", ["1min", "1d"]))
    res = optimal_horizon(fit, a, (lo, hi), int(cfg.get("n_grid", 1024)))
    u = np.linspace(math.log(lo), math.log(hi), 256)
    T = np.exp(u)
    write_columns(os.path.join(out, "horizon_scan.csv"),
                  {"T_minutes": to_minutes(T), "rate": [growth_rate(fit, a, t) for t in T],
                   "c": [optimal_c(fit, a, t) for t in T]})
    out_d = {"fit": fit.to_dict(), "fit_source": source, "a": a, "horizon": res.to_dict(),
             "T_minutes": to_minutes(res.T), "v_T": v_of_T(fit, res.T)}
    if "gamma_hat" in cfg:
        g = float(cfg["gamma_hat"])
        c = optimal_c_with_drift(fit, a, g, res.T)
        out_d["drift"] = {"gamma_hat": g, "c": c, "rate": expected_log_with_drift(fit, a, g, c, res.T)}
    return out_d


def cmd_variogram(cfg, out):
    if "variogram_csv" in cfg:
        lags, rates = load_variogram_csv(cfg["variogram_csv"])
        provenance = "csv"
    else:
        spec, paths = _paths(cfg)
        dt = paths.grid.T / paths.grid.M
        steps = [int(round(_duration(x, "lags") / dt)) for x in _require(cfg, "lags")]
        w = np.asarray(cfg.get("weights", np.full(paths.n, 1.0 / paths.n)), dtype=float)
        lags, rates = realized_variogram(paths, w, steps)
        provenance = "estimated"
    fit = fit_variogram(lags, rates, int(cfg.get("restarts", 8)), int(cfg.get("fit_seed", 0)))
    write_columns(os.path.join(out, "variogram.csv"),
                  {"lag_seconds": np.asarray(lags) / (MINUTE / 60.0), "rate": rates, "fitted": fit.rate(lags)})
    return {"fit": fit.to_dict(), "n_points": int(len(lags)), "provenance": provenance}


def _factors(cfg, spec, paths, rho):
    if "factors_csv" in cfg:
        times, beta = load_factors_csv(cfg["factors_csv"], paths.n)
        if times.shape[0] != paths.grid.M + 1 or not np.allclose(times, paths.grid.times, rtol=1e-9, atol=1e-12):
            raise ValidationError("factor CSV times do not match the grid", field="factors_csv")
        return beta
    raw = []
    for i, block in enumerate(_require(cfg, "factors")):
        kind = block.get("kind")
        if kind == "price-level":
            raw.append(np.broadcast_to(np.full(paths.n, 1.0 / math.sqrt(paths.n)), paths.logs.shape))
        elif kind == "capm":
            dt = paths.grid.T / paths.grid.M
            window = int(round(_duration(_require(block, "window", f"factors[{i}]."), f"factors[{i}].window") / dt))
            model = spec if block.get("model_covariance") else None
            raw.append(capm_beta_series(paths, rho, window, model))
        else:
            raise ValidationError(f"unknown factor kind {kind!r}", field=f"factors[{i}].kind")
    return orthonormalize(np.stack(raw, axis=-2))


def cmd_immunize(cfg, out):
    spec, paths = _paths(cfg)
    rho = _numeraire(cfg, spec, paths)
    beta = _factors(cfg, spec, paths, rho)
    H = immunized_gf(_gf(cfg, paths.n, paths.logs[0, 0]), beta)
    F = beta.as_aux(paths.logs.shape) if H.aux_dim else None
    rep = master_equation(H, paths, rho, F, cfg.get("covariance", "discrete"), spec)
    exposure = immunization_residual(rep.weights, rep.lam, rep.rho_weights, beta)
    save_factors_csv(os.path.join(out, "factors.csv"), paths.grid.times, beta)
    write_columns(os.path.join(out, "residuals.csv"),
                  {"path": np.arange(paths.n_paths), "residual": rep.residual, "aux_correction": rep.aux_correction,
                   "max_exposure": exposure.max(axis=1)})
    s = rep.summary()
    s["max_exposure"] = float(exposure.max())
    s["exposure_passed"] = bool(exposure.max() < 1e-10)
    s["n_factors"] = beta.K
    s["orthonormality_error"] = beta.orthonormality_error
    return s


def cmd_mirror(cfg, out):
    res = {}
    if "market" in cfg:
        spec, _ = _market(cfg)
        grid = _grid(cfg)
        rep, per_path = mirror_checks(spec, _require(cfg, "weights"), cfg.get("q", [-1.0, 0.5, 2.0]),
                                      grid.T / grid.M, _n_paths(cfg), _seed(cfg), grid.T)
        write_columns(os.path.join(out, "per_path.csv"), per_path)
        res["identity"] = rep
    if "decay" in cfg:
        d = cfg["decay"]
        rep, per_path = mirror_decay_mc(float(_require(d, "sigma", "decay.")), float(_require(d, "gamma", "decay.")),
                                        _duration(d.get("T", "200y"), "decay.T"), int(d.get("paths", 1000)),
                                        _seed(cfg), _duration(d.get("dt", "1d"), "decay.dt"))
        write_columns(os.path.join(out, "decay.csv"), per_path)
        res["decay"] = rep
    if not res:
        raise ValidationError("mirror needs a 'market' block and/or a 'decay' block", field="market")
    return res


HANDLERS = {
    "simulate": cmd_simulate, "verify-master": cmd_verify_master, "scenario": cmd_scenario,
    "statarb-ls": cmd_statarb_ls, "statarb-quad": cmd_statarb_quad, "variogram": cmd_variogram,
    "immunize": cmd_immunize, "mirror": cmd_mirror,
}


# ---------------------------------------------------------------------- main

def run(command, cfg, out):
    """Execute ``command`` with the (already overridden) config dict; returns the report dict."""
    if command not in HANDLERS:
        raise ValidationError(f"unknown command {command!r}", field="command")
    if "command" in cfg and cfg["command"] != command:
        raise ValidationError(f"config is for {cfg['command']!r}, not {command!r}", field="command")
    if command in SIMULATION_COMMANDS and "input_csv" not in cfg and not (command == "mirror" and "market" not in cfg):
        _seed(cfg)
    os.makedirs(out, exist_ok=True)
    results = HANDLERS[command](cfg, out)
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "package_version": __version__,
        "config": cfg,
        "seed": cfg.get("seed"),
        "results": results,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    dump_json(report, os.path.join(out, "report.json"))
    return report


def _parser():
    p = argparse.ArgumentParser(prog="fgplab", description="Functionally generated portfolio toolkit.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
    p.add_argument("--out", default=".", help="output directory for report.json and CSVs")
    p.add_argument("--paths", type=int, help="override the number of simulated paths")
    p.add_argument("--quiet", action="store_true", help="suppress the summary line on stdout")
    return p


def _fail(kind, exc, code):
    err = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    for attr in ("field", "step", "path", "index"):
        if getattr(exc, attr, None) is not None:
            err[attr] = getattr(exc, attr)
    sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
    return code


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except OSError as exc:
            raise ValidationError(f"cannot read config: {exc}", field="config") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}", field="config") from exc
        if not isinstance(cfg, dict):
            raise ValidationError("config must be a JSON object", field="config")
        base = os.path.dirname(os.path.abspath(args.config))
        for key in ("input_csv", "variogram_csv", "factors_csv"):
            if isinstance(cfg.get(key), str) and not os.path.isabs(cfg[key]):
                cfg[key] = os.path.join(base, cfg[key])
        nm = cfg.get("numeraire")
        if isinstance(nm, dict) and isinstance(nm.get("path"), str) and not os.path.isabs(nm["path"]):
            nm["path"] = os.path.join(base, nm["path"])
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.paths is not None:
            cfg["paths"] = args.paths
        report = run(args.command, cfg, args.out)
    except ValidationError as exc:
        return _fail("validation", exc, 2)
    except NumericalError as exc:
        return _fail("numerical", exc, 3)
    except FGPLabError as exc:
        return _fail("error", exc, 3)
    if not args.quiet:
        print(f"{args.command}: wrote {os.path.join(args.out, 'report.json')}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
