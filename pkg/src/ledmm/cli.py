"""Command-line driver: ``gen``, ``build-led``, ``match``, ``eval`` and ``pipeline``.

All commands read one JSON config (``--config``, defaults built in) and write
into ``paths.out_dir``. File names inside that directory are fixed:

    network.txt       road network
    routes.csv        fixed routes
    bus.csv           fixed-route trajectories, bus_routes.csv ties them to routes
    trips.csv         vehicle trajectories, truth.csv their ground truth
    led.txt           LED model
    matches_<m>.csv   output of ``match --method m``
    report.csv        per (method, interval) summary, details.csv per trajectory
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import fields
from typing import Any, Dict, Optional, Sequence

from . import datagen, evalkit
from .ledmap import LedConfig, build_led, dump_led, grid_for_network, load_led
from .matcher import MatchFailure, MatchParams, write_matches
from .netgraph import NetworkFormatError, dump_network, load_network
from .nsp import NspParams
from .trajectory import (read_assignments, read_routes, read_trajectories, read_truth, write_assignments,
                         write_routes, write_trajectories, write_truth)

DEFAULTS: Dict[str, Any] = {
    "seed": 0,
    "paths": {"out_dir": "run"},
    "gen": {
        "cols": 10, "rows": 10, "spacing": 100.0,
        "regimes": [["gaussian", [0.0, 3.0]], ["gaussian", [0.0, 15.0]]],
        "n_routes": 20, "route_len": 1500.0, "bus_per_route": 10, "bus_interval_s": 5,
        "n_trips": 30, "trip_legs": 3, "trip_min_len": 1200.0, "trip_interval_s": 5, "trip_noise": True,
        "speed_mps": 10.0,
    },
    "led": {
        "cell_size": 100.0, "grid_margin": 50.0, "min_samples": 20, "fill_rounds": 2, "sigma": None, "K_g": 2,
        "fit_min_samples": 200, "ks_gate": 0.08, "radius_min": 15.0, "radius_max": 150.0,
    },
    "match": {
        "W_len": 600.0, "W_olen": 300.0, "k": 4, "q": 0.99, "max_candidates": 32, "escalation": 2.0,
        "repair": True,
        "nsp": {"n": 2, "err": 20.0, "max_err": 40.0, "len": 80.0, "deviation_gate": 0.05},
    },
    "eval": {"methods": list(evalkit.METHODS), "intervals": list(evalkit.DEFAULT_INTERVALS), "spt_radius": 100.0},
    "jobs": 1,
}

FILES = {
    "network": "network.txt", "routes": "routes.csv", "bus": "bus.csv", "bus_routes": "bus_routes.csv",
    "trips": "trips.csv", "truth": "truth.csv", "led": "led.txt", "report": "report.csv", "details": "details.csv",
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


class InputError(RuntimeError):
    """Missing or unreadable input file; the message names the file."""


# -- config ----------------------------------------------------------------------------

def _merge(base: Dict[str, Any], override: Dict[str, Any], where: str = "") -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for key, val in override.items():
        name = f"{where}{key}"
        if key not in base:
            raise ConfigError(f"{name}: unknown config key")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{name}: expected an object")
            out[key] = _merge(base[key], val, name + ".")
        else:
            out[key] = val
    return out


def load_config(path: Optional[str]) -> Dict[str, Any]:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        with open(path) as fh:
            user = json.load(fh)
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return _merge(DEFAULTS, user)


def _check(cond: bool, field_name: str, reason: str):
    if not cond:
        raise ConfigError(f"{field_name}: {reason}")


def validate(cfg: Dict[str, Any]) -> None:
    g = cfg["gen"]
    _check(isinstance(cfg["seed"], int) and cfg["seed"] >= 0, "seed", "must be a non-negative integer")
    _check(isinstance(cfg["jobs"], int) and cfg["jobs"] >= 1, "jobs", "must be an integer >= 1")
    for key in ("cols", "rows"):
        _check(isinstance(g[key], int) and g[key] >= 2, f"gen.{key}", "must be an integer >= 2")
    for key in ("n_routes", "bus_per_route", "n_trips", "trip_legs", "bus_interval_s", "trip_interval_s"):
        _check(isinstance(g[key], int) and g[key] >= 1, f"gen.{key}", "must be an integer >= 1")
    for key in ("spacing", "route_len", "trip_min_len", "speed_mps"):
        _check(g[key] > 0, f"gen.{key}", "must be positive")
    if g["regimes"] is not None:
        _check(len(g["regimes"]) == 2, "gen.regimes", "expected [west, east] or null")
        for i, r in enumerate(g["regimes"]):
            try:
                datagen.NoiseRegime(r[0], tuple(r[1]))
            except (ValueError, TypeError, IndexError) as exc:
                raise ConfigError(f"gen.regimes[{i}]: {exc}") from exc
    try:
        _match_params(cfg)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"match: {exc}") from exc
    led = cfg["led"]
    _check(led["cell_size"] > 0, "led.cell_size", "must be positive")
    _check(led["K_g"] is None or (isinstance(led["K_g"], int) and led["K_g"] >= 1), "led.K_g",
           "must be null or an integer >= 1")
    _check(0 < led["radius_min"] <= led["radius_max"], "led.radius_min", "need 0 < radius_min <= radius_max")
    ev = cfg["eval"]
    for m in ev["methods"]:
        _check(m in evalkit.METHODS, "eval.methods", f"unknown method {m!r}")
    _check(all(isinstance(i, int) and i >= 1 for i in ev["intervals"]), "eval.intervals",
           "must be integers >= 1")


def _match_params(cfg) -> MatchParams:
    m = dict(cfg["match"])
    nsp = NspParams(**m.pop("nsp"))
    return MatchParams(nsp=nsp, **m)


def _led_config(cfg) -> LedConfig:
    led = cfg["led"]
    names = {f.name for f in fields(LedConfig)}
    kw = {k: v for k, v in led.items() if k in names}
    return LedConfig(seed=cfg["seed"], **kw)


# -- file helpers -------------------------------------------------------------------------

def _path(cfg, key: str) -> str:
    return os.path.join(cfg["paths"]["out_dir"], FILES[key])


def _open_in(path: str):
    if not os.path.exists(path):
        raise InputError(f"{path}: missing input file")
    return open(path, newline="")


def _write(path: str, writer) -> None:
    with open(path, "w", newline="") as fh:
        writer(fh)


def _load_net(cfg):
    with _open_in(_path(cfg, "network")) as fh:
        return load_network(fh)


def _load_led(cfg):
    with _open_in(_path(cfg, "led")) as fh:
        return load_led(fh)


def _load_trips(cfg):
    with _open_in(_path(cfg, "trips")) as fh:
        trajs = read_trajectories(fh)
    if not trajs:
        raise InputError(f"{_path(cfg, 'trips')}: no trajectories")
    return trajs


# -- commands --------------------------------------------------------------------------------

def cmd_gen(cfg) -> int:
    g = cfg["gen"]
    os.makedirs(cfg["paths"]["out_dir"], exist_ok=True)
    regimes = None if g["regimes"] is None else tuple((r[0], tuple(r[1])) for r in g["regimes"])
    ds = datagen.make_dataset(
        seed=cfg["seed"], cols=g["cols"], rows=g["rows"], spacing=g["spacing"], regimes=regimes,
        n_routes=g["n_routes"], route_len=g["route_len"], bus_per_route=g["bus_per_route"],
        bus_interval_s=g["bus_interval_s"], n_trips=g["n_trips"], trip_legs=g["trip_legs"],
        trip_min_len=g["trip_min_len"], trip_interval_s=g["trip_interval_s"], trip_noise=g["trip_noise"],
        speed_mps=g["speed_mps"])
    _write(_path(cfg, "network"), lambda fh: dump_network(ds.net, fh))
    _write(_path(cfg, "routes"), lambda fh: write_routes(ds.routes, fh))
    _write(_path(cfg, "bus"), lambda fh: write_trajectories([t for _, t in ds.bus], fh))
    _write(_path(cfg, "bus_routes"), lambda fh: write_assignments([(t.id, rid) for rid, t in ds.bus], fh))
    tids = sorted(ds.trips)
    _write(_path(cfg, "trips"), lambda fh: write_trajectories([ds.trips[t][0] for t in tids], fh))
    _write(_path(cfg, "truth"), lambda fh: write_truth({t: ds.trips[t][1] for t in tids}, fh))
    print(f"network: {len(ds.net.nodes)} nodes, {len(ds.net.segments)} segments")
    print(f"routes: {len(ds.routes)} (cell coverage {getattr(ds.routes, 'coverage', float('nan')):.3f}),"
          f" bus trajectories: {len(ds.bus)}, trips: {len(ds.trips)}")
    return 0


def cmd_build_led(cfg) -> int:
    net = _load_net(cfg)
    with _open_in(_path(cfg, "routes")) as fh:
        routes = read_routes(fh)
    with _open_in(_path(cfg, "bus")) as fh:
        bus = read_trajectories(fh)
    with _open_in(_path(cfg, "bus_routes")) as fh:
        assign = read_assignments(fh)
    if not bus:
        raise InputError(f"{_path(cfg, 'bus')}: no trajectories")
    pairs = []
    for t in bus:
        if assign.get(t.id) not in routes:
            raise InputError(f"{_path(cfg, 'bus_routes')}: no known route for trajectory {t.id!r}")
        pairs.append((assign[t.id], t))
    grid = grid_for_network(net, cfg["led"]["cell_size"], cfg["led"]["grid_margin"])
    model = build_led(net, routes, pairs, grid, _led_config(cfg))
    _write(_path(cfg, "led"), lambda fh: dump_led(model, fh))
    print(f"sub-regions: {len(model.subregions)}")
    print("family,sub_regions")
    for fam, n in model.family_counts().items():
        print(f"{fam},{n}")
    return 0


def _match_path(cfg, method: str) -> str:
    return os.path.join(cfg["paths"]["out_dir"], f"matches_{method}.csv")


def cmd_match(cfg, method: str) -> int:
    net = _load_net(cfg)
    # the geometric ablation never consults the LED model
    led = None if method == "lnsp-nosed" else _load_led(cfg)
    trajs = _load_trips(cfg)
    out = evalkit.match_all(net, led, trajs, method, _match_params(cfg), cfg["jobs"], cfg["eval"]["spt_radius"])
    ok = [r for _, r, _ in out if not isinstance(r, MatchFailure)]
    failed = [(tid, str(r)) for tid, r, _ in out if isinstance(r, MatchFailure)]
    _write(_match_path(cfg, method), lambda fh: write_matches(ok, fh, failed))
    print(f"{method}: matched {len(ok)} of {len(out)} trajectories -> {_match_path(cfg, method)}")
    return 0


def cmd_eval(cfg) -> int:
    net = _load_net(cfg)
    led = _load_led(cfg)
    if led.grid.ref_lat != net.proj.ref_lat:
        raise InputError(f"{_path(cfg, 'led')}: LED model was built for a different network")
    trajs = _load_trips(cfg)
    lengths = {sid: s.l for sid, s in net.segments.items()}
    with _open_in(_path(cfg, "truth")) as fh:
        truth = read_truth(fh, lengths)
    missing = [t.id for t in trajs if t.id not in truth]
    if missing:
        raise InputError(f"{_path(cfg, 'truth')}: no ground truth for {missing[0]!r}")
    trips = {t.id: (t, truth[t.id]) for t in trajs}
    ev = cfg["eval"]
    report = evalkit.run_suite(net, led, trips, ev["methods"], ev["intervals"], _match_params(cfg),
                               cfg["seed"], cfg["jobs"], ev["spt_radius"])
    _write(_path(cfg, "report"), report.write)
    _write(_path(cfg, "details"), report.write_details)
    print(f"{'method':<12} {'interval_s':>10} {'acc':>8} {'prc':>8} {'mt_ms':>10} {'ok':>4} {'fail':>4}")
    for r in report.rows:
        print(f"{r.method:<12} {r.interval_s:>10} {r.acc:>8.4f} {r.prc:>8.4f} {r.mt_ms:>10.1f} "
              f"{r.n_ok:>4} {r.n_fail:>4}")
    return 0


def cmd_pipeline(cfg) -> int:
    cmd_gen(cfg)
    cmd_build_led(cfg)
    cmd_match(cfg, "lnsp")
    return cmd_eval(cfg)


# -- argument parsing ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; missing keys take built-in defaults")
    common.add_argument("--seed", type=int, help="master seed (overrides config 'seed')")
    common.add_argument("--out", help="output directory (overrides config 'paths.out_dir')")
    common.add_argument("--jobs", type=int, help="worker processes for match/eval (overrides config 'jobs')")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="ledmm", description="Region-aware map matching of GPS trajectories.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate a synthetic city, routes and trajectories")
    sub.add_parser("build-led", parents=[common], help="build the LED model from fixed-route trajectories")
    m = sub.add_parser("match", parents=[common], help="match the trip trajectories")
    m.add_argument("--method", choices=evalkit.METHODS, default="lnsp", help="matching method (default lnsp)")
    e = sub.add_parser("eval", parents=[common], help="evaluate all methods across sampling intervals")
    e.add_argument("--methods", help="comma-separated methods (overrides config 'eval.methods')")
    e.add_argument("--intervals", help="comma-separated intervals in s (overrides config 'eval.intervals')")
    pl = sub.add_parser("pipeline", parents=[common], help="gen, build-led, match and eval in order")
    pl.add_argument("--methods", help="comma-separated methods (overrides config 'eval.methods')")
    pl.add_argument("--intervals", help="comma-separated intervals in s (overrides config 'eval.intervals')")
    return p


def _apply_flags(cfg, args) -> None:
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["paths"]["out_dir"] = args.out
    if args.jobs is not None:
        cfg["jobs"] = args.jobs
    if getattr(args, "methods", None):
        cfg["eval"]["methods"] = [s.strip() for s in args.methods.split(",") if s.strip()]
    if getattr(args, "intervals", None):
        try:
            cfg["eval"]["intervals"] = [int(s) for s in args.intervals.split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"eval.intervals: {exc}") from exc


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        _apply_flags(cfg, args)
        validate(cfg)
        if args.command == "gen":
            return cmd_gen(cfg)
        if args.command == "build-led":
            return cmd_build_led(cfg)
        if args.command == "match":
            return cmd_match(cfg, args.method)
        if args.command == "eval":
            return cmd_eval(cfg)
        return cmd_pipeline(cfg)
    except (ConfigError, InputError, NetworkFormatError) as exc:
        print(f"ledmm {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
