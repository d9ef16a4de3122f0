"""Command-line entry point: ``sigpath simulate|fit|infer|eval|pipeline``.

Settings come from an optional YAML config (``--config``) overridden by
flags. Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 I/O.

Config schema (all keys optional)::

    seed: 1
    out: results/
    network: figure1            # or a path
    design: table1              # or a path
    model: hm
    simulate:   {cells: 600, regime: constant, sigma_m: 0.1, pool_size: 10000}
    hyperparameters: {beta1: 1, beta2: 1, v: 0.1, tau: 1000, ...}
    sampler:    {iterations: 200000, burn_in: 20000, thin: 10, chains: 5, workers: 1,
                 fix_sigma_m: null, standardize: false, varying_intrinsic_variance: false}
    thresholds: {u1: 0.4, u1_prime: 0.4, u2: 0.1, u3: 0.3, u_f: 0.8}
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io as sio
from .errors import NumericalError, ValidationError
from .evaluation import as_graph, classify_edges
from .inference import Thresholds, decisions_table, detect_jump, infer_network, streams_table, to_dot
from .model import Hyperparameters
from .sampler import SamplerConfig, run_chains, summarize
from .simulate import SimConfig, simulate_study

log = logging.getLogger("sigpath")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3

DEFAULTS = {
    "seed": 0,
    "network": "figure1",
    "design": "table1",
    "model": "hm",
    "simulate": {"cells": 600, "regime": "constant", "sigma_m": 0.1, "pool_size": 10_000},
    "hyperparameters": {},
    "sampler": {"iterations": 200_000, "burn_in": 20_000, "thin": 10, "chains": 5, "workers": 1,
                "fix_sigma_m": None, "standardize": False, "varying_intrinsic_variance": False},
    "thresholds": {"u1": 0.4, "u1_prime": 0.4, "u2": 0.1, "u3": 0.3, "u_f": 0.8},
}
_SHIPPED = {"figure1": "figure1_network.txt", "table1": "table1_design.txt"}
_SECTIONS = ("simulate", "hyperparameters", "sampler", "thresholds")


def _resolve_input(ref) -> Path:
    return sio.shipped(_SHIPPED[ref]) if ref in _SHIPPED else Path(ref)


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _settings(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if getattr(args, "config", None):
        doc = sio.load_config(args.config)
        unknown = set(doc) - set(DEFAULTS) - {"out", "reference"}
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        cfg = _merge(cfg, doc)
    flag_map = {
        "seed": ("seed",), "model": ("model",), "network": ("network",), "design": ("design",),
        "out": ("out",), "cells": ("simulate", "cells"), "regime": ("simulate", "regime"),
        "sigma_m": ("simulate", "sigma_m"), "pool_size": ("simulate", "pool_size"),
        "v": ("hyperparameters", "v"), "beta1": ("hyperparameters", "beta1"),
        "beta2": ("hyperparameters", "beta2"), "iters": ("sampler", "iterations"),
        "burn": ("sampler", "burn_in"), "thin": ("sampler", "thin"), "chains": ("sampler", "chains"),
        "workers": ("sampler", "workers"), "fix_sigma_m": ("sampler", "fix_sigma_m"),
        "standardize": ("sampler", "standardize"),
        "varying_variance": ("sampler", "varying_intrinsic_variance"),
        "u1": ("thresholds", "u1"), "u1_prime": ("thresholds", "u1_prime"), "u2": ("thresholds", "u2"),
        "u3": ("thresholds", "u3"), "uf": ("thresholds", "u_f"),
    }
    for flag, path in flag_map.items():
        val = getattr(args, flag, None)
        if val is None or val is False:
            continue
        node = cfg
        for key in path[:-1]:
            node = node[key]
        node[path[-1]] = val
    for sec in _SECTIONS:
        if not isinstance(cfg.get(sec), dict):
            raise ValidationError(f"config section {sec!r} must be a mapping")
    return cfg


def _hp(cfg) -> Hyperparameters:
    try:
        return Hyperparameters(**cfg["hyperparameters"])
    except TypeError as exc:
        raise ValidationError(f"hyperparameters: {exc}") from None


def _sampler_config(cfg, seed) -> tuple:
    s = dict(cfg["sampler"])
    workers = int(s.pop("workers", 1))
    s["n_chains"] = s.pop("chains")
    try:
        return SamplerConfig(seed=seed, **s), workers
    except TypeError as exc:
        raise ValidationError(f"sampler: {exc}") from None


def _thresholds(cfg) -> Thresholds:
    try:
        return Thresholds(**{k: float(v) for k, v in cfg["thresholds"].items()})
    except TypeError as exc:
        raise ValidationError(f"thresholds: {exc}") from None


def _sim_config(cfg, seed) -> SimConfig:
    s = cfg["simulate"]
    extra = set(s) - {"cells", "regime", "sigma_m", "pool_size", "low_quantile", "high_quantile"}
    if extra:
        raise ValidationError(f"simulate: unknown keys {sorted(extra)}")
    return SimConfig(cells_per_condition=int(s["cells"]), regime=s["regime"], sigma_m=float(s["sigma_m"]),
                     pool_size=int(s["pool_size"]), low_quantile=float(s.get("low_quantile", 0.05)),
                     high_quantile=float(s.get("high_quantile", 0.95)), seed=seed)


def _provenance(cfg, stage, inputs) -> dict:
    """Settings that determine the stage's outputs, plus input digests and their hash."""
    # input files enter through their digests, output location not at all
    settings = {k: v for k, v in cfg.items() if k not in ("out", "network", "design", "reference")}
    record = {"stage": stage, "settings": settings,
              "inputs": {name: sio.file_digest(p) for name, p in sorted(inputs.items())},
              "version": __version__}
    return {"config_hash": sio.config_hash(record), "seed": cfg["seed"], **record}


def _write_manifest(out: Path, prov):
    sio._write_text(out / f"{prov['stage']}_manifest.json",
                    json.dumps(sio._jsonable(prov), sort_keys=True, indent=1) + "\n")


def _stage_seed(master, stage) -> int:
    tag = {"simulate": 0, "fit": 1}[stage]
    return int(np.random.SeedSequence(int(master), spawn_key=(tag,)).generate_state(1, dtype=np.uint64)[0])


# ------------------------------------------------------------------- stages

def do_simulate(cfg, out: Path, seed=None):
    from .io import load_network, read_design, write_dataset, write_network
    from .model import ProteinPanel

    seed = cfg["seed"] if seed is None else seed
    net_path, design_path = _resolve_input(cfg["network"]), _resolve_input(cfg["design"])
    net = load_network(net_path, seed=seed)
    design = read_design(design_path, ProteinPanel(net.names))
    sim = _sim_config(cfg, seed)
    study = simulate_study(net, design, sim)
    write_dataset(study.dataset, out / "data.csv")
    write_network(study.network, out / "network.txt")
    np.savetxt(out / "intrinsic_sd.txt", study.network.intrinsic_sd)
    prov = _provenance(cfg, "simulate", {"network": net_path, "design": design_path})
    _write_manifest(out, prov)
    log.info("simulate: wrote %d conditions x %d cells to %s", design.size, sim.cells_per_condition, out)
    return study


def do_fit(cfg, data_path, design_path, out: Path, seed=None, dump_traces=False):
    seed = cfg["seed"] if seed is None else seed
    data = sio.load_dataset(data_path, design_path)
    hp = _hp(cfg)
    config, workers = _sampler_config(cfg, seed)
    model = cfg["model"]
    traces = run_chains(data, hp, config, model, workers=workers)
    summary = summarize(traces)
    dpath = Path(design_path) if design_path else sio.sidecar_path(data_path)
    prov = _provenance(cfg, "fit", {"data": data_path, "design": dpath})
    summary.meta = {"config_hash": prov["config_hash"], "seed": seed,
                    "chain_seeds": [t.seed for t in traces], "model": model,
                    "hyperparameters": hp.as_dict()}
    sio.save_summary(summary, out / "summary.json")
    sio.write_design(data.design, data.panel, out / "design.txt")
    sio.emit_sorted_w(summary, out / "sorted_w.csv")
    if dump_traces:
        for c, t in enumerate(traces):
            sio.write_trace_csv(t, out / "traces" / f"chain{c}.csv")
    _write_manifest(out, prov)
    log.info("fit: %d chains x %d retained draws -> %s", len(traces), config.n_retained, out)
    return summary


def do_infer(cfg, summary_dir: Path, out: Path, design_path=None, suggest=False, use_suggested=False):
    from .model import ProteinPanel

    summary = sio.load_summary(summary_dir / "summary.json")
    dpath = Path(design_path) if design_path else summary_dir / "design.txt"
    design = sio.read_design(dpath, ProteinPanel(summary.names))
    th = _thresholds(cfg)
    if suggest or use_suggested:
        jump = detect_jump([w for _, _, w in summary.pair_scores()])
        flag = " (low confidence)" if jump.low_confidence else ""
        print(f"suggested u1: {jump.threshold:.4f} gap={jump.gap:.4f} ratio={jump.gap_ratio:.2f}{flag}")
        if use_suggested:
            key = "u1_prime" if summary.model == "rhm" else "u1"
            th = Thresholds(**{**th.__dict__, key: jump.threshold})
            cfg = _merge(cfg, {"thresholds": {key: jump.threshold}})
    net = infer_network(summary, design, th)
    prov = _provenance(cfg, "infer", {"summary": summary_dir / "summary.json", "design": dpath})
    sio._write_text(out / "decisions.csv", decisions_table(net))
    sio._write_text(out / "streams.csv", streams_table(net, summary.labels))
    sio._write_text(out / "network.dot", to_dot(net))
    sio.write_partial_graph(as_graph(net), out / "inferred_network.txt")
    sio.emit_sorted_w(summary, out / "sorted_w.csv")
    _write_manifest(out, prov)
    log.info("infer: %d associations, %d directed", len(net.calls), len(net.directed_edges()))
    return net


def do_eval(inferred_path, reference_path, out=None):
    ref_names, _, _ = sio.read_network(reference_path)
    ref = sio.read_partial_graph(reference_path)
    inferred = sio.read_partial_graph(inferred_path, names=ref_names)
    report = classify_edges(inferred, ref)
    text = report.table(Path(inferred_path).stem)
    print(text, end="")
    if out is not None:
        sio._write_text(out, text)
        sio._write_text(Path(out).with_suffix(".edges.csv"), report.ledger_table())
    return report


def do_pipeline(cfg, out: Path, dump_traces=False):
    master = int(cfg["seed"])
    sim_dir, fit_dir = out / "simulate", out / "fit"
    do_simulate(cfg, sim_dir, seed=_stage_seed(master, "simulate"))
    do_fit(cfg, sim_dir / "data.csv", None, fit_dir, seed=_stage_seed(master, "fit"), dump_traces=dump_traces)
    do_infer(cfg, fit_dir, fit_dir)
    reference = cfg.get("reference") or sim_dir / "network.txt"
    return do_eval(fit_dir / "decisions.csv", _resolve_input(str(reference)), out=fit_dir / "evaluation.txt")


# --------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sigpath", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"sigpath {__version__}")
    verbose = argparse.ArgumentParser(add_help=False)
    verbose.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML config; flags override it")
        sp.add_argument("--seed", type=int)

    s = sub.add_parser("simulate", parents=[verbose], help="network + design -> dataset")
    common(s)
    s.add_argument("--network", required=True)
    s.add_argument("--design", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--cells", type=int)
    s.add_argument("--regime", choices=["constant", "variable", "heavy", "heavy_tail",
                                        "variable_heavy", "variable_heavy_tail"])
    s.add_argument("--sigma-m", dest="sigma_m", type=float)
    s.add_argument("--pool-size", dest="pool_size", type=int)

    f = sub.add_parser("fit", parents=[verbose], help="dataset -> per-chain and pooled posterior summaries")
    common(f)
    f.add_argument("--data", required=True)
    f.add_argument("--design", help="design sidecar (default <data stem>.design.txt)")
    f.add_argument("--model", choices=["hm", "rhm", "nhm"])
    f.add_argument("--out", help="output directory (default: next to the data)")
    f.add_argument("--v", type=float)
    f.add_argument("--beta1", type=float)
    f.add_argument("--beta2", type=float)
    f.add_argument("--iters", type=int)
    f.add_argument("--burn", type=int)
    f.add_argument("--thin", type=int)
    f.add_argument("--chains", type=int)
    f.add_argument("--workers", type=int, help="processes for running chains")
    f.add_argument("--fix-sigma-m", dest="fix_sigma_m", type=float)
    f.add_argument("--standardize", action="store_true")
    f.add_argument("--varying-variance", dest="varying_variance", action="store_true",
                   help="one intrinsic variance per protein and condition")
    f.add_argument("--dump-traces", action="store_true")

    i = sub.add_parser("infer", parents=[verbose], help="summaries -> network, decisions and plot data")
    common(i)
    i.add_argument("--summaries", required=True, help="directory written by fit")
    i.add_argument("--design", help="design file (default: the copy saved by fit)")
    i.add_argument("--out", help="output directory (default: the summaries directory)")
    for name in ("u1", "u2", "u3", "uf"):
        i.add_argument(f"--{name}", type=float)
    i.add_argument("--u1-prime", dest="u1_prime", type=float)
    i.add_argument("--suggest-u1", action="store_true", help="print the jump-based u1 suggestion")
    i.add_argument("--use-suggested-u1", action="store_true", help="apply the suggestion instead of --u1")

    e = sub.add_parser("eval", parents=[verbose], help="score a network against a reference")
    e.add_argument("--inferred", required=True)
    e.add_argument("--reference", required=True)
    e.add_argument("--out")

    pl = sub.add_parser("pipeline", parents=[verbose], help="simulate, fit, infer and eval in one go")
    pl.add_argument("--config", required=True)
    pl.add_argument("--seed", type=int)
    pl.add_argument("--out")
    pl.add_argument("--iters", type=int)
    pl.add_argument("--chains", type=int)
    pl.add_argument("--workers", type=int)
    pl.add_argument("--dump-traces", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
    log.handlers[:] = [handler]  # replace, so repeated in-process calls do not stack
    log.propagate = False
    log.setLevel(logging.INFO if args.verbose else logging.WARNING)
    stage = args.command
    try:
        if stage == "eval":
            do_eval(args.inferred, args.reference, args.out)
            return EXIT_OK
        cfg = _settings(args)
        if stage == "simulate":
            do_simulate(cfg, Path(cfg["out"]))
        elif stage == "fit":
            out = Path(cfg.get("out") or Path(args.data).parent / "fit")
            do_fit(cfg, args.data, args.design, out, dump_traces=args.dump_traces)
        elif stage == "infer":
            src = Path(args.summaries)
            do_infer(cfg, src, Path(cfg.get("out") or src), args.design, args.suggest_u1, args.use_suggested_u1)
        elif stage == "pipeline":
            if not cfg.get("out"):
                raise ValidationError("pipeline needs an output directory (config 'out' or --out)")
            do_pipeline(cfg, Path(cfg["out"]), dump_traces=args.dump_traces)
    except ValidationError as exc:
        print(f"sigpath {stage}: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"sigpath {stage}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"sigpath {stage}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
