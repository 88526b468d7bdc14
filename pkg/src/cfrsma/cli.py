"""Command line entry points.

Subcommands:
    run        one experiment; writes metrics.csv, summary.json, assoc.csv
               and a learning-curve figure into the output directory.
    sweep      a grid over one config field x modes x seeds; writes a
               long-format sweep.csv plus a trend figure.
    selftest   built-in verification suite with named pass/fail lines.
    ap-select  solve one association instance from a JSON dump.
    estimate   residual check of the least-squares channel estimator.

The output directory resolves as --out-dir, then $CFRSMA_OUT_DIR, then
./cfrsma-out.  Exit codes: 0 success, 1 failed checks or infeasible
instances, 2 bad configuration or usage.
"""

from __future__ import annotations

import argparse
import copy
import json
import multiprocessing
import os
import sys
import time

import numpy as np

from . import ap_selection, config, federation, pipeline, report, selftest

DEFAULT_OUT_DIR = "cfrsma-out"


def resolve_out_dir(arg: str | None) -> str:
    if arg:
        return arg
    return os.environ.get("CFRSMA_OUT_DIR", DEFAULT_OUT_DIR)


def load_config_data(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise config.ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise config.ConfigError("config root must be an object")
    return data


def apply_overrides(data: dict, args) -> dict:
    data = copy.deepcopy(data)
    if getattr(args, "mode", None):
        data["mode"] = args.mode
    if getattr(args, "seed", None) is not None:
        data["seed"] = args.seed
    if getattr(args, "deterministic", False):
        data["deterministic"] = True
    return data


def set_dotted(data: dict, path: str, value) -> None:
    parts = path.split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise config.ConfigError(f"config field {path} is not nested")
    node[parts[-1]] = value


# --------------------------------------------------------------------- run ----

def cmd_run(args) -> int:
    cfg = config.from_dict(apply_overrides(load_config_data(args.config), args))
    out_dir = resolve_out_dir(args.out_dir)
    run_report = pipeline.run(cfg)
    paths = report.write_run_outputs(out_dir, run_report)
    for name in ("metrics", "summary", "assoc", "figure"):
        print(f"wrote {paths[name]}")
    final = report.final_min_rate(run_report, "finetune",
                                  window=min(10, cfg.training.episodes))
    print(f"done mode={cfg.mode} seed={cfg.seed} "
          f"final_min_rate={report.fmt(final)} "
          f"wall_clock_s={run_report.wall_clock_s:.1f}")
    return 0


# ------------------------------------------------------------------- sweep ----

def _parse_values(text: str) -> list:
    vals = []
    for token in text.split(","):
        token = token.strip()
        try:
            vals.append(json.loads(token))
        except json.JSONDecodeError:
            raise config.ConfigError(f"sweep value {token!r} is not a number")
    return vals


def _run_cell(cell: dict) -> dict:
    """One sweep cell; runs in a worker process, so errors become status."""
    out = dict(cell, status="ok", pretrain=None, finetune=None)
    try:
        cfg = config.from_dict(cell["data"])
        rep = pipeline.run(cfg)
        w = min(10, cfg.training.episodes)
        out["pretrain"] = report.final_min_rate(rep, "pretrain", window=w)
        out["finetune"] = report.final_min_rate(rep, "finetune", window=w)
    except Exception as exc:  # cell failures must not kill the sweep
        out["status"] = f"error:{type(exc).__name__}"
    return out


def cmd_sweep(args) -> int:
    base = apply_overrides(load_config_data(args.config), args)
    values = _parse_values(args.values)
    modes = [m.strip() for m in args.modes.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    cells = []
    for value in values:
        for mode in modes:
            for seed in seeds:
                data = copy.deepcopy(base)
                set_dotted(data, args.param, value)
                data["mode"] = mode
                data["seed"] = seed
                config.from_dict(data)  # fail fast before spawning workers
                cells.append({"param": args.param, "value": value,
                              "mode": mode, "seed": seed, "data": data})
    deterministic = bool(base.get("deterministic", True))
    workers = 1 if deterministic else max(1, args.workers)
    t0 = time.perf_counter()
    if workers > 1:
        with multiprocessing.Pool(workers) as pool:
            results = pool.map(_run_cell, cells)
    else:
        results = [_run_cell(c) for c in cells]
    out_dir = resolve_out_dir(args.out_dir)
    os.makedirs(out_dir, exist_ok=True)
    rows = [report.sweep_row(r["param"], r["value"], r["mode"], r["seed"],
                             r["status"], r["pretrain"], r["finetune"])
            for r in results]
    csv_path = os.path.join(out_dir, "sweep.csv")
    png_path = os.path.join(out_dir, "sweep.png")
    report.write_sweep_csv(csv_path, rows)
    report.write_sweep_png(png_path, args.param, results)
    print(f"wrote {csv_path}")
    print(f"wrote {png_path}")
    failed = sum(1 for r in results if r["status"] != "ok")
    print(f"done cells={len(results)} failed={failed} "
          f"wall_clock_s={time.perf_counter() - t0:.1f}")
    return 1 if failed else 0


# ---------------------------------------------------------------- selftest ----

def cmd_selftest(args) -> int:
    t0 = time.perf_counter()
    try:
        results = selftest.run_all(inject_fault=args.inject_fault)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    n_fail = sum(1 for _, ok, _ in results if not ok)
    print(f"{len(results) - n_fail}/{len(results)} checks passed "
          f"in {time.perf_counter() - t0:.1f}s")
    return 1 if n_fail else 0


# ---------------------------------------------------------------- ap-select ----

def cmd_ap_select(args) -> int:
    with open(args.instance, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    try:
        inst = ap_selection.SelectionInstance(
            lam=np.asarray(data["lam"], dtype=float),
            private_power=np.asarray(data["private_power"], dtype=float),
            common_power=np.asarray(data["common_power"], dtype=float),
            p_max=float(data["p_max"]),
            n_ue_max=int(data["n_ue_max"]))
    except KeyError as exc:
        raise config.ConfigError(f"instance file is missing field {exc}") from exc
    try:
        g = ap_selection.solve_p3(inst)
    except ap_selection.InfeasibleSelection as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 1
    lines = [report.ASSOC_HEADER]
    for k in range(g.shape[0]):
        for n in range(g.shape[1]):
            lines.append(f"{k},{n},{int(g[k, n])}")
    text = "\n".join(lines) + "\n"
    if args.out:
        report.write_text_atomic(args.out, text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    print(f"objective={report.fmt(ap_selection.selection_objective(inst, g))}")
    return 0


# ----------------------------------------------------------------- estimate ----

def cmd_estimate(args) -> int:
    rng = np.random.default_rng(args.seed)
    m, mp, k = args.m_ap, args.m_ue, args.n_ue
    P = rng.standard_normal((m, mp)) + 1j * rng.standard_normal((m, mp))
    H = rng.standard_normal((m, k)) + 1j * rng.standard_normal((m, k))
    Y = H.conj().T @ P
    est = federation.estimate_channel(Y, P)
    proj = P @ np.linalg.pinv(P.conj().T @ P) @ P.conj().T
    residual = float(np.abs(est - proj @ H).max() / np.abs(H).max())
    recovered = mp >= m
    print(f"estimator residual against the projector form: {residual:.3e}")
    print(f"pilot rank {min(m, mp)} of {m} "
          f"({'full recovery' if recovered else 'subspace recovery'})")
    ok = residual <= 1e-10
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


# ------------------------------------------------------------------ parser ----

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfrsma",
        description="Cell-free rate-splitting downlink: training and analysis.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", help="JSON config file")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--mode", choices=config.MODES, help="override the mode")
    run.add_argument("--deterministic", action="store_true",
                     help="force deterministic single-worker execution")
    run.add_argument("--out-dir", help="output directory")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="grid over one config field")
    sweep.add_argument("--config", help="JSON base config file")
    sweep.add_argument("--param", required=True,
                       help="dotted config field, e.g. network.p_max_dbm")
    sweep.add_argument("--values", required=True,
                       help="comma-separated numeric values")
    sweep.add_argument("--modes", default="fdrl-rsma",
                       help="comma-separated mode list")
    sweep.add_argument("--seeds", default="1", help="comma-separated seed list")
    sweep.add_argument("--workers", type=int, default=1,
                       help="worker processes (deterministic mode forces 1)")
    sweep.add_argument("--deterministic", action="store_true",
                       help="force deterministic single-worker execution")
    sweep.add_argument("--out-dir", help="output directory")
    sweep.set_defaults(func=cmd_sweep)

    st = sub.add_parser("selftest", help="built-in verification suite")
    st.add_argument("--inject-fault", help=argparse.SUPPRESS)
    st.set_defaults(func=cmd_selftest, inject_fault=None)

    sel = sub.add_parser("ap-select", help="solve one association instance")
    sel.add_argument("--instance", required=True,
                     help="JSON file with lam, private_power, common_power, "
                          "p_max, n_ue_max")
    sel.add_argument("--out", help="write the association here instead of stdout")
    sel.set_defaults(func=cmd_ap_select)

    est = sub.add_parser("estimate", help="channel estimator residual check")
    est.add_argument("--seed", type=int, default=0)
    est.add_argument("--n-ue", type=int, default=4)
    est.add_argument("--m-ap", type=int, default=4)
    est.add_argument("--m-ue", type=int, default=2)
    est.set_defaults(func=cmd_estimate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except config.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
