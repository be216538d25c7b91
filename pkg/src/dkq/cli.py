"""Command-line entry point: ``dkq simulate | lqu | meanfield | exact | mcp | scan``.

Every flag can also be given in a key-value config file (``--config``) with
one section per subcommand, e.g.::

    [simulate]
    n = 256
    x-grid = 0.6:0.8:0.01
    traj = 500

Flags on the command line override the file.

Exit codes: 0 ok, 2 config error, 3 capacity error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import meanfield as mf
from .automaton import (GateParams, GeneralGateParams, InitialCondition, Interrupted,
                        TrajectorySpec, run_ensemble)
from .exact import CapacityError, ProbVector, evolve, exact_reduced_state
from .lattice import ConfigError, LatticeConfig
from .observables import EnsembleStats, finalize
from .qcorr import lqu_profile
from .records import (SCHEMA_VERSION, config_digest, dumps_record, load_checkpoint, make_record,
                      matrix_to_pairs, save_checkpoint, write_csv)

EXIT_OK, EXIT_CONFIG, EXIT_CAPACITY, EXIT_IO, EXIT_INTERRUPTED = 0, 2, 3, 4, 130


# -- parsing helpers --

def parse_grid(text: str) -> list[float]:
    """``lo:hi:step`` (inclusive) or a comma-separated list."""
    if ":" in text:
        try:
            lo, hi, step = (float(v) for v in text.split(":"))
        except ValueError:
            raise ConfigError(f"bad grid {text!r}, expected lo:hi:step")
        if step <= 0 or hi < lo:
            raise ConfigError(f"bad grid {text!r}")
        count = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return [round(lo + i * step, 12) for i in range(count)]
    return [float(v) for v in text.split(",") if v.strip()]


def parse_xk(text: str, K: int | None) -> tuple:
    """``0,0.5,1`` or ``k=v,...`` (unlisted k default to 0, K from --k)."""
    items = [s.strip() for s in text.split(",") if s.strip()]
    if items and all("=" in s for s in items):
        pairs = {int(k): float(v) for k, v in (s.split("=") for s in items)}
        K = max(pairs) if K is None else K
        if max(pairs) > K:
            raise ConfigError(f"x_{max(pairs)} given but K={K}")
        xs = [0.0] * (K + 1)
        for k, v in pairs.items():
            xs[k] = v
    else:
        xs = [float(s) for s in items]
    if K is not None and len(xs) != K + 1:
        raise ConfigError(f"--xk lists {len(xs)} values but K={K} needs {K + 1}")
    return tuple(xs)


def _bool(v):
    return str(v).strip().lower() in ("1", "true", "yes", "on")


# -- subcommand implementations --

def gate_points(args) -> list[tuple[object, dict, float | None]]:
    """[(gate, record fields, swept value)] for the requested parameter points."""
    if args.xk:
        base = parse_xk(args.xk, args.k)
        if args.x_grid and args.x_index:
            idx = [int(i) for i in str(args.x_index).split(",")]
            out = []
            for v in parse_grid(args.x_grid):
                xs = list(base)
                for i in idx:
                    xs[i] = v
                g = GeneralGateParams(tuple(xs))
                out.append((g, {"x_k": list(g.xs), "x": v}, v))
            return out
        g = GeneralGateParams(base)
        return [(g, {"x_k": list(g.xs)}, None)]
    if args.k not in (None, 2):
        raise ConfigError("--k other than 2 needs --xk")
    if args.x_grid:
        xs = parse_grid(args.x_grid)
    elif args.x is not None:
        xs = parse_grid(str(args.x))
    else:
        raise ConfigError("one of --x, --x-grid or --xk is required")
    return [(GateParams(v), {"x": v}, v) for v in xs]


def sim_config(args, points) -> dict:
    init = InitialCondition.parse(args.init)
    cfg = {
        "command": args.command, "n": args.n, "steps": args.steps, "traj": args.traj,
        "seed": args.seed, "init": str(init), "meas_window": args.meas_window,
        "points": [list(g.xs) if isinstance(g, GeneralGateParams) else [g.x] for g, _, _ in points],
    }
    if args.command == "lqu":
        cfg["estimator"] = args.estimator
        cfg["d_max"] = args.d_max
    return cfg


def run_points(args, stop_after: int | None = None) -> list[dict]:
    """Run the ensemble for every parameter point; handles checkpoint/resume."""
    points = gate_points(args)
    config = sim_config(args, points)
    digest = config_digest(config)
    init = InitialCondition.parse(args.init)
    lattice = LatticeConfig(args.n)
    out_dir = Path(args.out) if args.out else None
    ckpt_path = Path(args.checkpoint) if args.checkpoint else (
        out_dir / "checkpoint.json" if out_dir and args.checkpoint_every else None)

    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    completed, current = [], None
    if args.resume:
        state = load_checkpoint(args.resume)
        if state["config_digest"] != digest:
            raise ConfigError("checkpoint was written for a different configuration")
        completed, current = state["completed"], state["current"]
        ckpt_path = ckpt_path or Path(args.resume)

    def save(recs, cur):
        if ckpt_path is not None:
            save_checkpoint(ckpt_path, {"schema_version": SCHEMA_VERSION, "config_digest": digest,
                                        "config": config, "completed": recs, "current": cur})

    records = list(completed)
    for i, (gate, fields, _) in enumerate(points):
        if i < len(records):
            continue
        spec = TrajectorySpec(lattice, gate, args.steps, init, args.seed, args.meas_window)
        start = None
        if current is not None and current["index"] == i:
            start = EnsembleStats.from_dict(current["stats"])
        local_stop = None
        if stop_after is not None:
            # counted over all points of the sweep
            local_stop = max(1, stop_after - i * args.traj)
        t0 = time.perf_counter()
        stats = run_ensemble(
            spec, args.traj, args.workers, start=start,
            checkpoint_every=args.checkpoint_every if ckpt_path else 0,
            on_checkpoint=lambda s, i=i: save(records, {"index": i, "stats": s.to_dict()}),
            stop_after=local_stop,
        )
        obs = finalize(stats)
        prof = None
        if args.command == "lqu":
            if not isinstance(gate, GateParams):
                raise ConfigError("lqu needs the two-site gate (--x or --x-grid)")
            dmax = args.d_max if args.d_max else args.n // 2
            prof = lqu_profile(obs, gate.x, range(1, dmax + 1), args.estimator)
        wall = round(time.perf_counter() - t0, 3) if args.timing else None
        records.append(make_record(config, fields, obs, prof, wall))
        save(records, None)
    if out_dir:
        write_outputs(out_dir, config, points, records)
    else:
        for rec in records:
            print(dumps_record(rec))
    return records


def write_outputs(out_dir: Path, config: dict, points, records):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "run_meta.json", "w") as fh:
        json.dump({"schema_version": SCHEMA_VERSION, "config": config,
                   "config_digest": config_digest(config)}, fh, sort_keys=True, indent=1)
        fh.write("\n")
    with open(out_dir / "records.jsonl", "w") as fh:
        for rec in records:
            fh.write(dumps_record(rec) + "\n")
    labels = [_label(rec, i) for i, rec in enumerate(records)]
    write_csv(out_dir / "summary.csv",
              ["x", "N", "steps", "n_traj", "density", "density_err", "var_ratio", "absorbed_fraction"],
              [[lab, r["N"], r["steps"], r["n_traj"], r["density"], r["density_err"], r["var_ratio"],
                r["absorbed_fraction"]] for lab, r in zip(labels, records)])
    write_csv(out_dir / "correlations.csv", ["x", "d", "c2", "connected"],
              [[lab, d, c2, conn] for lab, r in zip(labels, records) for d, c2, conn in r["correlations"]])
    steps = records[0]["steps"]
    write_csv(out_dir / "density_t.csv", ["t"] + [f"x={lab}" for lab in labels],
              [[t] + [r["density_t"][t] for r in records] for t in range(steps + 1)])
    if config["command"] == "lqu":
        rows = []
        for lab, r in zip(labels, records):
            for d, v in r["lqu"]:
                logv = "" if v is None or v <= 0 else math.log(v)
                rows.append([lab, d, "" if v is None else v, logv])
        write_csv(out_dir / "lqu.csv", ["x", "d", "lqu", "log_lqu"], rows)
        ds = [d for d, _ in records[0]["lqu"]]
        write_csv(out_dir / "lqu_heatmap.csv", ["x"] + [f"d={d}" for d in ds],
                  [[lab] + ["" if v is None else v for _, v in r["lqu"]] for lab, r in zip(labels, records)])


def _label(rec, i):
    return rec["x"] if "x" in rec else i


def cmd_simulate(args) -> int:
    run_points(args, stop_after=args.stop_after)
    return EXIT_OK


def cmd_meanfield(args) -> int:
    if args.xk:
        gate = GeneralGateParams(parse_xk(args.xk, args.k))
        two_site = None
    else:
        if args.x is None:
            raise ConfigError("meanfield needs --x or --xk")
        two_site = float(args.x)
        gate = GateParams(two_site)
    t = np.arange(args.steps + 1)
    header, cols = ["t", "nu_iter"], [t, mf.trajectory(gate, args.steps, args.nu0)]
    if two_site is not None and args.nu0 == 1.0:
        header += ["nu_closed", "nu_flow"]
        cols += [mf.mf_closed_form(t, two_site), mf.mf_flow(two_site, t)]
    rows = list(zip(*[c.tolist() for c in cols]))
    label, fps, stat = mf.classify(gate)
    summary = {"x_k": list(gate.as_general().xs if isinstance(gate, GateParams) else gate.xs),
               "phase": label, "stationary_from_1": stat,
               "fixed_points": [[fp.nu, fp.stability, fp.slope] for fp in fps]}
    if two_site is not None:
        summary["stationary_closed_form"] = mf.stationary_density(two_site)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "meanfield.csv", header, rows)
        write_csv(out / "meanfield_fixed_points.csv", ["nu", "stability", "slope"],
                  [[fp.nu, fp.stability, fp.slope] for fp in fps])
        with open(out / "meanfield_summary.json", "w") as fh:
            json.dump(summary, fh, sort_keys=True, indent=1)
    else:
        print(",".join(header))
        for r in rows:
            print(",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in r))
    return EXIT_OK


def cmd_mcp(args) -> int:
    gate = mf.mcp_tune(args.k, args.x_top)
    res = {"K": gate.K, "x_k": list(gate.xs), "alpha_k": list(gate.alphas),
           "flow_coefficients": mf.flow_coefficients(gate).tolist()}
    if args.decay:
        est = mf.mf_decay_exponent(gate, args.decay)
        res["decay_slope"] = est.slope
        res["expected_slope"] = 1.0 / (1.0 - gate.K)
    _emit_json(args.out, res)
    return EXIT_OK


def cmd_scan(args) -> int:
    if not args.xk:
        raise ConfigError("scan needs --xk for the fixed parameters")
    base = parse_xk(args.xk, args.k)
    axes = []
    for spec in args.axis or []:
        idx, _, grid = spec.partition(":")
        axes.append((tuple(int(i) for i in idx.split(",")), parse_grid(grid)))
    if not axes:
        raise ConfigError("scan needs one or two --axis idx[,idx]:lo:hi:step")
    res = mf.scan_phase_diagram(base, axes)
    header = [f"axis{i}" for i in range(len(axes))] + [f"x_{k}" for k in range(len(base))] + [
        "phase", "stationary", "fixed_points"]
    rows = [list(p.params) + list(p.xs) + [p.label, p.stationary,
            ";".join(f"{fp.nu:.12g}:{fp.stability}" for fp in p.fixed_points)] for p in res.points]
    if args.out:
        write_csv(args.out, header, rows)
    else:
        print(",".join(header))
        for r in rows:
            print(",".join(str(v) for v in r))
    return EXIT_OK


def exact_initial(init: InitialCondition, n: int) -> ProbVector:
    if init.kind == "all_up":
        return ProbVector.all_up(n)
    if init.kind == "all_down":
        return ProbVector.all_down(n)
    if init.kind == "seed":
        return ProbVector.delta(n, 1 << init.site)
    s = np.arange(2**n)
    k = np.array([bin(v).count("1") for v in s])
    return ProbVector(n, init.density**k * (1 - init.density) ** (n - k))


def cmd_exact(args) -> int:
    if args.xk:
        gate = GeneralGateParams(parse_xk(args.xk, args.k))
    elif args.x is not None:
        gate = GateParams(float(args.x))
    else:
        raise ConfigError("exact needs --x or --xk")
    if args.n > args.max_n:
        raise CapacityError(f"N={args.n} exceeds --max-n={args.max_n}")
    init = InitialCondition.parse(args.init)
    config = {"command": "exact", "n": args.n, "steps": args.steps, "init": str(init),
              "x_k": list(gate.xs)}
    hist = evolve(exact_initial(init, args.n), gate, args.steps)
    final = hist[-1]
    res = {
        "schema_version": SCHEMA_VERSION, "config": config, "config_digest": config_digest(config),
        "N": args.n, "x_k": list(gate.xs), "steps": args.steps,
        "density_t": [p.density() for p in hist],
        "pair_correlations": final.pair_correlations().tolist(),
        "reduced_states": [
            {"sites": [0, d], "rho": matrix_to_pairs(exact_reduced_state(hist[-2], gate, [0, d]))}
            for d in range(1, args.n // 2 + 1)
        ] if args.steps >= 1 else [],
    }
    if args.n <= 12:
        res["probs"] = final.probs.tolist()
    _emit_json(args.out, res)
    return EXIT_OK


def _emit_json(out, obj):
    text = json.dumps(obj, sort_keys=True, indent=1)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    else:
        print(text)


# -- parser --

def _sim_args(p):
    p.add_argument("--n", type=int, default=256, help="sites per row (default 256)")
    p.add_argument("--steps", type=int, default=2000, help="time steps T (default 2000)")
    p.add_argument("--traj", type=int, default=500, help="trajectories per point (default 500)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--init", default="all-up",
                   help="all-up | all-down | seed[:site] | random:p (default all-up)")
    p.add_argument("--meas-window", type=int, default=None,
                   help="number of final steps averaged (default: last 20%%)")
    p.add_argument("--workers", type=int, default=1, help="worker threads (default 1)")
    p.add_argument("--out", help="output directory (default: JSON lines on stdout)")
    p.add_argument("--checkpoint-every", type=int, default=0,
                   help="checkpoint after this many trajectories (default off)")
    p.add_argument("--checkpoint", help="checkpoint file (default OUT/checkpoint.json)")
    p.add_argument("--resume", help="resume from a checkpoint file")
    p.add_argument("--timing", action="store_true",
                   help="record wall time (makes output non-reproducible)")
    p.add_argument("--stop-after", type=int, default=None, help=argparse.SUPPRESS)


def _gate_args(p, grid=True):
    p.add_argument("--x", help="flip probability of the two-site gate (or a comma list)")
    p.add_argument("--k", type=int, default=None, help="number of control sites K")
    p.add_argument("--xk", help="K-site flip probabilities: 0,0.5,1 or k=v,...")
    if grid:
        p.add_argument("--x-grid", help="sweep lo:hi:step over x (or over --x-index entries of --xk)")
        p.add_argument("--x-index", help="indices of --xk replaced by the --x-grid value")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dkq", description=__doc__.split("\n")[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", help="key-value config file with one section per subcommand")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="Monte Carlo density, fluctuations and correlations")
    _sim_args(s)
    _gate_args(s)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("lqu", help="simulate, then LQU of the two-spin state versus distance")
    _sim_args(s)
    _gate_args(s)
    s.add_argument("--estimator", choices=["auto", "fire", "direct"], default="auto",
                   help="moment estimator fed to the two-spin state (default auto)")
    s.add_argument("--d-max", type=int, default=0, help="largest distance (default N/2)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("meanfield", help="mean-field density versus time and fixed points")
    _gate_args(s, grid=False)
    s.add_argument("--steps", type=int, default=1000)
    s.add_argument("--nu0", type=float, default=1.0, help="initial density (default 1)")
    s.add_argument("--out", help="output directory (default: CSV on stdout)")
    s.set_defaults(func=cmd_meanfield)

    s = sub.add_parser("exact", help="exact 2^N evolution; writes a JSON fixture")
    _gate_args(s, grid=False)
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--steps", type=int, default=10)
    s.add_argument("--init", default="all-up")
    s.add_argument("--max-n", type=int, default=22, help="capacity limit on N (default 22)")
    s.add_argument("--out", help="output file (default stdout)")
    s.set_defaults(func=cmd_exact)

    s = sub.add_parser("mcp", help="multicritical parameters for K controls")
    s.add_argument("--k", type=int, default=4)
    s.add_argument("--x-top", type=float, default=0.0, help="free value of x_K (default 0)")
    s.add_argument("--decay", type=int, default=0, help="also measure the decay slope up to this t")
    s.add_argument("--out", help="output file (default stdout)")
    s.set_defaults(func=cmd_mcp)

    s = sub.add_parser("scan", help="mean-field phase classification over a 1-D or 2-D cut")
    s.add_argument("--k", type=int, default=None)
    s.add_argument("--xk", help="fixed x_k values")
    s.add_argument("--axis", action="append", help="idx[,idx]:lo:hi:step (repeat for a 2-D cut)")
    s.add_argument("--out", help="output CSV (default stdout)")
    s.set_defaults(func=cmd_scan)
    return p


def _apply_config_file(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    cp = configparser.ConfigParser()
    if not cp.read(known.config):
        raise OSError(f"cannot read config file {known.config}")
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for name, sp in subparsers.choices.items():
        if not cp.has_section(name):
            continue
        dests = {a.dest: a for a in sp._actions}
        values = {}
        for key, raw in cp.items(name):
            dest = key.replace("-", "_")
            if dest not in dests:
                raise ConfigError(f"unknown key {key!r} in section [{name}]")
            action = dests[dest]
            if isinstance(action, argparse._StoreTrueAction):
                values[dest] = _bool(raw)
            elif isinstance(action, argparse._AppendAction):
                values[dest] = [v.strip() for v in raw.split("\n") if v.strip()]
            elif action.type is not None:
                try:
                    values[dest] = action.type(raw)
                except ValueError:
                    raise ConfigError(f"bad value {raw!r} for {key!r} in [{name}]")
            else:
                values[dest] = raw
        sp.set_defaults(**values)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigError, ValueError) as err:
        print(f"dkq: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as err:
        print(f"dkq: capacity error: {err}", file=sys.stderr)
        return EXIT_CAPACITY
    except OSError as err:
        print(f"dkq: I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    except Interrupted as err:
        print(f"dkq: {err}; resume with --resume", file=sys.stderr)
        return EXIT_INTERRUPTED


if __name__ == "__main__":
    sys.exit(main())
