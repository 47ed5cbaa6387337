"""``duplexsim`` command line."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .calibration import CalibrationError
from .channel import effective_bandwidth, optimal_read_ratio
from .experiments import (
    ConfigError,
    calibrate_preset,
    compare_policies,
    format_comparison,
    load_config,
    preset_table,
    resolve_seed,
    run_sweep,
    simulate_cell,
)

log = logging.getLogger("duplexsim")


def _policies(arg: str | None) -> tuple[str, ...] | None:
    if arg is None:
        return None
    return tuple(p.strip() for p in arg.split(",") if p.strip())


def _load(args):
    cfg = load_config(args.config)
    changes = {"seed": resolve_seed(args.seed, cfg.seed)}
    pols = _policies(getattr(args, "policy", None))
    if pols is not None:
        changes["policies"] = pols
    cfg = cfg.with_(**changes)
    # re-run validation on the overridden fields
    return type(cfg)(**{f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)})


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = Path(args.out) if args.out else Path(cfg.out_dir)
    rows = run_sweep(cfg, parallel=args.parallel, out=out)
    log.info("wrote %d rows to %s", len(rows), out / f"{cfg.name}.csv")
    print(out / f"{cfg.name}.csv")
    return 0


def cmd_compare(args) -> int:
    comps = compare_policies(args.csv, args.baseline)
    text = format_comparison(comps)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_calibrate(args) -> int:
    out = Path(args.out) if args.out else Path(f"{args.name}.toml")
    if out.suffix != ".toml":
        out = out / f"{args.name}.toml"
    result, path = calibrate_preset(args.name, args.targets, args.mode, out, args.base, not args.independent)
    for (r, y), p in zip(result.targets, result.predicted):
        print(f"r={r:.3f} target={y:.3f} fitted={float(p):.3f}")
    print(path)
    return 0


def cmd_cax_dump(args) -> int:
    cfg = _load(args)
    policy = cfg.policies[0]
    spec = cfg.cells()[args.cell]
    res = simulate_cell(cfg, spec, policy, 0)
    text = res.cax.to_csv()
    if args.out:
        path = Path(args.out)
        if path.suffix != ".csv":
            path = path / f"{cfg.name}-cax.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_presets(args) -> int:
    # shared capacity only matters in half duplex; full duplex shows the ingress limit instead
    print("name,mode,read_gbps,write_gbps,shared_or_ingress_gbps,turnaround_ns,latency_ns,r_star,peak_gbps")
    for name, c in preset_table():
        rstar = optimal_read_ratio(c)
        shared = c.shared_capacity_gbps if c.mode.value == "half" else c.ingress_gbps
        print(f"{name},{c.mode.value},{c.read_capacity_gbps:.3f},{c.write_capacity_gbps:.3f},"
              f"{'' if shared is None else f'{shared:.3f}'},{c.turnaround_ns:.2f},"
              f"{c.base_latency_ns_min:g}-{c.base_latency_ns_max:g},{rstar:.3f},"
              f"{effective_bandwidth(c, rstar):.2f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="duplexsim", description="Duplex memory channel scheduling simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, policy=True):
        sp.add_argument("--config", required=True, help="experiment TOML file")
        sp.add_argument("--seed", type=int, default=None, help="master seed (overrides DUPLEXSIM_SEED)")
        if policy:
            sp.add_argument("--policy", default=None, help="comma-separated policy names")

    sp = sub.add_parser("sweep", help="run a ratio/thread/block sweep")
    common(sp)
    sp.add_argument("--out", default=None, help="output directory")
    sp.add_argument("--parallel", type=int, default=1)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("compare", help="summarise policy improvements from a sweep CSV")
    sp.add_argument("csv")
    sp.add_argument("--baseline", default="baseline")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("calibrate", help="fit a channel preset to measured points")
    sp.add_argument("name")
    sp.add_argument("targets", help="CSV of read_ratio,gbps")
    sp.add_argument("--mode", choices=["full", "half"], default="full")
    sp.add_argument("--base", default=None, help="preset supplying latency/efficiency/batch fields")
    sp.add_argument("--independent", action="store_true", help="fit independent-lane issue instead of in-order")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("cax-dump", help="run one cell and print the attribution tree")
    common(sp)
    sp.add_argument("--cell", type=int, default=0)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_cax_dump)

    sp = sub.add_parser("presets", help="preset catalogue")
    sp.add_argument("action", choices=["list"])
    sp.set_defaults(func=cmd_presets)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CalibrationError, KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"duplexsim: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
