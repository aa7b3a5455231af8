"""``risfd`` command line: run | validate | oracle-fixture."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .oracle import FIXTURE_NAME, GridSpec, NoFeasiblePointError, grid_search_ee, scenario_hash, write_fixture


def _overrides(args) -> dict[tuple[str, str], str]:
    out = {}
    for item in args.set or []:
        key, sep, val = item.partition("=")
        sec, dot, name = key.partition(".")
        if not sep or not dot:
            raise ex.ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        out[(sec.strip(), name.strip())] = val.strip()
    if getattr(args, "seeds", None):
        out[("experiment", "seeds")] = args.seeds
    return out


def _config_text(args) -> str:
    if args.config is None:
        return ""
    try:
        return Path(args.config).read_text()
    except OSError as exc:
        raise ex.ConfigError(f"cannot read {args.config}: {exc}") from exc


def cmd_run(args) -> int:
    cfg = ex.parse_config(_config_text(args), _overrides(args))
    results = ex.run_cells(cfg, jobs=args.jobs)
    path = ex.write_outputs(cfg, results, args.out)
    failed = [r for r in results if r.failed]
    infeasible = [r for r in results if "infeasible" in r.flags]
    print(f"wrote {path} ({len(results)} cells, {len(infeasible)} infeasible, {len(failed)} failed)")
    return 1 if failed else 0


def cmd_validate(args) -> int:
    errors, warnings, cfg = ex.validate_text(_config_text(args), _overrides(args))
    if cfg is not None:
        rows = ex.parameter_table(cfg)
        width = max(len(r[0]) for r in rows)
        for name, val, lin in rows:
            print(f"{name:<{width}}  {val:>12}  {lin}")
        print(f"schemes: {', '.join(s.value for s in cfg.schemes)}")
        print(f"sweep: {cfg.sweep_axis} {', '.join(ex.fmt(v) for v in cfg.sweep_values)}")
        print(f"seeds: {len(cfg.seeds)}")
    for w in warnings:
        print(f"warning: {w}")
    for e in errors:
        print(f"error: {e}")
    print("ok" if not errors else f"{len(errors)} error(s)")
    return 0 if not errors else 2


def cmd_oracle_fixture(args) -> int:
    cfg = ex.parse_config(_config_text(args), _overrides(args))
    grid = GridSpec(**vars(cfg.oracle))
    entries = {}
    for value in cfg.points:
        for seed in cfg.seeds:
            ch, sys_ = ex.channels_for(cfg, value, seed)
            try:
                res = grid_search_ee(ch, sys_, cfg.power, grid)
            except NoFeasiblePointError:
                print(f"seed {seed}: no feasible grid point, skipped")
                continue
            entries[scenario_hash(ch, sys_, cfg.power, grid)] = {
                "seed": seed,
                "sweep_value": value,
                "ee": res.ee,
                "p1_w": float(res.beams.power(1)),
                "p2_w": float(res.beams.power(2)),
                "theta": [float(t) for t in res.theta],
            }
            print(f"seed {seed}: ee={res.ee:.12g}")
    out = Path(args.out)
    path = out / FIXTURE_NAME if out.suffix != ".json" else out
    path.parent.mkdir(parents=True, exist_ok=True)
    write_fixture(path, entries)
    print(f"wrote {path} ({len(entries)} entries)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="risfd", description="EE beamforming experiments for RIS-aided full duplex")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--config", metavar="PATH", help="INI config; omitted keys use defaults")
        sp.add_argument("--seeds", metavar="LIST", help="seed list such as 1-20 or 1,4,7")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
        if out_default is not None:
            sp.add_argument("--out", metavar="DIR", default=out_default, help="output directory")

    r = sub.add_parser("run", help="run every (scheme, sweep value, seed) cell")
    common(r, "results")
    r.add_argument("--jobs", type=int, default=1, metavar="N", help="worker processes")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="check a config and probe feasibility on one seed")
    common(v, None)
    v.set_defaults(func=cmd_validate)

    o = sub.add_parser("oracle-fixture", help="grid-search tiny instances and freeze the results")
    common(o, ".")
    o.set_defaults(func=cmd_oracle_fixture)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ex.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
