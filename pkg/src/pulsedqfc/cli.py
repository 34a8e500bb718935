"""Command line interface.

    pulsedqfc run paper_cw --out-dir out/cw
    pulsedqfc sweep-delay paper_delay_sweep --values 0 500 1000 1500
    pulsedqfc efficiency-curve paper_efficiency_curve
    pulsedqfc oracle conversion-probability --set power=42.5

Scenario arguments are file paths or names of bundled scenarios.
Exit codes: 0 success, 2 configuration error, 3 physics-validation error,
1 any other simulation or analysis failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import analysis, engine
from .config import bundled_scenarios, load_scenario
from .conversion import ConversionModel, conversion_probability, net_efficiency_curve, write_efficiency_csv
from .errors import ConfigError, PhysicsValidationError, PulsedQFCError
from .timing import make_pump_train

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_PHYSICS = 0, 1, 2, 3
ORACLES = ("conversion-probability", "g2-zero", "converted-fwhm", "efficiency-curve", "scenario")


def _config(args):
    cfg = load_scenario(args.config)
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.shards is not None:
        kw["shards"] = args.shards
    return replace(cfg, **kw) if kw else cfg


def _out_dir(args, cfg) -> Path:
    return Path(args.out_dir) if args.out_dir else Path("out") / cfg.name


def _print_json(obj) -> None:
    print(json.dumps(engine._clean(obj), indent=2, sort_keys=True))


def _run_lines(s: engine.RunSummary) -> list[str]:
    st = s.stats
    mc = st["mc_efficiency"]
    lines = [f"scenario {s.cfg.name}  seed {s.seed}  shards {len(s.shards)}  duration {s.duration_s:g} s",
             f"net efficiency {st['net_efficiency']:.6f}  (Monte Carlo {mc['value']:.6f} +- {mc['err']:.6f},"
             f" n={mc['n']})",
             f"converted rate {st['rates_per_s']['converted_analytic']:.1f} /s  "
             f"detected A {st['rates_per_s']['detected_a']:.1f} /s  B {st['rates_per_s']['detected_b']:.1f} /s"]
    if "g2" in st:
        g = st["g2"]
        lines.append(f"g2(0) {g['g2_zero']:.4f} +- {g['g2_zero_err']:.4f}  (predicted {g['predicted_g2_zero']:.4f})")
        if g.get("satellite_ratio") is not None:
            lines.append(f"satellite/main {g['satellite_ratio']:.4f} raw, "
                         f"{g.get('satellite_ratio_bg_subtracted', float('nan')):.4f} background-subtracted")
    if "fwhm" in st:
        lines.append(f"FWHM {st['fwhm']['value_ps']:.1f} +- {st['fwhm']['err_ps']:.1f} ps")
    if "lifetime" in st:
        lines.append(f"lifetime {st['lifetime']['value_ps']:.1f} +- {st['lifetime']['err_ps']:.1f} ps")
    return lines


def cmd_run(args) -> int:
    cfg = _config(args)
    s = engine.run_scenario(cfg, workers=args.workers)
    out = _out_dir(args, cfg)
    engine.write_run(s, out, args.format)
    engine.log_wall_clock(cfg.name, s.wall_clock_s)
    print("\n".join(_run_lines(s)))
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_g2(args) -> int:
    cfg = _config(args)
    if not cfg.analysis.g2:
        cfg = replace(cfg, analysis=replace(cfg.analysis, g2=True))
    s = engine.run_scenario(cfg, workers=args.workers)
    out = _out_dir(args, cfg)
    engine.write_run(s, out, args.format)
    engine.log_wall_clock(cfg.name, s.wall_clock_s)
    _print_json(s.stats["g2"])
    return EXIT_OK


def _cmd_sweep(args, parameter: str) -> int:
    cfg = _config(args)
    values = args.values
    res = engine.sweep(cfg, parameter, values, workers=args.workers)
    out = _out_dir(args, cfg)
    engine.write_sweep(res, out, args.format)
    for row in res.rows():
        print(f"{row['value_ps']:10.1f} ps  efficiency {row['net_efficiency']:.5f}  "
              f"MC {row['mc_efficiency']:.5f}  peak {row['peak_height']:.1f}")
    if res.fit is not None:
        print(f"lifetime from peak heights {res.fit.lifetime:.1f} +- {res.fit.lifetime_err:.1f} ps")
    if not res.runs:
        print("no sweep values given; nothing to do")
    else:
        print(f"outputs in {out}")
    return EXIT_OK


def cmd_sweep_width(args) -> int:
    return _cmd_sweep(args, "tau_mod")


def cmd_sweep_delay(args) -> int:
    return _cmd_sweep(args, "delta_t")


def _efficiency_points(cfg, values):
    if cfg.pump.mode == "cw":
        raise ConfigError("the efficiency curve needs a pulsed pump")
    p = cfg.pump
    train = make_pump_train(cfg.timing, p.peak_power_mw, p.extinction_ratio_db, p.shape, p.edge_fwhm_ps)
    src = cfg.source
    return net_efficiency_curve(values, src.wavepacket(0.0), train, cfg.conversion,
                                cfg.timing.excitation_rate, src.collection_efficiency)


def cmd_efficiency_curve(args) -> int:
    cfg = _config(args)
    values = args.values if args.values is not None else list(cfg.sweep.width_values_ps)
    points = _efficiency_points(cfg, values)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    if args.format == "json":
        (out / "efficiency_curve.json").write_text(json.dumps(
            [p._asdict() for p in points], indent=2, sort_keys=True) + "\n")
    else:
        write_efficiency_csv(points, out / "efficiency_curve.csv")
    print("tau_mod_ps  efficiency  rate_per_s  delay_ps")
    for p in points:
        print(f"{p.tau_mod_ps:10.1f}  {p.efficiency:10.5f}  {p.rate_per_s:10.1f}  {p.delay_ps:8.1f}")
    return EXIT_OK


def _params(pairs) -> dict[str, str]:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _num(params, key, default=None) -> float:
    if key not in params:
        if default is None:
            raise ConfigError(f"oracle needs --set {key}=<value>")
        return default
    try:
        return float(params[key])
    except ValueError as exc:
        raise ConfigError(f"{key} must be a number, got {params[key]!r}") from exc


def cmd_oracle(args) -> int:
    params = _params(args.set)
    name = args.name
    if name == "conversion-probability":
        model = ConversionModel(eta_max=_num(params, "eta_max", 0.75), p_sat=_num(params, "p_sat", 85.0))
        power = _num(params, "power")
        if power < 0:
            raise ConfigError("power must be >= 0")
        value = {"power_mw": power, "probability": conversion_probability(power, model)}
    elif name == "g2-zero":
        if "rho" in params:
            rho = _num(params, "rho")
            s, b = rho, 1.0 - rho
        else:
            s, b = _num(params, "signal"), _num(params, "background")
        value = {"signal": s, "background": b, "g2_zero": analysis.analytic_g2_zero(s, b)}
    elif name == "converted-fwhm":
        sat = params.get("saturated", "true").lower() not in ("0", "false", "no")
        value = {"fwhm_ps": analysis.predicted_converted_fwhm(_num(params, "tau_mod"), _num(params, "jitter", 0.0),
                                                              saturated=sat)}
    elif name == "efficiency-curve":
        cfg = load_scenario(args.config or "paper_efficiency_curve")
        vals = [float(v) for v in params["values"].split(",")] if "values" in params \
            else list(cfg.sweep.width_values_ps)
        value = [p._asdict() for p in _efficiency_points(cfg, vals)]
    elif name == "scenario":
        if not args.config:
            raise ConfigError("oracle scenario needs --config")
        value = engine.resolve(load_scenario(args.config)).to_dict()
    else:
        raise ConfigError(f"unknown oracle {name!r}; choose from {', '.join(ORACLES)}")
    _print_json(value)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pulsedqfc", description="Pulsed single-photon frequency "
                                     "conversion simulator.")
    parser.add_argument("--list", action="store_true", help="list bundled scenarios and exit")
    sub = parser.add_subparsers(dest="command")

    def common(p, values=False):
        p.add_argument("config", help="scenario file or bundled scenario name")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--shards", type=int, default=None, help="override the shard count")
        p.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
        p.add_argument("--out-dir", default=None, help="output directory (default out/<scenario>)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        if values:
            p.add_argument("--values", type=float, nargs="*", default=None, help="sweep values in ps")

    common(sub.add_parser("run", help="run a scenario"))
    common(sub.add_parser("g2", help="run a scenario and report the HBT analysis"))
    common(sub.add_parser("sweep-width", help="sweep the pump FWHM"), values=True)
    common(sub.add_parser("sweep-delay", help="sweep the pump delay"), values=True)
    common(sub.add_parser("efficiency-curve", help="optimal-delay efficiency against pump FWHM"), values=True)
    po = sub.add_parser("oracle", help="print closed-form or quadrature values")
    po.add_argument("name", choices=ORACLES)
    po.add_argument("--config", default=None, help="scenario for the scenario-based oracles")
    po.add_argument("--set", action="append", metavar="KEY=VALUE", help="oracle parameter")
    return parser


COMMANDS = {"run": cmd_run, "g2": cmd_g2, "sweep-width": cmd_sweep_width, "sweep-delay": cmd_sweep_delay,
            "efficiency-curve": cmd_efficiency_curve, "oracle": cmd_oracle}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.list:
        print("\n".join(bundled_scenarios()))
        return EXIT_OK
    if not args.command:
        parser.print_help()
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PhysicsValidationError as exc:
        print(f"physics validation error: {exc}", file=sys.stderr)
        return EXIT_PHYSICS
    except PulsedQFCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except ValueError as exc:
        # out-of-range oracle inputs and the like
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
