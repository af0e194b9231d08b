"""Command-line entry points.

    simulate run --scenario <name> --variant A|B [--config file] [--drops N]
                 [--seed S] [--out dir] [--set key=value] ...
    simulate list-scenarios
    simulate check --results <csv|builtin:fixtures> [--requirements builtin|file]
    simulate dump-profile <name>

Exit codes: 0 all checks pass, 1 at least one fail, 2 usage or runtime error.
"""

from __future__ import annotations

import argparse
import sys

from . import engine, report
from .channel.profiles import LSP_ORDER, builtin_profiles
from .errors import ImtEvalError
from .geometry import build_layout, export_layout_csv
from .scenario import (
    TestEnvironment,
    builtin_requirements,
    list_presets,
    load_config,
    preset,
)
from .traffic import TrafficKind


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simulate",
                                     description="Drop-based system-level evaluator for "
                                                 "candidate radio configurations")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario and emit results")
    p_run.add_argument("--scenario", help="test environment name")
    p_run.add_argument("--variant", default="A", choices=("A", "B"))
    p_run.add_argument("--config", help="config file with overrides")
    p_run.add_argument("--drops", type=int, help="override drop count")
    p_run.add_argument("--seed", type=int, help="override master seed")
    p_run.add_argument("--out", default="results", help="output directory")
    p_run.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="single-field override, repeatable")
    p_run.add_argument("--workers", type=int, default=1)
    p_run.add_argument("--sinr-only", action="store_true",
                       help="skip scheduling; record SINR statistics only")
    p_run.add_argument("--early-stop", action="store_true",
                       help="stop when the running mean converges")
    p_run.add_argument("--non-full-buffer", action="store_true",
                       help="also run the message-based connection density search")
    p_run.add_argument("--dump-geometry", action="store_true")
    p_run.add_argument("--dump-sinr", action="store_true")
    p_run.add_argument("--dump-packets", action="store_true",
                       help="with --non-full-buffer: write the per-message log "
                            "at the requirement density")

    sub.add_parser("list-scenarios", help="list presets and their provenance")

    p_check = sub.add_parser("check", help="check results against the requirement set")
    p_check.add_argument("--results", required=True,
                         help="external result CSV, or 'builtin:fixtures'")
    p_check.add_argument("--requirements", default="builtin",
                         help="'builtin' or a requirements CSV path")
    p_check.add_argument("--out")

    p_dump = sub.add_parser("dump-profile", help="print a channel profile")
    p_dump.add_argument("name")
    return parser


def _overrides_to_text(scenario: str, variant: str, pairs) -> str:
    sections: dict[str, list[str]] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ImtEvalError(f"--set needs SECTION.KEY=VALUE, got '{pair}'")
        key, value = pair.split("=", 1)
        if "." in key:
            section, key = key.rsplit(".", 1)
        else:
            section = "scenario"
        sections.setdefault(section, []).append(f"{key} = {value}")
    lines = [f"[scenario]", f"environment = {scenario}", f"config_variant = {variant}"]
    lines.extend(sections.pop("scenario", []))
    for section, entries in sections.items():
        lines.append(f"[{section}]")
        lines.extend(entries)
    return "\n".join(lines) + "\n"


def _cmd_run(args) -> int:
    if args.config and args.scenario:
        base = preset(TestEnvironment.parse(args.scenario), args.variant)
        config = load_config(args.config, base=base)
    elif args.config:
        config = load_config(args.config)
    elif args.scenario:
        config = preset(TestEnvironment.parse(args.scenario), args.variant)
    else:
        print("error: need --scenario or --config", file=sys.stderr)
        return 2
    if args.set:
        text = _overrides_to_text(config.environment.value, config.config_variant, args.set)
        config = load_config(text=text, base=config)
    from dataclasses import replace
    if args.drops is not None:
        config = replace(config, drops=args.drops)
    if args.seed is not None:
        config = replace(config, master_seed=args.seed)

    result = engine.run(config, workers=args.workers, sinr_only=args.sinr_only,
                        early_stop=args.early_stop)
    compliance = report.check_compliance(result, builtin_requirements())
    files = report.emit(result, compliance, args.out)

    if args.non_full_buffer and config.traffic.kind is TrafficKind.POISSON_MESSAGING:
        search, cal_config = engine.density_search(config)
        print(f"non-full-buffer connection density: {search.density_per_km2:,.0f} /km^2 "
              f"(p99 delay {search.delay_p99_s:.3f} s, "
              f"{'meets' if search.passed else 'below'} the 1e6 /km^2 requirement; "
              f"P0 {cal_config.link.ul_p0_dbm:.1f} dBm)")
        if not search.monotone:
            print(f"  delay vs density non-monotone; bracket {search.bracket}")
        if args.dump_packets:
            layout = build_layout(cal_config)
            records = []
            engine.evaluate_p99_delay(cal_config, layout, 1_000_000.0, n_drops=1,
                                      record_sink=records)
            path = f"{args.out}/packets.csv"
            with open(path, "w", encoding="utf-8") as fh:
                fh.write("drop,cell,arrival_s,service_start_s,completion_s,"
                         "transmissions,delivered\n")
                for row in records:
                    fh.write(",".join(str(x) for x in row) + "\n")
            print(f"wrote {path} ({len(records)} messages at 1e6 /km^2)")

    if args.dump_geometry:
        layout = build_layout(config)
        export_layout_csv(layout, f"{args.out}/geometry_trxp.csv")
        drop0 = engine.run_drop(config, layout, 0, sinr_only=True)
        _dump_ues(drop0, f"{args.out}/geometry_ues_drop0.csv")
    if args.dump_sinr:
        layout = build_layout(config)
        drop0 = engine.run_drop(config, layout, 0, sinr_only=True)
        _dump_sinr(drop0, f"{args.out}/sinr_drop0.csv")

    for kpi in result.kpis:
        speed = f" @{kpi.speed_kmh:g} km/h" if kpi.speed_kmh is not None else ""
        direction = kpi.direction or "both"
        print(f"{kpi.metric}{speed} [{direction}]: {kpi.value:.6g} {kpi.unit}")
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"wrote {len(files)} files to {args.out}")
    return 0 if compliance.all_pass else 1


def _dump_ues(drop, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("drop,ue_id,x_m,y_m,z_m,indoor,serving_trxp\n")
        for i, pos in enumerate(drop.ue_positions):
            fh.write(f"{drop.drop_index},{i},{pos[0]:.3f},{pos[1]:.3f},{pos[2]:.3f},"
                     f"{int(drop.ue_indoor[i])},{drop.serving[i]}\n")


def _dump_sinr(drop, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("ue_id,direction,signal_dbm,interference_dbm,noise_dbm,sinr_db\n")
        for direction in ("downlink", "uplink"):
            for s in drop.sinr_samples(direction):
                fh.write(f"{s.ue_id},{s.direction},{s.signal_dbm!r},{s.interference_dbm!r},"
                         f"{s.noise_dbm!r},{s.sinr_db!r}\n")


def _cmd_list(_args) -> int:
    for env, variant, source in list_presets():
        print(f"{env.value:24s} variant {variant}: {source}")
    return 0


def _cmd_check(args) -> int:
    reqs = builtin_requirements() if args.requirements == "builtin" \
        else report.load_requirements_csv(args.requirements)
    if args.results == "builtin:fixtures":
        table = report.load_all_fixtures()
    else:
        table = report.ingest_table(args.results)
    compliance = report.check_compliance(table, reqs)
    decided = [r for r in compliance.rows if r.passed is not None]
    print(f"{len(compliance.rows)} rows, {len(decided)} decided, "
          f"{len(compliance.failures())} failed")
    for row in compliance.failures():
        print(f"FAIL {row.evaluator} {row.environment} {row.direction} {row.metric}: "
              f"{row.measured} < {row.requirement} ({row.footnotes})")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(compliance.to_csv_text())
        print(f"wrote {args.out}")
    return 0 if compliance.all_pass else 1


def _cmd_dump_profile(args) -> int:
    profiles = builtin_profiles()
    if args.name not in profiles:
        print(f"error: unknown profile '{args.name}'; available: {sorted(profiles)}",
              file=sys.stderr)
        return 2
    profile = profiles[args.name]
    print(f"[{profile.name}] plos_model={profile.plos_model} "
          f"pen_low_db={profile.pen_low_db} pen_high_db={profile.pen_high_db}")
    for label, cond in (("los", profile.los), ("nlos", profile.nlos)):
        print(f"  [{profile.name}.{label}]")
        for key in ("n_clusters", "r_tau", "per_cluster_shadow_db", "c_asd", "c_asa",
                    "c_zsa", "xpr_mu_db", "xpr_sigma_db", "lg_ds_mu", "lg_ds_sigma",
                    "lg_asd_mu", "lg_asd_sigma", "lg_asa_mu", "lg_asa_sigma",
                    "lg_zsd_mu", "lg_zsd_sigma", "lg_zsa_mu", "lg_zsa_sigma",
                    "sf_sigma_db", "k_mu_db", "k_sigma_db", "pl_exp1", "pl_exp2",
                    "nlos_exp", "nlos_offset_db"):
            print(f"    {key} = {getattr(cond, key)}")
        corr = cond.corr
        for i in range(7):
            for j in range(i + 1, 7):
                if corr[i, j] != 0.0:
                    print(f"    corr_{LSP_ORDER[i]}_{LSP_ORDER[j]} = {corr[i, j]}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "list-scenarios":
            return _cmd_list(args)
        if args.command == "check":
            return _cmd_check(args)
        if args.command == "dump-profile":
            return _cmd_dump_profile(args)
        parser.error(f"unknown command {args.command}")
    except ImtEvalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
