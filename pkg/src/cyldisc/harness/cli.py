"""Command line entry point: ``cyldisc <subcommand> [flags]``.

Every subcommand accepts ``--config FILE`` (flat key=value lines mirroring the
flags); explicit flags override the file.  Outputs go under ``--out``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields

import numpy as np

from .experiments import (ExperimentConfig, RunRecord, estimate_excursion_event, estimate_Tdisc,
                          parse_flat)
from .report import _jsonable, emit_report, read_csv, summary_from_rows

SUBCOMMANDS = {
    "simulate": "tdisc",
    "ldp": "excursion",
    "spectral": "spectral",
    "cover": "cover",
    "green": "green",
    "geom-verify": "geom",
    "exponents": "exponents",
    "report": None,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cyldisc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="flat key=value config file")
        s.add_argument("--d", type=int)
        s.add_argument("--n", type=int, action="append", dest="Ns", help="torus side (repeatable)")
        s.add_argument("--alpha", type=float)
        s.add_argument("--beta", type=float)
        s.add_argument("--replicas", type=int)
        s.add_argument("--budget-steps", type=int, dest="budget_steps")
        s.add_argument("--seed", type=int)
        s.add_argument("--out")
        s.add_argument("--format", choices=("csv", "json"), dest="fmt")
        s.add_argument("--svg", action="store_true", default=None)
        s.add_argument("--xi", type=float)
        s.add_argument("--start-z", type=int, dest="start_z")
        s.add_argument("--a", type=int, help="slab half-height for the green subcommand")
        s.add_argument("--L", type=int, help="cube side for geom-verify")
        s.add_argument("--l", type=int, help="small cube side for geom-verify")
    return p


def resolve_config(args, kind: str) -> ExperimentConfig:
    """Defaults, then the config file, then explicit flags."""
    values = {}
    if args.config:
        with open(args.config) as fh:
            values.update(parse_flat(fh.read()))
    names = {f.name for f in fields(ExperimentConfig)}
    for k, v in vars(args).items():
        if k in names and v is not None:
            values[k] = tuple(v) if k == "Ns" else v
    values["kind"] = kind
    return ExperimentConfig(**values)


def _write_json(out: str, name: str, obj) -> str:
    os.makedirs(out, exist_ok=True)
    p = os.path.join(out, name)
    with open(p, "w") as fh:
        fh.write(json.dumps(_jsonable(obj), sort_keys=True, indent=1))
    return p


def _write_config(cfg: ExperimentConfig):
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "config.txt"), "w") as fh:
        fh.write(cfg.to_text())


def cmd_simulate(cfg: ExperimentConfig, args) -> dict:
    rec = estimate_Tdisc(cfg)
    _write_config(cfg)
    return emit_report([rec], cfg.out, cfg.fmt, cfg.svg)


def cmd_ldp(cfg: ExperimentConfig, args) -> dict:
    rec = estimate_excursion_event(cfg)
    _write_config(cfg)
    return emit_report([rec], cfg.out, cfg.fmt, cfg.svg)


def cmd_spectral(cfg: ExperimentConfig, args) -> dict:
    from ..spectral import (eigentime_maxhit_check, torus_spectrum, torus_transition_matrix,
                            torus_translations, u_of_spectrum)
    rows = []
    for N in cfg.Ns:
        u = u_of_spectrum(torus_spectrum(N, cfg.d))
        res = {"N": N, "d": cfg.d, "u": u}
        if N ** cfg.d <= 4096:
            an = eigentime_maxhit_check(torus_transition_matrix(N, cfg.d),
                                        torus_translations(N, cfg.d))
            res.update({"max_hit": an.max_hit, "slack": an.slack, "holds": an.holds,
                        "symmetric": an.symmetric})
        rows.append(res)
    return {"spectral": _write_json(cfg.out, "spectral.json", {"rows": rows})}


def cmd_cover(cfg: ExperimentConfig, args) -> dict:
    from ..spectral import cover_tail_check
    out = {N: cover_tail_check(N, cfg.d, cfg.replicas, cfg.seed) for N in cfg.Ns}
    return {"cover": _write_json(cfg.out, "cover.json", out)}


def cmd_green(cfg: ExperimentConfig, args) -> dict:
    from ..green import decay_profile
    out = {}
    for N in cfg.Ns:
        a = args.a if args.a is not None else max(2, N // 2)
        prof = decay_profile(a, cfg.d, N)
        out[N] = {"a": a, "near_slope": prof.near_slope, "far_rate": prof.far_rate,
                  "lower_ratio_min": prof.lower_ratio_min, "near_range": prof.near_range,
                  "radii": prof.radii, "values": prof.values, "diagnostic": prof.diagnostic}
    return {"green": _write_json(cfg.out, "green.json", out)}


def cmd_geom(cfg: ExperimentConfig, args) -> dict:
    from ..isogeom import (box_alpha_host, extract_surface_cube, extract_surface_flat_box,
                           random_separating_set, random_separating_surface)
    from ..lattice import CylinderGeom
    L = args.L if args.L is not None else 24
    l = args.l if args.l is not None else 4
    if L < 4 * l:
        # below this the eroded cube holds at most one l-cube and the base set is empty
        raise SystemExit(f"geom-verify needs L >= 4 l (got L={L}, l={l})")
    rng = np.random.default_rng(cfg.seed)
    geom = CylinderGeom(cfg.d, 2 * L)
    certs, cp, cpp, bad = [], [], [], 0
    for _ in range(cfg.replicas):
        K, _I = random_separating_set(geom, L, rng)
        c = extract_surface_cube(K, L, l, geom)
        bad += bool(c.validate(K))
        cp.append(c.constants["c_prime"])
        cpp.append(c.constants["c_double_prime"])
        certs.append(c.to_dict())
    out = {"cube": {"L": L, "l": l, "d": cfg.d, "runs": cfg.replicas, "invalid": bad,
                       "min_c_prime": min(cp), "min_c_double_prime": min(cpp)}}
    if cfg.d * cfg.alpha < 1:
        N = cfg.Ns[-1]
        g = CylinderGeom(cfg.d, N)
        host = box_alpha_host(g, cfg.alpha)
        lb = max(2, l // 2)
        cp, cpp, bad = [], [], 0
        for _ in range(cfg.replicas):
            K, _I = random_separating_surface(host, rng, 1.0 / 3.0)
            c = extract_surface_flat_box(K, cfg.alpha, lb, g)
            bad += bool(c.validate(K))
            cp.append(c.constants["c_prime"])
            cpp.append(c.constants["c_double_prime"])
        out["flat_box"] = {"N": N, "alpha": cfg.alpha, "l": lb, "runs": cfg.replicas,
                          "invalid": bad, "min_c_prime": min(cp), "min_c_double_prime": min(cpp)}
    written = {"geom": _write_json(cfg.out, "geom.json", out)}
    written["certificates"] = _write_json(cfg.out, "certificates.json", certs)
    return written


def cmd_exponents(cfg: ExperimentConfig, args) -> dict:
    from .exponents import (exponent_table, f_le_fstar_violations, band_identity_check,
                            phi_continuity, zeta, zeta_grid)
    d = max(cfg.d, 3)
    tab = exponent_table(d)
    alphas = np.arange(1, 20) / 20.0
    out = {"d": d, "identity_residual": band_identity_check(d),
           "phi_jump": phi_continuity(d), "f_above_fstar": f_le_fstar_violations(d),
           "zeta_grid_gap": max(abs(zeta(a, d) - zeta_grid(a, d)) for a in alphas),
           "alphas": tab.alphas, "phi": tab.phi, "zeta": tab.zeta, "notes": tab.notes}
    written = {"exponents": _write_json(cfg.out, "exponents.json", out)}
    if cfg.svg:
        from .report import plot_band
        p = os.path.join(cfg.out, "band.svg")
        plot_band(tab, p)
        written["band"] = p
    return written


def cmd_report(args) -> dict:
    """Re-ingest runs.csv and config.txt from --out and rewrite the summary and plots."""
    out = args.out or "out"
    with open(os.path.join(out, "config.txt")) as fh:
        cfg = ExperimentConfig.from_text(fh.read())
    rows = read_csv(os.path.join(out, "runs.csv"))
    rec = RunRecord(cfg, rows, summary_from_rows(cfg, rows), cfg.fingerprint())
    svg = bool(args.svg) or cfg.svg
    return emit_report([rec], out, "csv", svg)


HANDLERS = {"simulate": cmd_simulate, "ldp": cmd_ldp, "spectral": cmd_spectral,
            "cover": cmd_cover, "green": cmd_green, "geom-verify": cmd_geom,
            "exponents": cmd_exponents}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report":
        written = cmd_report(args)
    else:
        cfg = resolve_config(args, SUBCOMMANDS[args.command])
        written = HANDLERS[args.command](cfg, args)
    for k in sorted(written):
        print(f"{k}: {written[k]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
