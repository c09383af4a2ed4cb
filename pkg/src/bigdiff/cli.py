"""Command-line entry point: one subcommand per study, driven by an INI config.

Exit codes are uniform across subcommands:

    0  pass: the measured quantity met its configured tolerance
    1  quantitative failure: the run completed but the verdict failed
    2  usage or configuration error
    3  runtime failure (blow-up, non-convergence, missing spectral gap, ...)

Every run writes a directory runs/<timestamp>-<name>/ containing the resolved
configuration (itself a valid config reproducing the run), the measured
points, fits, plain two-column plot data, and a JSON run record.  Verdict
lines are machine-greppable with the fixed prefix "VERDICT:".  The
environment variable BIGDIFF_OUT_ROOT overrides [run] out_root; the
--out-root flag overrides both.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys

import numpy as np

from . import __version__
from . import attractors as at
from . import dynamics as dyn
from . import elliptic as el
from . import rates as rt
from .config import Config, ConfigError, load_config
from .spectral import diffusion

_RUNTIME_ERRORS = (
    dyn.BlowUpError,
    at.NoEquilibriaError,
    at.EscapeError,
    at.SpectralGapError,
    at.ContractionError,
    rt.FitError,
    rt.RecordError,
)


def _utc_stamp() -> str:
    return _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%S%f")


def _say(args, *message) -> None:
    if not args.quiet:
        print(*message)


def _verdict(name: str, detail: str, passed: bool) -> int:
    print(f"VERDICT: {name} {detail} {'PASS' if passed else 'FAIL'}")
    return 0 if passed else 1


def _load(args) -> Config:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.data["run"]["seed"] = args.seed
    if args.jobs is not None:
        cfg.data["run"]["jobs"] = args.jobs
    if args.quiet:
        cfg.data["run"]["quiet"] = True
    root = args.out_root or os.environ.get("BIGDIFF_OUT_ROOT") or cfg.get("run", "out_root")
    cfg.data["run"]["out_root"] = root
    args.quiet = cfg.get("run", "quiet")
    return cfg


def _new_run_dir(cfg: Config, name: str) -> str:
    run_dir = os.path.join(cfg.get("run", "out_root"), f"{_utc_stamp()}-{name}")
    os.makedirs(run_dir, exist_ok=True)
    cfg.write(os.path.join(run_dir, "resolved.ini"))
    return run_dir


def _write_record(run_dir: str, name: str, cfg: Config, status: str, metrics: dict,
                  started: str) -> rt.RunRecord:
    record = rt.RunRecord(
        quantity=name,
        config={"resolved_ini": os.path.abspath(os.path.join(run_dir, "resolved.ini"))},
        version=__version__,
        seed=cfg.get("run", "seed"),
        started=started,
        finished=_dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ"),
        status=status,
        paths={"run_dir": os.path.abspath(run_dir)},
        metrics=metrics,
    )
    rt.persist_run(record, os.path.join(run_dir, "record.json"))
    return record


def _finish_sweep_record(record: rt.RunRecord, cfg: Config, verdict: bool, detail: str) -> None:
    record.metrics["verdict"] = "PASS" if verdict else "FAIL"
    record.metrics["verdict_detail"] = detail
    rt.persist_run(record, record.paths["record"])
    run_dir = os.path.dirname(record.paths["record"])
    cfg.write(os.path.join(run_dir, "resolved.ini"))


def _read_details(record: rt.RunRecord) -> list[dict]:
    path = record.paths.get("details")
    if not path:
        return []
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split(",")
        rows = []
        for line in fh:
            rows.append(dict(zip(header, (float(x) for x in line.split(",")))))
    return rows


# ---------------------------------------------------------------------------
# subcommands


def cmd_resolvent_rate(args) -> int:
    cfg = _load(args)
    sweep_cfg = rt.SweepConfig(
        "resolvent_gap", cfg.get("sweep", "d_eps"),
        params={"modes": cfg.get("domain", "modes"),
                "components": cfg.get("domain", "components"), "trials": 64},
        seed=cfg.get("run", "seed"))
    fit, record = rt.run_sweep(sweep_cfg, out_root=cfg.get("run", "out_root"),
                               jobs=cfg.get("run", "jobs"))
    tol = cfg.get("tolerances", "slope")
    details = _read_details(record)
    attained = max(abs(row["attained_product"] - 1.0) for row in details)
    slope_ok = abs(fit.slope + 0.5) <= tol
    attained_ok = attained <= cfg.get("tolerances", "attained")
    _say(args, f"fitted slope {fit.slope:.6f} (predicted -0.5, tolerance {tol:g})")
    _say(args, f"gap * sqrt(d*lam1+1) deviates from 1 by at most {attained:.3e}")
    detail = f"slope={fit.slope:.6f} predicted=-0.5 tol={tol:g} attained_dev={attained:.2e}"
    passed = slope_ok and attained_ok
    _finish_sweep_record(record, cfg, passed, detail)
    return _verdict("resolvent-rate", detail, passed)


def cmd_decay(args) -> int:
    cfg = _load(args)
    spec = cfg.nonlinearity_spec()
    sweep_cfg = rt.SweepConfig(
        "w_decay_rate", cfg.get("sweep", "d_eps"),
        params={"modes": cfg.get("domain", "modes"),
                "components": cfg.get("domain", "components"),
                "nonlinearity": spec,
                "m_horizon": cfg.get("semigroup", "m_horizon")},
        seed=cfg.get("run", "seed"))
    fit, record = rt.run_sweep(sweep_cfg, out_root=cfg.get("run", "out_root"),
                               jobs=cfg.get("run", "jobs"))
    details = _read_details(record)
    one_sided_ok = all(row["fitted_rate"] >= row["theoretical_rate"] - 1e-9 for row in details)
    detail = f"min_margin={min(r['fitted_rate'] - r['theoretical_rate'] for r in details):.4g}"
    if spec["name"] == "zero":
        rel = max(abs(row["fitted_rate"] - row["lam2"]) / row["lam2"] for row in details)
        linear_ok = rel <= cfg.get("tolerances", "decay_rel")
        detail += f" linear_rel_err={rel:.2e}"
    else:
        linear_ok = True
    for row in details:
        _say(args, f"d={row['d_eps']:g}: fitted {row['fitted_rate']:.4f} >= "
                   f"theoretical {row['theoretical_rate']:.4f}")
    passed = one_sided_ok and linear_ok
    _finish_sweep_record(record, cfg, passed, detail)
    return _verdict("decay", detail, passed)


def cmd_eigs(args) -> int:
    cfg = _load(args)
    started = _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    basis = cfg.basis()
    E = cfg.diffusion_spec()
    count = min(args.count, E.components * (basis.mode_count + 1))
    table = el.eigenvalue_table(E, basis, count)
    run_dir = _new_run_dir(cfg, "eigs")
    print("j,eigenvalue")
    with open(os.path.join(run_dir, "eigenvalues.csv"), "w") as fh:
        fh.write("j,eigenvalue\n")
        for j, lam in enumerate(table, start=1):
            line = f"{j},{lam:.17g}"
            print(line)
            fh.write(line + "\n")
    lam2 = E.second_eigenvalue(basis)
    gains = E.gains(basis)
    above = np.sort(gains[gains > 1.0])
    identity_ok = bool(above[0] == lam2) and bool(np.all(table[:E.components] == 1.0))
    detail = f"lam2={lam2:.10g} d*lam1+1={lam2:.10g} count={count}"
    _write_record(run_dir, "eigs", cfg, "complete",
                  {"table": [float(x) for x in table],
                   "verdict": "PASS" if identity_ok else "FAIL"}, started)
    return _verdict("eigs", detail, identity_ok)


def cmd_example_optimal(args) -> int:
    cfg = _load(args)
    started = _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    eps_values = [float(x) for x in args.eps.split(",")]
    basis = cfg.basis()
    reports = [el.optimal_example_check(e, basis) for e in eps_values]
    run_dir = _new_run_dir(cfg, "example-optimal")
    with open(os.path.join(run_dir, "example.csv"), "w") as fh:
        fh.write("eps,closed_form_error,seminorm_sq,seminorm_sq_times_eps\n")
        for rep in reports:
            fh.write(f"{rep.eps:.17g},{rep.closed_form_error:.17g},"
                     f"{rep.seminorm_sq:.17g},{rep.seminorm_sq * rep.eps:.17g}\n")
    worst_err = max(rep.closed_form_error for rep in reports)
    products = [rep.seminorm_sq * rep.eps for rep in reports]
    spread = max(products) - min(products)
    slope = np.polyfit(np.log(eps_values), np.log([r.seminorm_sq for r in reports]), 1)[0]
    _say(args, f"seminorm^2 at eps=1: {reports[0].seminorm_sq:.7f} "
               f"(exact 1/(8 pi^2) = {1 / (8 * np.pi**2):.7f})")
    print(f"scaling exponent {slope:.3f}")
    passed = (worst_err <= 1e-12
              and spread <= cfg.get("tolerances", "seminorm_const")
              and abs(slope + 1.0) < 1e-6)
    detail = (f"max_error={worst_err:.2e} seminorm_sq*eps_spread={spread:.2e} "
              f"exponent={slope:.3f}")
    _write_record(run_dir, "example-optimal", cfg, "complete",
                  {"worst_error": worst_err, "spread": spread, "exponent": float(slope),
                   "verdict": "PASS" if passed else "FAIL"}, started)
    return _verdict("example-optimal", detail, passed)


def _auto_burn(equilibria, box: float, cell: float, configured_burn, configured_end):
    """Burn until transients contract below the dedup cell at the slowest stable rate."""
    stable_rates = []
    for eq in equilibria:
        negative = [abs(l.real) for l in eq.eigenvalues if l.real < -at.HYPERBOLICITY_TOL]
        if negative:
            stable_rates.append(min(negative))
    rate = min(stable_rates) if stable_rates else 1.0
    t_burn = configured_burn if configured_burn is not None else float(np.log(2 * box / cell) / rate)
    t_end = configured_end if configured_end is not None else t_burn + 16.0
    return t_burn, t_end


def cmd_attractor(args) -> int:
    cfg = _load(args)
    started = _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    run_dir = _new_run_dir(cfg, "attractor")
    try:
        F = cfg.nonlinearity()
        n = cfg.get("domain", "components")
        box = cfg.get("attractor", "longtime_box")
        if box is None:
            box = (F.bound if F.bound else 10.0) + 1.0
        equilibria = at.find_equilibria_ode(F, box, components=n)
        print("equilibrium,stability,residual")
        for eq in equilibria:
            loc = " ".join(f"{x:.8g}" for x in eq.vector())
            print(f"{loc},{eq.stability},{eq.residual:.2e}")
        manifold = at.attractor_ode(F, components=n,
                                    dt=cfg.get("attractor", "arc_dt"),
                                    sample_dt=cfg.get("attractor", "sample_dt"))
        t_burn, t_end = _auto_burn(equilibria, box, cfg.get("attractor", "dedup_cell"),
                                   cfg.get("attractor", "t_burn"),
                                   cfg.get("attractor", "t_end"))
        longtime = at.attractor_ode_longtime(
            F, n_seeds=cfg.get("attractor", "longtime_seeds"), box=box, components=n,
            t_burn=t_burn, t_end=t_end,
            dt=cfg.get("attractor", "arc_dt"),
            sample_dt=cfg.get("attractor", "sample_dt"),
            dedup_cell=cfg.get("attractor", "dedup_cell"),
            seed=cfg.get("run", "seed"))
        at.save_cloud(manifold, os.path.join(run_dir, "manifold_cloud.csv"))
        at.save_cloud(longtime, os.path.join(run_dir, "longtime_cloud.csv"))
        basis = cfg.basis(modes=8)
        E = diffusion([1.0] * n)
        res = at.hausdorff_distance(manifold, longtime, E, basis)
        resolution = max(res.resolution_a, res.resolution_b)
        _say(args, f"manifold cloud: {len(manifold)} points, longtime cloud: {len(longtime)} points")
        _say(args, f"t_burn={t_burn:.3g} t_end={t_end:.3g}")
        passed = res.sym <= 2 * resolution
        detail = (f"equilibria={len(equilibria)} d_H={res.sym:.4g} "
                  f"resolution={resolution:.4g}")
        _write_record(run_dir, "attractor", cfg, "complete",
                      {"d_H": res.sym, "a_to_b": res.a_to_b, "b_to_a": res.b_to_a,
                       "resolution": resolution, "n_equilibria": len(equilibria),
                       "verdict": "PASS" if passed else "FAIL"}, started)
        return _verdict("attractor", detail, passed)
    except BaseException:
        _write_record(run_dir, "attractor", cfg, "incomplete", {}, started)
        raise


def cmd_hausdorff_sweep(args) -> int:
    cfg = _load(args)
    spec = cfg.nonlinearity_spec()
    sweep_cfg = rt.SweepConfig(
        "hausdorff", cfg.get("sweep", "d_eps"),
        params={"modes": cfg.get("domain", "modes"),
                "components": cfg.get("domain", "components"),
                "nonlinearity": spec,
                "n_tails": cfg.get("attractor", "n_tails"),
                "w_amplitude": cfg.get("attractor", "w_amplitude"),
                "t_trans": cfg.get("attractor", "t_trans"),
                "sample_dt": cfg.get("attractor", "sample_dt"),
                "arc_dt": cfg.get("attractor", "arc_dt"),
                "m_horizon": cfg.get("semigroup", "m_horizon")},
        seed=cfg.get("run", "seed"))
    fit, record = rt.run_sweep(sweep_cfg, out_root=cfg.get("run", "out_root"),
                               jobs=cfg.get("run", "jobs"))
    details = _read_details(record)
    values = np.array([max(row["a_to_b"], row["b_to_a"]) for row in details])
    nonincreasing = bool(np.all(np.diff(values) <= 1e-12))
    threshold_ok = all(row["threshold_met"] < 0.5
                       or max(row["a_to_b"], row["b_to_a"]) <= row["resolution"]
                       for row in details)
    if fit is not None:
        slope_ok = fit.slope <= cfg.get("tolerances", "hausdorff_slope")
        slope_txt = f"{fit.slope:.4f}"
    else:
        slope_ok = True  # identically zero at cloud resolution
        slope_txt = "zero"
    for d, v in zip(sweep_cfg.d_eps_values, values):
        _say(args, f"d={d:g}: d_H = {v:.4e}")
    passed = nonincreasing and slope_ok and threshold_ok
    detail = (f"slope={slope_txt} bound={cfg.get('tolerances', 'hausdorff_slope'):g} "
              f"nonincreasing={nonincreasing} below_resolution_past_threshold={threshold_ok}")
    _finish_sweep_record(record, cfg, passed, detail)
    return _verdict("hausdorff-sweep", detail, passed)


def cmd_manifold(args) -> int:
    cfg = _load(args)
    spec = cfg.nonlinearity_spec()
    common = {"modes": cfg.get("domain", "modes"),
              "components": cfg.get("domain", "components"),
              "nonlinearity": spec}
    defl_cfg = rt.SweepConfig(
        "deflection", cfg.get("sweep", "d_eps"),
        params={**common,
                "n_tails": cfg.get("attractor", "n_tails"),
                "w_amplitude": cfg.get("attractor", "w_amplitude"),
                "t_trans": cfg.get("attractor", "deflection_t_trans"),
                "sample_dt": cfg.get("attractor", "sample_dt"),
                "arc_dt": cfg.get("attractor", "arc_dt")},
        seed=cfg.get("run", "seed"))
    defl_fit, defl_record = rt.run_sweep(defl_cfg, out_root=cfg.get("run", "out_root"),
                                         jobs=cfg.get("run", "jobs"))
    graph_cfg = rt.SweepConfig(
        "graph_sup", cfg.get("sweep", "d_eps"),
        params={**common,
                "grid_points": cfg.get("manifold", "grid_points"),
                "iters": cfg.get("manifold", "iterations"),
                "seed_amplitude": cfg.get("manifold", "seed_amplitude")},
        seed=cfg.get("run", "seed"))
    graph_fit, graph_record = rt.run_sweep(graph_cfg, out_root=cfg.get("run", "out_root"),
                                           jobs=cfg.get("run", "jobs"))
    zero_floor = cfg.get("tolerances", "zero_floor")
    defl_values = np.array([row["deflection"] for row in _read_details(defl_record)])
    if np.all(defl_values <= zero_floor):
        defl_ok = True
        defl_txt = "identically-zero"
        _say(args, "deflection identically zero at solver tolerance; bound trivially satisfied")
    else:
        scaled = defl_values * np.sqrt(np.array(defl_cfg.d_eps_values))
        positive = scaled[scaled > zero_floor]
        defl_ok = positive.max() / positive.min() <= 2.0
        defl_txt = f"band_ratio={positive.max() / positive.min():.3f}"
    graph_rows = _read_details(graph_record)
    factors = [row["contraction_factor"] for row in graph_rows]
    graph_ok = all(f < 1.0 for f in factors)
    sup_ok = bool(np.all(np.array([row["sup_norm"] for row in graph_rows]) <= zero_floor))
    for d, f in zip(graph_cfg.d_eps_values, factors):
        _say(args, f"d={d:g}: graph contraction factor {f:.4f}")
    passed = defl_ok and graph_ok and sup_ok
    detail = (f"deflection={defl_txt} contraction_max={max(factors):.4f} "
              f"graph_sup_zero={sup_ok}")
    _finish_sweep_record(defl_record, cfg, passed, detail)
    _finish_sweep_record(graph_record, cfg, passed, detail)
    return _verdict("manifold", detail, passed)


def cmd_report(args) -> int:
    rows = []
    for run_dir in args.run_dirs:
        record_path = os.path.join(run_dir, "record.json")
        if not os.path.isfile(record_path):
            print(f"error: no record.json in {run_dir}", file=sys.stderr)
            return 2
        record = rt.load_run(record_path)
        verdict = record.metrics.get("verdict", "NONE")
        slope = record.metrics.get("slope")
        predicted = record.metrics.get("predicted_slope")
        rows.append((record.quantity, slope, predicted, verdict, record.status))
    print("quantity,fitted,predicted,verdict,status")
    for quantity, slope, predicted, verdict, status in rows:
        fitted_txt = f"{slope:.6g}" if isinstance(slope, float) else "-"
        predicted_txt = f"{predicted:.6g}" if isinstance(predicted, float) else "-"
        print(f"{quantity},{fitted_txt},{predicted_txt},{verdict},{status}")
    return 0 if all(r[3] != "FAIL" for r in rows) else 1


# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-c", "--config", default=None, help="INI config file")
    parser.add_argument("--seed", type=int, default=None, help="override [run] seed")
    parser.add_argument("--jobs", type=int, default=None, help="override [run] jobs")
    parser.add_argument("--quiet", action="store_true", help="only print VERDICT lines")
    parser.add_argument("--out-root", default=None,
                        help="override the output root (also: BIGDIFF_OUT_ROOT)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bigdiff",
        description="Numerical studies of reaction-diffusion dynamics under large diffusion")
    parser.add_argument("--version", action="version", version=f"bigdiff {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    specs = [
        ("resolvent-rate", cmd_resolvent_rate, "resolvent-gap rate sweep"),
        ("decay", cmd_decay, "homogenization decay-rate sweep"),
        ("eigs", cmd_eigs, "operator eigenvalue table"),
        ("example-optimal", cmd_example_optimal, "sharp-rate elliptic example"),
        ("attractor", cmd_attractor, "ODE attractor structure study"),
        ("hausdorff-sweep", cmd_hausdorff_sweep, "attractor Hausdorff-distance sweep"),
        ("manifold", cmd_manifold, "manifold deflection and graph iteration"),
    ]
    for name, handler, help_txt in specs:
        p = sub.add_parser(name, help=help_txt)
        _add_common(p)
        p.set_defaults(handler=handler)
    sub.choices["eigs"].add_argument("--count", type=int, default=8,
                                     help="number of eigenvalues to print")
    sub.choices["example-optimal"].add_argument("--eps", default="1,4,16,64",
                                                help="comma list of eps values")

    p_report = sub.add_parser("report", help="summarize one or more run directories")
    p_report.add_argument("run_dirs", nargs="+", help="run directories to summarize")
    p_report.set_defaults(handler=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)
    try:
        return args.handler(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except _RUNTIME_ERRORS as err:
        print(f"runtime failure: {type(err).__name__}: {err}", file=sys.stderr)
        return 3
    except KeyboardInterrupt:
        print("interrupted; partial run directories are marked incomplete", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
