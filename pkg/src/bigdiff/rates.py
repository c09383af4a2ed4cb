"""Parameter sweeps over d = min eps, log-log rate fits, persistent runs.

Every convergence claim in the package reduces to "quantity(d) decays at
least like d^(-1/2)".  The harness dispatches a per-d measurement to the
owning module, fits ordinary least squares on (log d, log value), and
persists a run directory containing the raw points, the fit, plain
two-column plot data, and a JSON run record.  Identical config + seed
reproduces every CSV byte for byte (per-point seeds are spawned from the
master seed by index, so parallel execution order cannot matter).

Measured zeros are not fitted: quantities that vanish identically (the
projection gap, the manifold graph) are reported as "identically zero;
bound trivially satisfied" instead of being forced through a log.
"""

from __future__ import annotations

import datetime as _dt
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .spectral import DomainSpec, build_basis, constant_field, diffusion, mode_field
from . import attractors as _attractors
from . import dynamics as _dynamics
from . import elliptic as _elliptic

__all__ = [
    "SweepConfig",
    "RateFit",
    "RunRecord",
    "FitError",
    "RecordError",
    "loglog_fit",
    "run_sweep",
    "persist_run",
    "load_run",
    "register_quantity",
    "QUANTITIES",
    "ZERO_FLOOR",
]

ZERO_FLOOR = 1e-13


class FitError(RuntimeError):
    """Too few surviving points to fit."""


class RecordError(RuntimeError):
    """A run record failed to parse."""


@dataclass(frozen=True)
class SweepConfig:
    """One sweep: a quantity name, increasing d values, parameters, a seed."""

    quantity: str
    d_eps_values: tuple
    params: dict = field(default_factory=dict)
    seed: int = 1234

    def __post_init__(self):
        values = tuple(float(v) for v in self.d_eps_values)
        object.__setattr__(self, "d_eps_values", values)
        if len(values) < 4:
            raise ValueError("a sweep needs at least 4 points")
        if any(v <= 0 for v in values):
            raise ValueError("d values must be positive")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError("d values must be strictly increasing")
        if self.quantity not in QUANTITIES:
            known = ", ".join(sorted(QUANTITIES))
            raise ValueError(f"unknown quantity {self.quantity!r}; known: {known}")


@dataclass(frozen=True)
class RateFit:
    """Log-log OLS fit of (d, value) pairs against a predicted exponent."""

    d_eps: tuple
    values: tuple
    slope: float
    intercept: float
    amplitude: float
    r_squared: float
    predicted_slope: float
    excluded: int = 0
    note: str = ""

    @property
    def pairs(self):
        return list(zip(self.d_eps, self.values))


def loglog_fit(d_values, values, predicted_slope: float = -0.5,
               excluded: int = 0, note: str = "") -> RateFit:
    """OLS on (log d, log value); exact on synthetic power laws."""
    d = np.asarray(d_values, dtype=float)
    v = np.asarray(values, dtype=float)
    if d.size != v.size or d.size < 2:
        raise FitError("need at least 2 positive pairs")
    if np.any(v <= 0):
        raise FitError("log-log fit requires positive values")
    x, y = np.log(d), np.log(v)
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 if ss_tot < 1e-30 else 1.0 - ss_res / ss_tot
    return RateFit(d_eps=tuple(d), values=tuple(v), slope=float(slope),
                   intercept=float(intercept), amplitude=float(np.exp(intercept)),
                   r_squared=r2, predicted_slope=predicted_slope,
                   excluded=excluded, note=note)


# ---------------------------------------------------------------------------
# quantity registry: name -> (predicted slope, prepare(params, seed) -> ctx,
#                             measure(d, ctx, point_seed) -> (value, extras))

_DOM = DomainSpec()


def _ctx_basis(params, components=None):
    K = int(params.get("modes", 32))
    n = int(params.get("components", 1)) if components is None else components
    return build_basis(_DOM, K), n


def _prepare_resolvent(params, seed):
    basis, n = _ctx_basis(params)
    return {"basis": basis, "n": n, "trials": int(params.get("trials", 64))}


def _measure_resolvent(d, ctx, point_seed):
    E = diffusion([d] * ctx["n"])
    basis = ctx["basis"]
    exact = _elliptic.resolvent_gap_exact(E, basis)
    sampled = _elliptic.resolvent_gap_sampled(E, basis, ctx["trials"], seed=point_seed)
    lam2 = E.second_eigenvalue(basis)
    return exact, {"exact_gap": exact, "sampled_gap": sampled,
                   "bound_constant": exact * np.sqrt(d),
                   "attained_product": exact * np.sqrt(lam2)}


def _prepare_projection(params, seed):
    basis, n = _ctx_basis(params)
    return {"basis": basis, "n": n,
            "delta": float(params.get("delta", 0.5)),
            "contour_nodes": int(params.get("contour_nodes", 64))}


def _measure_projection(d, ctx, point_seed):
    E = diffusion([d] * ctx["n"])
    q_eigen = _elliptic.spectral_projection_Q(E, ctx["basis"], ctx["delta"])
    gap = _elliptic.projection_gap(q_eigen)
    q_contour = _elliptic.spectral_projection_Q(E, ctx["basis"], ctx["delta"],
                                                mode="contour",
                                                contour_nodes=ctx["contour_nodes"])
    contour_dev = float(np.max(np.abs(q_contour.weights - q_eigen.weights)))
    return gap, {"projection_gap": gap, "contour_deviation": contour_dev}


def _prepare_decay(params, seed):
    basis, n = _ctx_basis(params)
    spec = dict(params.get("nonlinearity", {"name": "zero"}))
    F = _dynamics.nonlinearity_from_spec(spec.pop("name"), **spec)
    return {"basis": basis, "n": n, "F": F,
            "mode_amp": float(params.get("mode_amp", 0.5)),
            "v0": float(params.get("v0", 1.0)),
            "efolds": float(params.get("efolds", 40.0)),
            "steps": int(params.get("steps", 2000)),
            "m_horizon": float(params.get("m_horizon", 10.0))}


def _measure_decay(d, ctx, point_seed):
    basis, n = ctx["basis"], ctx["n"]
    E = diffusion([d] * n)
    lam2 = E.second_eigenvalue(basis)
    T = ctx["efolds"] / lam2
    dt = T / ctx["steps"]
    u0 = constant_field([ctx["v0"]] * n, basis) + mode_field(basis, 1, ctx["mode_amp"],
                                                             components=n)
    traj = _dynamics.evolve_pde(u0, E, ctx["F"], T=T, dt=dt, stride=max(1, ctx["steps"] // 400))
    mu = _dynamics.compute_M_and_mu(E, basis, horizon=ctx["m_horizon"]).mu
    fit = _dynamics.decay_rate_fit(traj, "w_xhalf", mu=mu)
    return fit.fitted_rate, {"fitted_rate": fit.fitted_rate,
                             "theoretical_rate": fit.theoretical_rate,
                             "lam2": lam2, "mu": mu, "residual": fit.residual,
                             "truncated": float(fit.truncated)}


def _prepare_hausdorff(params, seed):
    basis, n = _ctx_basis(params)
    spec = dict(params.get("nonlinearity", {"name": "tanh", "beta": 2.0}))
    F = _dynamics.nonlinearity_from_spec(spec.pop("name"), **spec)
    ode_cloud = _attractors.attractor_ode(F, components=n,
                                          sample_dt=float(params.get("sample_dt", 1e-2)))
    return {"basis": basis, "n": n, "F": F, "ode_cloud": ode_cloud,
            "n_tails": int(params.get("n_tails", 24)),
            "w_amplitude": float(params.get("w_amplitude", 0.3)),
            "t_trans": float(params.get("t_trans", 1.0)),
            "sample_dt": float(params.get("sample_dt", 1e-2)),
            "arc_dt": float(params.get("arc_dt", 5e-4)),
            "m_horizon": float(params.get("m_horizon", 10.0)),
            # one shared perturbation draw for the whole sweep: per-point
            # draws would modulate the coupling constant and break the
            # monotone decay of d_H across d
            "tail_seed": seed}


def _measure_hausdorff(d, ctx, point_seed):
    basis = ctx["basis"]
    E = diffusion([d] * ctx["n"])
    cloud = _attractors.attractor_pde(E, ctx["F"], basis, ode_cloud=ctx["ode_cloud"],
                                      n_tails=ctx["n_tails"],
                                      w_amplitude=ctx["w_amplitude"],
                                      t_trans=ctx["t_trans"], dt=ctx["arc_dt"],
                                      sample_dt=ctx["sample_dt"], seed=ctx["tail_seed"])
    res = _attractors.hausdorff_distance(cloud, ctx["ode_cloud"], E, basis)
    consts = _dynamics.compute_M_and_mu(E, basis, horizon=ctx["m_horizon"])
    threshold_met = E.d_eps * basis.lambda1 > consts.mu - 1.0
    return res.sym, {"a_to_b": res.a_to_b, "b_to_a": res.b_to_a,
                     "resolution": max(res.resolution_a, res.resolution_b),
                     "mu": consts.mu, "threshold_met": float(threshold_met)}


def _prepare_deflection(params, seed):
    ctx = _prepare_hausdorff({**params, "t_trans": params.get("t_trans", 10.0)}, seed)
    return ctx


def _measure_deflection(d, ctx, point_seed):
    basis = ctx["basis"]
    E = diffusion([d] * ctx["n"])
    cloud = _attractors.attractor_pde(E, ctx["F"], basis, ode_cloud=ctx["ode_cloud"],
                                      n_tails=ctx["n_tails"],
                                      w_amplitude=ctx["w_amplitude"],
                                      t_trans=ctx["t_trans"], dt=ctx["arc_dt"],
                                      sample_dt=ctx["sample_dt"], seed=ctx["tail_seed"])
    value = _attractors.manifold_deflection(cloud)
    return value, {"deflection": value, "scaled": value * np.sqrt(d)}


def _prepare_graph(params, seed):
    basis, n = _ctx_basis(params)
    spec = dict(params.get("nonlinearity", {"name": "tanh", "beta": 2.0}))
    F = _dynamics.nonlinearity_from_spec(spec.pop("name"), **spec)
    return {"basis": basis, "n": n, "F": F,
            "grid_points": int(params.get("grid_points", 21)),
            "iters": int(params.get("iters", 4)),
            "seed_amplitude": float(params.get("seed_amplitude", 0.1))}


def _measure_graph(d, ctx, point_seed):
    basis = ctx["basis"]
    E = diffusion([d] * ctx["n"])
    est = _attractors.graph_iteration(E, ctx["F"], basis, grid_points=ctx["grid_points"],
                                      iters=ctx["iters"])
    m = est.v_grid.shape[0]
    seeded = np.zeros((m, ctx["n"], basis.mode_count + 1))
    seeded[:, :, 1] = ctx["seed_amplitude"]
    est_seeded = _attractors.graph_iteration(E, ctx["F"], basis,
                                             grid_points=ctx["grid_points"],
                                             iters=3, initial=seeded)
    factor = max(est_seeded.contraction_factors) if est_seeded.contraction_factors else 0.0
    return est.sup_norm, {"sup_norm": est.sup_norm, "contraction_factor": factor,
                          "horizon": est.horizon}


QUANTITIES = {
    "resolvent_gap": (-0.5, _prepare_resolvent, _measure_resolvent),
    "projection_gap": (-0.5, _prepare_projection, _measure_projection),
    "w_decay_rate": (float("nan"), _prepare_decay, _measure_decay),
    "hausdorff": (-0.5, _prepare_hausdorff, _measure_hausdorff),
    "deflection": (-0.5, _prepare_deflection, _measure_deflection),
    "graph_sup": (-0.5, _prepare_graph, _measure_graph),
}


def register_quantity(name: str, predicted_slope: float, prepare, measure) -> None:
    """Extension hook (also used by tests to inject synthetic quantities)."""
    QUANTITIES[name] = (predicted_slope, prepare, measure)


# ---------------------------------------------------------------------------


@dataclass
class RunRecord:
    """Everything needed to reproduce and audit one sweep run."""

    quantity: str
    config: dict
    version: str
    seed: int
    started: str
    finished: str
    status: str
    paths: dict
    metrics: dict

    def __eq__(self, other):
        return isinstance(other, RunRecord) and asdict(self) == asdict(other)


def persist_run(record: RunRecord, path) -> None:
    with open(path, "w") as fh:
        json.dump(asdict(record), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_run(path) -> RunRecord:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as err:
        raise RecordError(f"corrupt run record {path}: line {err.lineno}: {err.msg}") from err
    try:
        return RunRecord(**raw)
    except TypeError as err:
        raise RecordError(f"run record {path} has unexpected fields: {err}") from err


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _write_points_csv(path, rows):
    with open(path, "w") as fh:
        fh.write("d_eps,value,status\n")
        for d, value, status in rows:
            value_txt = _fmt(value) if value is not None else "nan"
            fh.write(f"{_fmt(d)},{value_txt},{status}\n")


def _write_details_csv(path, d_values, extras_list):
    keys = sorted({k for ex in extras_list if ex for k in ex})
    if not keys:
        return False
    with open(path, "w") as fh:
        fh.write("d_eps," + ",".join(keys) + "\n")
        for d, ex in zip(d_values, extras_list):
            ex = ex or {}
            fh.write(_fmt(d) + "," + ",".join(_fmt(ex.get(k, float("nan"))) for k in keys) + "\n")
    return True


def _write_fit_csv(path, fit: RateFit | None):
    with open(path, "w") as fh:
        fh.write("slope,intercept,r_squared,predicted_slope\n")
        if fit is None:
            fh.write("nan,nan,nan,nan\n")
        else:
            fh.write(",".join(_fmt(x) for x in
                              (fit.slope, fit.intercept, fit.r_squared, fit.predicted_slope)) + "\n")


def _utc_now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def run_sweep(cfg: SweepConfig, out_root=None, jobs: int = 1):
    """Measure the configured quantity at every d, fit, and persist a run.

    Returns (RateFit | None, RunRecord); the fit is None when every surviving
    measurement is zero at tolerance (note says so) and a FitError is raised
    when fewer than 4 points survive outright failures.
    """
    predicted, prepare, measure = QUANTITIES[cfg.quantity]
    record = RunRecord(
        quantity=cfg.quantity,
        config={"quantity": cfg.quantity, "d_eps_values": list(cfg.d_eps_values),
                "params": cfg.params, "seed": cfg.seed},
        version=__version__,
        seed=cfg.seed,
        started=_utc_now(),
        finished="",
        status="running",
        paths={},
        metrics={},
    )
    run_dir = None
    if out_root is not None:
        stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%S%f")
        run_dir = os.path.join(str(out_root), f"{stamp}-{cfg.quantity}")
        os.makedirs(run_dir, exist_ok=True)
        paths = {
            "points": os.path.join(run_dir, "points.csv"),
            "fit": os.path.join(run_dir, "fit.csv"),
            "plot": os.path.join(run_dir, "plot.dat"),
            "plot_loglog": os.path.join(run_dir, "plot_loglog.dat"),
            "config": os.path.join(run_dir, "config.json"),
            "record": os.path.join(run_dir, "record.json"),
        }
        record.paths = {k: os.path.abspath(v) for k, v in paths.items()}
        with open(paths["config"], "w") as fh:
            json.dump(record.config, fh, indent=2, sort_keys=True)
            fh.write("\n")
        persist_run(record, paths["record"])

    try:
        ctx = prepare(cfg.params, cfg.seed)
        point_seeds = [int(s.generate_state(1)[0]) for s in
                       np.random.SeedSequence(cfg.seed).spawn(len(cfg.d_eps_values))]

        def one(index):
            d = cfg.d_eps_values[index]
            try:
                value, extras = measure(d, ctx, point_seeds[index])
                return index, float(value), extras, "ok"
            except Exception as err:  # recorded, excluded from the fit
                return index, None, None, f"failed: {type(err).__name__}: {err}"

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(one, range(len(cfg.d_eps_values))))
        else:
            results = [one(i) for i in range(len(cfg.d_eps_values))]
        results.sort(key=lambda item: item[0])

        rows = []
        extras_list = []
        fit_d, fit_v = [], []
        zeros = 0
        for index, value, extras, status in results:
            d = cfg.d_eps_values[index]
            extras_list.append(extras)
            if status != "ok":
                rows.append((d, None, status.replace(",", ";")))
                continue
            if value <= ZERO_FLOOR:
                zeros += 1
                rows.append((d, value, "zero"))
            else:
                rows.append((d, value, "ok"))
                fit_d.append(d)
                fit_v.append(value)

        surviving = len(fit_d) + zeros
        if surviving < 4:
            raise FitError(f"only {surviving} measurements survived; need at least 4")
        if not fit_d:
            fit = None
            note = "identically zero; bound trivially satisfied"
        elif len(fit_d) >= 4:
            fit = loglog_fit(fit_d, fit_v, predicted_slope=predicted, excluded=zeros)
            note = fit.note
        else:
            fit = None
            note = f"only {len(fit_d)} nonzero points; {zeros} zero at tolerance"

        if run_dir is not None:
            _write_points_csv(paths["points"], rows)
            _write_fit_csv(paths["fit"], fit)
            with open(paths["plot"], "w") as fh:
                for d, v in zip(fit_d, fit_v):
                    fh.write(f"{_fmt(d)} {_fmt(v)}\n")
            with open(paths["plot_loglog"], "w") as fh:
                for d, v in zip(fit_d, fit_v):
                    fh.write(f"{_fmt(np.log10(d))} {_fmt(np.log10(v))}\n")
            if _write_details_csv(os.path.join(run_dir, "details.csv"),
                                  cfg.d_eps_values, extras_list):
                record.paths["details"] = os.path.abspath(os.path.join(run_dir, "details.csv"))
    except BaseException:
        if run_dir is not None:
            record.status = "incomplete"
            record.finished = _utc_now()
            persist_run(record, paths["record"])
        raise

    record.status = "complete"
    record.finished = _utc_now()
    record.metrics = {
        "n_points": len(cfg.d_eps_values),
        "n_ok": len(fit_d),
        "n_zero": zeros,
        "n_failed": len(cfg.d_eps_values) - surviving,
        "note": note,
        "values": [v for _, v, _, s in results if s == "ok"],
        "slope": fit.slope if fit else None,
        "intercept": fit.intercept if fit else None,
        "r_squared": fit.r_squared if fit else None,
        "predicted_slope": predicted if fit else None,
    }
    if run_dir is not None:
        persist_run(record, record.paths["record"])
    return fit, record
