"""Equilibria, unstable manifolds, attractor clouds, and manifold estimates.

For the limiting ODE v' + v = F(v) the global attractor is the union of the
unstable manifolds of its (finitely many, hyperbolic) equilibria, so an
ODE attractor cloud is built by damped Newton root finding plus shooting
along unstable eigendirections.  The PDE attractor cloud combines

* PDE equilibria refined in coefficient space (every constant lift of an
  ODE equilibrium is one exactly, since the mean-free forcing vanishes on
  constants),
* unstable-manifold arcs shot with the exponential integrator, and
* long-time tail states of perturbed initial data, which carry the residual
  mean-free content that homogenization is squeezing out.

Arc sampling between the ODE and PDE clouds is synchronized (same offsets,
same sampling times), so cloud-to-cloud Hausdorff distances measure the
PDE-vs-ODE deviation rather than mesh placement artifacts.

Distances are Hausdorff distances in the energy norm; ODE points are lifted
to constant fields first.  All clouds carry a declared resolution (their max
nearest-neighbor spacing) so every distance statement can be read against
the sampling accuracy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial.distance import cdist

from .dynamics import (
    EtdStepper,
    Nonlinearity,
    compute_M_and_mu,
    evolve_ode,
    evolve_pde,
)
from .spectral import (
    CosineBasis,
    DiffusionSpec,
    EnergyNorm,
    SpectralField,
    constant_field,
    energy_norm,
    l2_norm,
)

__all__ = [
    "EquilibriumPoint",
    "AttractorCloud",
    "GraphEstimate",
    "HausdorffResult",
    "NoEquilibriaError",
    "EscapeError",
    "SpectralGapError",
    "ContractionError",
    "find_equilibria_ode",
    "hyperbolicity_check",
    "unstable_manifold_ode",
    "attractor_ode",
    "attractor_ode_longtime",
    "find_equilibria_pde",
    "attractor_pde",
    "hausdorff_distance",
    "manifold_deflection",
    "graph_iteration",
    "invariance_probe",
    "save_cloud",
    "load_cloud",
]


class NoEquilibriaError(RuntimeError):
    """No equilibrium found; contradicts dissipativity of -u + F(u)."""


class EscapeError(RuntimeError):
    """An orbit left the absorbing box; contradicts dissipativity."""


class SpectralGapError(RuntimeError):
    """Spectral-gap precondition for the graph iteration fails."""


class ContractionError(RuntimeError):
    """Graph iteration failed to contract."""


HYPERBOLICITY_TOL = 1e-8


@dataclass(frozen=True)
class EquilibriumPoint:
    """A root of the steady-state equation with its linearization spectrum.

    `location` is a vector (ODE) or a SpectralField (PDE); `eigenvalues` are
    those of the flow linearization, so stability means all real parts
    negative.
    """

    location: object
    eigenvalues: np.ndarray
    residual: float
    kind: str  # "ode" | "pde"

    @property
    def unstable_count(self) -> int:
        return int(np.sum(self.eigenvalues.real > HYPERBOLICITY_TOL))

    @property
    def stability(self) -> str:
        if np.min(np.abs(self.eigenvalues.real)) <= HYPERBOLICITY_TOL:
            return "nonhyperbolic"
        if self.unstable_count == 0:
            return "stable"
        return f"unstable({self.unstable_count})"

    def vector(self) -> np.ndarray:
        if self.kind == "ode":
            return np.asarray(self.location, dtype=float)
        return self.location.coeffs[:, 0].copy()


def hyperbolicity_check(eq: EquilibriumPoint, tol: float = HYPERBOLICITY_TOL) -> bool:
    """True iff the linearization spectrum stays away from the imaginary axis."""
    return bool(np.min(np.abs(eq.eigenvalues.real)) > tol)


def _damped_newton(residual, jacobian, x0, tol=1e-12, max_iter=100):
    """Newton with backtracking line search; returns (root, |residual|) or None.

    Converged roots are polished with a few full Newton steps so the final
    residual sits at machine level rather than just below tol; downstream
    manifold shooting amplifies any equilibrium offset exponentially.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = residual(x)
    size = np.linalg.norm(r)
    for _ in range(max_iter):
        if size < tol:
            break
        try:
            step = np.linalg.solve(jacobian(x), -r)
        except np.linalg.LinAlgError:
            return None
        alpha = 1.0
        while alpha > 2.0**-30:
            trial = x + alpha * step
            r_trial = residual(trial)
            size_trial = np.linalg.norm(r_trial)
            if size_trial < (1.0 - 1e-4 * alpha) * size or size_trial < tol:
                x, r, size = trial, r_trial, size_trial
                break
            alpha *= 0.5
        else:
            return None
    if size >= tol:
        return None
    for _ in range(3):
        if size == 0.0:
            break
        try:
            trial = x + np.linalg.solve(jacobian(x), -r)
        except np.linalg.LinAlgError:
            break
        r_trial = residual(trial)
        size_trial = np.linalg.norm(r_trial)
        if size_trial >= size:
            break
        x, r, size = trial, r_trial, size_trial
    return x, size


def find_equilibria_ode(F: Nonlinearity, box: float, grid_density: int = 11,
                        tol: float = 1e-12, merge_tol: float = 1e-8,
                        components: int = 1) -> list[EquilibriumPoint]:
    """Damped Newton on -u + F(u) = 0 from every node of a grid over [-box, box]^n.

    Non-convergent seeds are dropped (their basins are covered by neighbors);
    duplicates merge at `merge_tol`.  Finding nothing at all is an error.
    """
    axes = [np.linspace(-box, box, grid_density)] * components
    seeds = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, components)

    def residual(u):
        return -u + F(u)

    def jacobian(u):
        return -np.eye(components) + F.jac(u)

    roots = []
    for seed in seeds:
        hit = _damped_newton(residual, jacobian, seed, tol=tol)
        if hit is None:
            continue
        root, size = hit
        if np.max(np.abs(root)) > box + merge_tol:
            continue  # outside the search box; not a root of a dissipative field
        if not any(np.linalg.norm(root - r) < merge_tol for r, _ in roots):
            roots.append((root, size))
    if not roots:
        raise NoEquilibriaError("no equilibrium found in the search box")
    out = []
    for root, size in sorted(roots, key=lambda item: tuple(item[0])):
        eigs = np.linalg.eigvals(-np.eye(components) + F.jac(root))
        out.append(EquilibriumPoint(location=root, eigenvalues=eigs, residual=size, kind="ode"))
    return out


def _clean_direction(vec: np.ndarray) -> np.ndarray:
    """Normalize an eigendirection, zeroing roundoff-level entries.

    Shooting amplifies the direction by e^{lambda t} over tens of time units,
    so 1e-17 eigensolver noise in structurally-zero entries would grow into
    visible arc perturbations (and break bitwise agreement of arcs across
    diffusion strengths).
    """
    out = vec.copy()
    out[np.abs(out) < 1e-12 * np.max(np.abs(out))] = 0.0
    return out / np.linalg.norm(out)


def _rk4_step(v, h, rhs):
    k1 = rhs(v)
    k2 = rhs(v + 0.5 * h * k1)
    k3 = rhs(v + 0.5 * h * k2)
    k4 = rhs(v + h * k3)
    return v + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def unstable_manifold_ode(eq: EquilibriumPoint, F: Nonlinearity, others=(),
                          offset: float = 1e-5, dt: float = 1e-3,
                          sample_dt: float = 1e-2, stop_ball: float = 1e-6,
                          horizon: float = 60.0, box: float | None = None) -> np.ndarray:
    """Shoot the 1-d unstable directions of a hyperbolic equilibrium.

    Integrates v' = -v + F(v) from eq +- offset*xi along each unstable
    eigendirection xi, sampling every `sample_dt` until the orbit enters a
    `stop_ball` of another equilibrium or the horizon runs out.  Orbits
    escaping the absorbing box abort the computation.
    """
    if eq.unstable_count == 0:
        raise ValueError("equilibrium has no unstable direction")
    if not hyperbolicity_check(eq):
        raise ValueError("equilibrium is not hyperbolic")
    base = eq.vector()
    n = base.size
    jac = -np.eye(n) + F.jac(base)
    eigvals, eigvecs = np.linalg.eig(jac)
    directions = []
    for lam, vec in zip(eigvals, eigvecs.T):
        if lam.real > HYPERBOLICITY_TOL:
            if abs(lam.imag) > HYPERBOLICITY_TOL:
                raise NotImplementedError("complex unstable pairs are not supported")
            directions.append(_clean_direction(vec.real))
    if box is None:
        box = (F.bound if F.bound else 10.0) + 2.0
    targets = [o.vector() for o in others]

    def rhs(u):
        return -u + F(u)

    stride = max(1, round(sample_dt / dt))
    points = []
    for direction in directions:
        for sign in (+1.0, -1.0):
            v = base + sign * offset * direction
            t = 0.0
            points.append(v.copy())
            step_count = 0
            while t < horizon:
                v = _rk4_step(v, dt, rhs)
                t += dt
                step_count += 1
                if step_count % stride:
                    continue
                if np.linalg.norm(v) > box:
                    raise EscapeError(f"manifold orbit escaped |v| <= {box} at t={t:.3g}")
                points.append(v.copy())
                if any(np.linalg.norm(v - tgt) < stop_ball for tgt in targets):
                    break
    return np.array(points)


@dataclass
class AttractorCloud:
    """Finite sample of an attractor with provenance and sampling metadata.

    `points` has shape (m, n) for ODE clouds and (m, n, K+1) for PDE clouds.
    The declared resolution is the maximum nearest-neighbor spacing in the
    cloud's own norm; every distance statement should be read against it.
    """

    points: np.ndarray
    kind: str  # "ode" | "pde"
    provenance: list[str]
    meta: dict = field(default_factory=dict)
    basis: CosineBasis | None = None
    diffusion: DiffusionSpec | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.shape[0] == 0:
            raise ValueError("attractor cloud must be nonempty")
        if self.kind == "pde" and (self.basis is None or self.diffusion is None):
            raise ValueError("pde clouds need basis and diffusion handles")

    def __len__(self) -> int:
        return self.points.shape[0]

    def embedded(self, E: DiffusionSpec | None = None, basis: CosineBasis | None = None) -> np.ndarray:
        """Points as rows in the weighted-coefficient (energy) embedding."""
        if self.kind == "ode":
            if basis is None:
                return self.points.reshape(len(self), -1)
            lifted = np.zeros((len(self), self.points.shape[1], basis.mode_count + 1))
            lifted[:, :, 0] = self.points
            coeffs = lifted
        else:
            coeffs = self.points
            basis = self.basis if basis is None else basis
        E = self.diffusion if E is None else E
        return EnergyNorm(E, basis).embed(coeffs)

    def resolution(self) -> float:
        """Max nearest-neighbor spacing (energy norm for PDE, Euclidean for ODE).

        Never reported below the builder's quantization floor (e.g. the dedup
        cell of long-time sampling), which bounds the cloud's accuracy even
        when the surviving points happen to sit close together.
        """
        floor = float(self.meta.get("resolution_floor", 0.0))
        emb = self.embedded()
        if len(self) < 2:
            return floor
        worst = 0.0
        for start in range(0, len(self), 2048):
            block = emb[start:start + 2048]
            d = cdist(block, emb)
            for i in range(block.shape[0]):
                d[i, start + i] = np.inf
            worst = max(worst, float(np.min(d, axis=1).max()))
        return max(worst, floor)


def attractor_ode(F: Nonlinearity, box: float | None = None, grid_density: int = 11,
                  components: int = 1, offset: float = 1e-5, dt: float = 1e-3,
                  sample_dt: float = 1e-2, stop_ball: float = 1e-6,
                  horizon: float = 60.0) -> AttractorCloud:
    """ODE attractor as the union of equilibria and unstable-manifold arcs."""
    if box is None:
        box = (F.bound if F.bound else 10.0) + 1.0
    equilibria = find_equilibria_ode(F, box, grid_density, components=components)
    for eq in equilibria:
        if not hyperbolicity_check(eq):
            raise ValueError(f"non-hyperbolic equilibrium at {eq.vector()}; manifold union undefined")
    points = [eq.vector() for eq in equilibria]
    provenance = ["equilibrium"] * len(points)
    for eq in equilibria:
        if eq.unstable_count == 0:
            continue
        arc = unstable_manifold_ode(eq, F, others=[o for o in equilibria if o is not eq],
                                    offset=offset, dt=dt, sample_dt=sample_dt,
                                    stop_ball=stop_ball, horizon=horizon, box=box + 1.0)
        points.extend(arc)
        provenance.extend(["manifold_union"] * len(arc))
    meta = {"F": F.name, "params": F.params, "sample_dt": sample_dt, "offset": offset}
    return AttractorCloud(np.array(points), "ode", provenance, meta)


def attractor_ode_longtime(F: Nonlinearity, n_seeds: int = 2000, box: float | None = None,
                           components: int = 1, t_burn: float = 4.0, t_end: float = 20.0,
                           dt: float = 1e-3, sample_dt: float = 1e-2,
                           dedup_cell: float = 1.25e-3, seed: int = 0,
                           scale_decades: float = 8.0) -> AttractorCloud:
    """Long-time sampling: post-burn-in orbit segments of many seeds.

    Orbits are integrated in lockstep; states for t in [t_burn, t_end] are
    collected every `sample_dt` and deduplicated on a grid of size
    `dedup_cell` (first occupant wins), which bounds the cloud size by the
    attractor volume instead of seeds x samples.

    Seed magnitudes are geometric over `scale_decades` decades below `box`
    rather than uniform: uniform seeds all escape the neighborhood of an
    unstable equilibrium before the burn-in ends, leaving the slow middle of
    the attractor uncovered, while geometric magnitudes put some orbit in
    every region at every post-burn-in time.
    """
    if box is None:
        box = (F.bound if F.bound else 10.0) + 1.0
    if components == 1:
        half = n_seeds // 2
        mags = box * 10.0 ** np.linspace(0.0, -scale_decades, half)
        parts = [mags, -mags]
        if n_seeds % 2:
            parts.append(np.zeros(1))
        v = np.concatenate(parts)[None, :].copy()
    else:
        rng = np.random.default_rng(seed)
        direction = rng.standard_normal((components, n_seeds))
        direction /= np.sqrt(np.sum(direction**2, axis=0))
        radius = box * 10.0 ** rng.uniform(-scale_decades, 0.0, size=n_seeds)
        v = direction * radius
    stride = max(1, round(sample_dt / dt))

    def rhs(u):
        return -u + F(u)

    collected = []
    t = 0.0
    step = 0
    while t < t_end - 1e-12:
        v = _rk4_step(v, dt, rhs)
        t += dt
        step += 1
        if t >= t_burn and step % stride == 0:
            collected.append(v.T.copy())
    points = np.concatenate(collected, axis=0)
    cells = np.round(points / dedup_cell).astype(np.int64)
    _, keep = np.unique(cells, axis=0, return_index=True)
    points = points[np.sort(keep)]
    meta = {"F": F.name, "params": F.params, "n_seeds": n_seeds, "t_burn": t_burn,
            "t_end": t_end, "dedup_cell": dedup_cell,
            "resolution_floor": dedup_cell * np.sqrt(components)}
    return AttractorCloud(points, "ode", ["long_time_sampling"] * len(points), meta)


def _pde_residual_jacobian(E: DiffusionSpec, basis: CosineBasis, F: Nonlinearity):
    gains = E.gains(basis)
    phi = basis.synthesis_matrix()
    G = basis.quad_points
    n = E.components
    K1 = basis.mode_count + 1

    def residual(flat):
        c = flat.reshape(n, K1)
        fhat = F(c @ phi) @ phi.T / G
        return (gains * c - fhat).ravel()

    def jacobian(flat):
        c = flat.reshape(n, K1)
        jvals = F.jac(c @ phi)  # (n, n, G)
        full = np.zeros((n * K1, n * K1))
        for i in range(n):
            for j in range(n):
                block = (phi * jvals[i, j][None, :]) @ phi.T / G
                full[i * K1:(i + 1) * K1, j * K1:(j + 1) * K1] = -block
        full[np.arange(n * K1), np.arange(n * K1)] += gains.ravel()
        return full

    return residual, jacobian


def pde_linearization_spectrum(u: SpectralField, E: DiffusionSpec, F: Nonlinearity,
                               leading_modes: int = 50) -> np.ndarray:
    """Eigenvalues of the flow linearization -A + F'(u) at a state u.

    A Galerkin matrix on the leading modes is diagonalized exactly; the far
    tail is diagonal-dominated and appended analytically as
    -(eps_i lam_k + 1) + mean(F'_ii).
    """
    basis = u.basis
    n = u.components
    K1 = basis.mode_count + 1
    m = min(leading_modes, K1)
    phi = basis.synthesis_matrix()
    G = basis.quad_points
    jvals = F.jac(u.basis.to_grid(u.coeffs))
    gains = E.gains(basis)
    head = np.zeros((n * m, n * m))
    for i in range(n):
        for j in range(n):
            block = (phi[:m] * jvals[i, j][None, :]) @ phi[:m].T / G
            head[i * m:(i + 1) * m, j * m:(j + 1) * m] = block
    head -= np.diag(gains[:, :m].ravel())
    eigs = np.linalg.eigvals(head)
    tail = []
    for i in range(n):
        diag_avg = float(np.mean(jvals[i, i]))
        tail.extend(-gains[i, m:] + diag_avg)
    return np.concatenate([eigs, np.array(tail, dtype=complex)])


def find_equilibria_pde(E: DiffusionSpec, F: Nonlinearity, seeds: list[SpectralField],
                        tol: float = 1e-12, merge_tol: float = 1e-8,
                        leading_modes: int = 50) -> list[EquilibriumPoint]:
    """Newton on A u = F(u) in coefficient space from the given seed fields.

    The diagonal operator preconditions the linear solves (the system is
    scaled by 1/gains).  Seeds that fail to converge are reported by index in
    the returned list's companion `failures` attribute-free form: they are
    simply skipped; callers who care pass better seeds.
    """
    if not seeds:
        raise ValueError("need at least one seed field")
    basis = seeds[0].basis
    residual, jacobian = _pde_residual_jacobian(E, basis, F)
    inv_gains = 1.0 / E.gains(basis).ravel()

    def residual_pc(flat):
        return inv_gains * residual(flat)

    def jacobian_pc(flat):
        return inv_gains[:, None] * jacobian(flat)

    roots = []
    for seed in seeds:
        hit = _damped_newton(residual_pc, jacobian_pc, seed.coeffs.ravel(), tol=tol, max_iter=60)
        if hit is None:
            continue
        root, _ = hit
        if not any(np.linalg.norm(root - r) < merge_tol for r in roots):
            roots.append(root)
    if not roots:
        raise NoEquilibriaError("no PDE equilibrium found from the given seeds")
    out = []
    n = E.components
    K1 = basis.mode_count + 1
    for root in sorted(roots, key=lambda r: tuple(np.round(r, 12))):
        u = SpectralField(root.reshape(n, K1), basis)
        res = float(np.linalg.norm(residual(root)))
        eigs = pde_linearization_spectrum(u, E, F, leading_modes)
        out.append(EquilibriumPoint(location=u, eigenvalues=eigs, residual=res, kind="pde"))
    return out


def _pde_unstable_directions(eq: EquilibriumPoint, E: DiffusionSpec, F: Nonlinearity,
                             leading_modes: int = 50) -> list[np.ndarray]:
    u = eq.location
    basis = u.basis
    n = u.components
    K1 = basis.mode_count + 1
    m = min(leading_modes, K1)
    phi = basis.synthesis_matrix()
    G = basis.quad_points
    jvals = F.jac(basis.to_grid(u.coeffs))
    gains = E.gains(basis)
    head = np.zeros((n * m, n * m))
    for i in range(n):
        for j in range(n):
            block = (phi[:m] * jvals[i, j][None, :]) @ phi[:m].T / G
            head[i * m:(i + 1) * m, j * m:(j + 1) * m] = block
    head -= np.diag(gains[:, :m].ravel())
    eigvals, eigvecs = np.linalg.eig(head)
    directions = []
    for lam, vec in zip(eigvals, eigvecs.T):
        if lam.real > HYPERBOLICITY_TOL:
            if abs(lam.imag) > HYPERBOLICITY_TOL:
                raise NotImplementedError("complex unstable pairs are not supported")
            full = np.zeros((n, K1))
            full[:, :m] = _clean_direction(vec.real).reshape(n, m)
            directions.append(full)
    return directions


def _pde_manifold_arc(eq: EquilibriumPoint, E: DiffusionSpec, F: Nonlinearity,
                      others, offset: float, dt: float, sample_dt: float,
                      stop_ball: float, horizon: float) -> np.ndarray:
    basis = eq.location.basis
    stepper = EtdStepper(basis, E, F, dt)
    stride = max(1, round(sample_dt / dt))
    targets = [o.location.coeffs for o in others]
    points = []
    for direction in _pde_unstable_directions(eq, E, F):
        for sign in (+1.0, -1.0):
            c = eq.location.coeffs + sign * offset * direction
            t = 0.0
            points.append(c.copy())
            step_count = 0
            while t < horizon:
                c = stepper.step(c, t)
                t += dt
                step_count += 1
                if step_count % stride:
                    continue
                points.append(c.copy())
                if any(np.linalg.norm(c - tgt) < stop_ball for tgt in targets):
                    break
    return np.array(points) if points else np.zeros((0,) + eq.location.coeffs.shape)


def attractor_pde(E: DiffusionSpec, F: Nonlinearity, basis: CosineBasis,
                  ode_cloud: AttractorCloud | None = None,
                  n_tails: int = 24, w_amplitude: float = 0.1, w_modes: int = 8,
                  t_trans: float = 1.0, dt: float = 1e-3, sample_dt: float = 1e-2,
                  offset: float = 1e-5, stop_ball: float = 1e-6, horizon: float = 60.0,
                  seed: int = 0, grid_density: int = 11) -> AttractorCloud:
    """PDE attractor cloud: equilibria + shot unstable manifolds + tail states.

    Tail initial conditions are ODE-attractor points (already on the limit
    attractor) lifted to constants and perturbed by a mean-free field with
    L2 norm `w_amplitude`; evolving them for `t_trans` leaves exactly the
    mean-free content the homogenization estimates control.  `t_trans` and
    `sample_dt` should stay commensurate so tails stay synchronized with the
    arc sampling of the reference ODE cloud.
    """
    if ode_cloud is None:
        ode_cloud = attractor_ode(F, components=E.components, offset=offset,
                                  dt=dt, sample_dt=sample_dt, stop_ball=stop_ball,
                                  horizon=horizon, grid_density=grid_density)
    ode_eqs = find_equilibria_ode(F, (F.bound if F.bound else 10.0) + 1.0,
                                  grid_density=grid_density, components=E.components)
    seeds = [constant_field(eq.vector(), basis) for eq in ode_eqs]
    equilibria = find_equilibria_pde(E, F, seeds)

    points = [eq.location.coeffs for eq in equilibria]
    provenance = ["equilibrium"] * len(points)

    for eq in equilibria:
        if eq.unstable_count == 0 or not hyperbolicity_check(eq):
            continue
        arc = _pde_manifold_arc(eq, E, F, [o for o in equilibria if o is not eq],
                                offset, dt, sample_dt, stop_ball, horizon)
        points.extend(arc)
        provenance.extend(["manifold_union"] * len(arc))

    rng = np.random.default_rng(seed)
    base_points = ode_cloud.points
    if len(base_points) and t_trans > 0 and n_tails > 0:
        pick = np.linspace(0, len(base_points) - 1, n_tails).astype(int)
        stepper = EtdStepper(basis, E, F, dt)
        steps = int(np.ceil(t_trans / dt - 1e-12))
        kmax = min(w_modes, basis.mode_count)
        for idx in pick:
            c = np.zeros((E.components, basis.mode_count + 1))
            c[:, 0] = base_points[idx]
            w = np.zeros_like(c)
            w[:, 1:kmax + 1] = rng.standard_normal((E.components, kmax))
            w *= w_amplitude / np.sqrt(np.sum(w**2))
            c = c + w
            t = 0.0
            for _ in range(steps):
                c = stepper.step(c, t)
                t += dt
            points.append(c.copy())
            provenance.append("long_time_sampling")

    meta = {"F": F.name, "params": F.params, "d_eps": E.d_eps, "K": basis.mode_count,
            "t_trans": t_trans, "w_amplitude": w_amplitude, "n_tails": n_tails,
            "sample_dt": sample_dt}
    return AttractorCloud(np.array(points), "pde", provenance, meta, basis=basis, diffusion=E)


@dataclass(frozen=True)
class HausdorffResult:
    sym: float
    a_to_b: float
    b_to_a: float
    resolution_a: float
    resolution_b: float


def _one_sided(emb_a: np.ndarray, emb_b: np.ndarray) -> float:
    """max over rows of emb_a of the min distance into emb_b, chunked."""
    worst = 0.0
    for start in range(0, emb_a.shape[0], 2048):
        block = emb_a[start:start + 2048]
        worst = max(worst, float(cdist(block, emb_b).min(axis=1).max()))
    return worst


def hausdorff_distance(cloud_a: AttractorCloud, cloud_b: AttractorCloud,
                       E: DiffusionSpec, basis: CosineBasis) -> HausdorffResult:
    """Both one-sided deviations and their max, in the energy norm.

    ODE clouds are lifted to constant fields first (constants have a pure
    L2 norm, so ODE-to-ODE distances reduce to Euclidean ones).
    """
    emb_a = cloud_a.embedded(E, basis)
    emb_b = cloud_b.embedded(E, basis)
    if emb_a.shape[1] != emb_b.shape[1]:
        raise ValueError("clouds do not embed into a common space")
    ab = _one_sided(emb_a, emb_b)
    ba = _one_sided(emb_b, emb_a)
    return HausdorffResult(sym=max(ab, ba), a_to_b=ab, b_to_a=ba,
                           resolution_a=cloud_a.resolution(),
                           resolution_b=cloud_b.resolution())


def manifold_deflection(cloud: AttractorCloud, E: DiffusionSpec | None = None) -> float:
    """sup over cloud points of the mean-free energy norm |(I-P)u|.

    A lower proxy for the graph sup-norm of the invariant manifold,
    restricted to the attractor sample.
    """
    if cloud.kind != "pde":
        raise ValueError("deflection needs a PDE cloud")
    E = cloud.diffusion if E is None else E
    gains = E.gains(cloud.basis)
    wc = cloud.points.copy()
    wc[:, :, 0] = 0.0
    return float(np.sqrt(np.max(np.sum(gains[None] * wc**2, axis=(1, 2)))))


def invariance_probe(cloud: AttractorCloud, F: Nonlinearity, T: float = 1.0,
                     n_probe: int = 40, seed: int = 0, dt: float = 1e-3) -> float:
    """Evolve sampled cloud points for time T; max distance back to the cloud."""
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(cloud), size=min(n_probe, len(cloud)), replace=False)
    emb_cloud = cloud.embedded()
    if cloud.kind == "ode":
        batch = cloud.points[idx].T  # (n, m)
        _, states = evolve_ode(batch, F, T=T, dt=dt, stride=10**9)
        moved = states[-1].T
        emb_moved = moved.reshape(moved.shape[0], -1)
    else:
        stepper = EtdStepper(cloud.basis, cloud.diffusion, F, dt)
        steps = int(np.ceil(T / dt - 1e-12))
        moved = []
        for i in idx:
            c = cloud.points[i].copy()
            t = 0.0
            for _ in range(steps):
                c = stepper.step(c, t)
                t += dt
            moved.append(c)
        emb_moved = EnergyNorm(cloud.diffusion, cloud.basis).embed(np.array(moved))
    return _one_sided(emb_moved, emb_cloud)


def save_cloud(cloud: AttractorCloud, csv_path) -> None:
    """CSV with one row per point (provenance + coefficients) plus a JSON sidecar."""
    csv_path = str(csv_path)
    flat = cloud.points.reshape(len(cloud), -1)
    with open(csv_path, "w") as fh:
        cols = ",".join(f"c{j}" for j in range(flat.shape[1]))
        fh.write(f"provenance,{cols}\n")
        for prov, row in zip(cloud.provenance, flat):
            fh.write(prov + "," + ",".join(f"{x:.17g}" for x in row) + "\n")
    sidecar = {
        "kind": cloud.kind,
        "shape": list(cloud.points.shape),
        "meta": cloud.meta,
        "resolution": cloud.resolution(),
        "basis_modes": cloud.basis.mode_count if cloud.basis else None,
        "eps": list(cloud.diffusion.eps) if cloud.diffusion else None,
    }
    with open(csv_path + ".meta.json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)


def load_cloud(csv_path, basis: CosineBasis | None = None,
               E: DiffusionSpec | None = None) -> AttractorCloud:
    csv_path = str(csv_path)
    with open(csv_path + ".meta.json") as fh:
        sidecar = json.load(fh)
    provenance = []
    rows = []
    with open(csv_path) as fh:
        next(fh)
        for line in fh:
            parts = line.rstrip("\n").split(",")
            provenance.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    points = np.array(rows).reshape([len(rows)] + sidecar["shape"][1:])
    return AttractorCloud(points, sidecar["kind"], provenance, sidecar["meta"],
                          basis=basis, diffusion=E)


@dataclass
class GraphEstimate:
    """Grid-restricted graph of the invariant manifold over the constants."""

    v_axes: list[np.ndarray]
    v_grid: np.ndarray          # (m, n) flattened grid nodes
    w_coeffs: np.ndarray        # (m, n, K+1), mode 0 identically zero
    sup_norm: float
    contraction_factors: list[float]
    clamped: int
    horizon: float
    iterations: int


def graph_iteration(E: DiffusionSpec, F: Nonlinearity, basis: CosineBasis,
                    v_axes=None, iters: int = 8, dt: float = 1e-3,
                    mu: float | None = None, horizon: float | None = None,
                    initial: np.ndarray | None = None, box: float | None = None,
                    grid_points: int = 41, tol: float = 1e-14) -> GraphEstimate:
    """Fixed-point iteration of the manifold graph map on a grid of base points.

    Each sweep integrates the base flow backward from every grid node over a
    finite horizon and accumulates the mean-free forcing against the exact
    decaying propagator (composite trapezoid in time); the graph values are
    grid-interpolated.  Requires the spectral gap d*lam_1 + 1 - mu > Lip(F);
    aborts if the iteration fails to contract.  Backward-flow states leaving
    the grid hull are clamped to it and counted.
    """
    n = E.components
    lam2 = E.second_eigenvalue(basis)
    if mu is None:
        mu = compute_M_and_mu(E, basis, horizon=10.0).mu
    gap = lam2 - mu - F.lip
    if gap <= 0:
        raise SpectralGapError(
            f"spectral-gap precondition fails: d*lam1+1 - mu = {lam2 - mu:.4g} "
            f"must exceed Lip(F) = {F.lip:.4g}")
    if horizon is None:
        horizon = 10.0 / gap
    if v_axes is None:
        if box is None:
            box = 1.2 * ((F.bound if F.bound else 10.0) + 0.5)
        v_axes = [np.linspace(-box, box, grid_points) for _ in range(n)]
    elif isinstance(v_axes, np.ndarray) and v_axes.ndim == 1:
        v_axes = [v_axes]
    grid_shape = tuple(len(ax) for ax in v_axes)
    mesh = np.meshgrid(*v_axes, indexing="ij")
    v_grid = np.stack([m.ravel() for m in mesh], axis=-1)  # (m, n)
    m = v_grid.shape[0]
    K1 = basis.mode_count + 1
    gains = E.gains(basis)
    phi = basis.synthesis_matrix()
    G = basis.quad_points
    lo = np.array([ax[0] for ax in v_axes])
    hi = np.array([ax[-1] for ax in v_axes])

    s = np.zeros((m, n, K1)) if initial is None else np.array(initial, dtype=float).copy()
    if s.shape != (m, n, K1):
        raise ValueError("initial graph values have the wrong shape")
    s[:, :, 0] = 0.0

    steps = int(np.ceil(horizon / dt))
    clamped_total = 0
    factors: list[float] = []
    prev_diff = None

    def sup_energy(values):
        return float(np.sqrt(np.max(np.sum(gains[None] * values**2, axis=(1, 2)))))

    for sweep in range(iters):
        interp = RegularGridInterpolator(
            tuple(v_axes), s.reshape(grid_shape + (n * K1,)),
            method="linear", bounds_error=False, fill_value=None)

        clamp_count = 0

        def graph_at(v):
            nonlocal clamp_count
            clipped = np.clip(v, lo[None, :], hi[None, :])
            clamp_count += int(np.sum(np.any(clipped != v, axis=1)))
            out = interp(clipped).reshape(-1, n, K1)
            out[:, :, 0] = 0.0
            return out

        def s_average(v):
            w = graph_at(v)
            vals = np.einsum("mnk,kg->mng", w, phi) + v[:, :, None]
            fv = F(np.moveaxis(vals, 1, 0))  # (n, m, G)
            return np.mean(np.moveaxis(fv, 0, 1), axis=2)

        def backward_rhs(v):
            return v - s_average(v)

        def q_term(v):
            w = graph_at(v)
            vals = np.einsum("mnk,kg->mng", w, phi) + v[:, :, None]
            fv = np.moveaxis(F(np.moveaxis(vals, 1, 0)), 0, 1)  # (m, n, G)
            coeffs = np.einsum("mng,kg->mnk", fv, phi) / G
            coeffs[:, :, 0] = 0.0
            return coeffs

        v = v_grid.copy()
        decay = np.ones((n, K1))
        accum = 0.5 * dt * q_term(v)  # trapezoid left end, tau = 0
        step_decay = np.exp(-gains * dt)
        for j in range(1, steps + 1):
            v = _rk4_step(v, dt, backward_rhs)
            decay = decay * step_decay
            weight = dt if j < steps else 0.5 * dt
            accum = accum + weight * decay[None] * q_term(v)
        accum[:, :, 0] = 0.0

        diff = sup_energy(accum - s)
        s = accum
        clamped_total += clamp_count
        if prev_diff is not None and prev_diff > 0:
            factor = diff / prev_diff
            factors.append(float(factor))
            if factor >= 1.0:
                raise ContractionError(
                    f"graph iteration is not contracting (factor {factor:.3g} at sweep {sweep})")
        prev_diff = diff
        if diff < tol:
            break

    return GraphEstimate(v_axes=list(v_axes), v_grid=v_grid, w_coeffs=s,
                         sup_norm=sup_energy(s), contraction_factors=factors,
                         clamped=clamped_total, horizon=horizon, iterations=sweep + 1)
