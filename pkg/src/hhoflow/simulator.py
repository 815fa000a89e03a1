"""Time loop coupling flow and transport, with stability monitoring."""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from .concentration import (
    DispersionModel,
    HalfStepResult,
    assemble_transport,
    crank_nicolson_extrapolate,
    energy_slack,
    coercivity_slack,
    solve_concentration_half_step,
    solve_transport_system,
)
from .darcy import DarcyField, build_darcy, conservation_residual
from .errors import ConfigError, InvalidArgumentError, InvariantViolationError, StabilityError
from .hho import HhoSpace, HybridField, field_lincomb
from .mesh import Mesh, build_cartesian_mesh, load_mesh, locate_cell
from .pressure import (
    PermeabilityField,
    PressureState,
    ViscosityModel,
    extrapolate_concentration,
    kappa_samples,
    pressure_rhs,
    solve_pressure,
)

STEPPERS = ("crank_nicolson", "bdf2", "bdf3", "bdf4")

# classical backward-differentiation coefficients, newest level first
_BDF_ALPHA = {
    1: (1.0, -1.0),
    2: (1.5, -2.0, 0.5),
    3: (11.0 / 6.0, -3.0, 1.5, -1.0 / 3.0),
    4: (25.0 / 12.0, -4.0, 3.0, -4.0 / 3.0, 0.25),
}


def extrapolation_weights(order: int) -> tuple[float, ...]:
    """Weights predicting the next level from ``order`` equispaced past levels."""
    if order < 1:
        raise InvalidArgumentError("extrapolation order must be at least 1")
    return tuple(-float((-1) ** (j + 1) * math.comb(order, j + 1)) for j in range(order))


@dataclass(frozen=True)
class WellSpec:
    """A point source or sink smeared over the cell that contains it."""

    location: tuple[float, float]
    rate: float
    kind: str

    def __post_init__(self):
        if self.kind not in ("injection", "production"):
            raise InvalidArgumentError(
                f"well kind must be 'injection' or 'production', got {self.kind!r}"
            )
        if not self.rate > 0.0:
            raise InvalidArgumentError("well rate must be positive")
        loc = tuple(float(v) for v in self.location)
        if len(loc) != 2:
            raise InvalidArgumentError("well location must be a 2D point")
        object.__setattr__(self, "location", loc)


@dataclass(frozen=True)
class MeshSpec:
    """Where the mesh comes from: a structured generator or a file on disk."""

    kind: str = "cartesian"
    nx: int = 32
    ny: int = 32
    bounds: tuple[float, float, float, float] = (0.0, 0.0, 1000.0, 1000.0)
    path: str | None = None

    def validate(self) -> list[str]:
        problems = []
        if self.kind == "cartesian":
            if self.nx < 1 or self.ny < 1:
                problems.append("mesh subdivisions must be at least 1 in each direction")
            x0, y0, x1, y1 = self.bounds
            if not (x1 > x0 and y1 > y0):
                problems.append("mesh bounds must describe a nonempty box")
        elif self.kind == "file":
            if not self.path:
                problems.append("mesh kind 'file' requires a path")
        else:
            problems.append(f"unknown mesh kind {self.kind!r}")
        return problems

    def build(self) -> Mesh:
        problems = self.validate()
        if problems:
            raise ConfigError(problems)
        if self.kind == "cartesian":
            return build_cartesian_mesh(self.nx, self.ny, self.bounds)
        return load_mesh(self.path)


@dataclass(frozen=True)
class SimulationConfig:
    """Everything one run needs: discretisation, physics, wells, and outputs."""

    mesh: MeshSpec
    k: int
    dt: float
    t_f: float
    permeability: PermeabilityField
    stepper: str = "crank_nicolson"
    wells: tuple[WellSpec, ...] = ()
    mu0: float = 1.0
    mobility_ratio: float = 41.0
    d_m: float = 0.0
    d_l: float = 50.0
    d_t: float = 5.0
    porosity: float = 0.1
    c_hat: float = 1.0
    c0: float = 0.0
    output_every: int = 0

    def validate(self) -> list[str]:
        """All problems found, not just the first."""
        problems = list(self.mesh.validate())
        if not 0 <= self.k <= 3:
            problems.append(f"polynomial degree k must be in 0..3, got {self.k}")
        if not self.dt > 0.0:
            problems.append("dt must be positive")
        if not self.t_f > 0.0:
            problems.append("t_f must be positive")
        if self.dt > 0.0 and self.t_f > 0.0:
            n = round(self.t_f / self.dt)
            if n < 1 or abs(n * self.dt - self.t_f) > 1e-9 * self.t_f:
                problems.append(
                    f"dt={self.dt} does not divide t_f={self.t_f} into whole steps"
                )
        if self.stepper not in STEPPERS:
            problems.append(
                f"stepper must be one of {', '.join(STEPPERS)}, got {self.stepper!r}"
            )
        inj = sum(w.rate for w in self.wells if w.kind == "injection")
        pro = sum(w.rate for w in self.wells if w.kind == "production")
        if abs(inj - pro) > 1e-12 * max(inj, pro, 1.0):
            problems.append(
                f"injection rate {inj} and production rate {pro} must balance"
            )
        if not self.mu0 > 0.0:
            problems.append("mu0 must be positive")
        if not self.mobility_ratio > 0.0:
            problems.append("mobility ratio must be positive")
        if self.d_m < 0.0:
            problems.append("molecular diffusion d_m must be nonnegative")
        if not self.d_l > 0.0 or not self.d_t > 0.0:
            problems.append("dispersion coefficients d_l and d_t must be positive")
        if not self.porosity > 0.0:
            problems.append("porosity must be positive")
        if self.output_every < 0:
            problems.append("output_every must be nonnegative")
        return problems

    @property
    def n_steps(self) -> int:
        return round(self.t_f / self.dt)


@dataclass(frozen=True)
class StepDiagnostics:
    """Residuals and stability indicators recorded after one time step."""

    step: int
    time: float
    pressure_residual: float
    transport_residual: float
    conservation: float
    antisymmetry: float
    mass_balance: float
    coercivity_slack: float
    coercivity_scale: float
    energy_slack: float | None
    energy_scale: float | None
    c_norm2: float
    pinned_faces: int
    wall_seconds: float


@dataclass
class RunReport:
    """Per-step record of a run; identical configs reproduce it bitwise
    except for the wall-clock fields."""

    stepper: str
    dt: float
    t_f: float
    n_steps: int
    stability_bound: float
    steps: list[StepDiagnostics] = dc_field(default_factory=list)
    recovery: list[tuple[float, float]] = dc_field(default_factory=list)


@dataclass
class RunResult:
    """Final states bundled with the report and any requested snapshots."""

    report: RunReport
    mesh: Mesh
    pspace: HhoSpace
    cspace: HhoSpace
    concentration: HybridField
    pressure: PressureState
    darcy: DarcyField
    snapshots: list[tuple[int, HybridField]]


def well_source(mesh: Mesh, wells: Sequence[WellSpec], kind: str) -> np.ndarray:
    """Piecewise-constant source density: rate / |T| on each well's cell."""
    if kind not in ("injection", "production"):
        raise InvalidArgumentError(
            f"well kind must be 'injection' or 'production', got {kind!r}"
        )
    q = np.zeros(mesh.n_cells)
    for w in wells:
        if w.kind != kind:
            continue
        cid = locate_cell(mesh, w.location)
        q[cid] += w.rate / mesh.cell_areas[cid]
    return q


def oil_recovery(space: HhoSpace, c: HybridField, porosity) -> float:
    """Swept fraction of the pore volume: integral of phi*c over integral of phi."""
    space.check_field(c)
    phi = np.broadcast_to(np.asarray(porosity, dtype=float), (space.n_cells,))
    swept = float(np.einsum("c,ci,ci->", phi, space.ivol[:, : space.ncb], c.cell))
    pore = float(phi @ space.mesh.cell_areas)
    return swept / pore


def stability_bound(
    space: HhoSpace, c0: HybridField, q_plus: np.ndarray, phi_star: float, t_f: float
) -> float:
    """A priori ceiling on the squared concentration norm for the whole run.

    The bound (e^2/phi_*^2)(||c0||^2 + 2 t_f^2 ||q+||^2) covers time-constant
    injection; phi_star is the lower porosity bound.
    """
    if not phi_star > 0.0:
        raise InvalidArgumentError("phi_star must be positive")
    q = np.asarray(q_plus, dtype=float)
    qnorm2 = float(q**2 @ space.mesh.cell_areas)
    return (math.e**2 / phi_star**2) * (space.l2_norm(c0) ** 2 + 2.0 * t_f**2 * qnorm2)


def bdf_step(
    space: HhoSpace,
    model: DispersionModel,
    darcy: DarcyField,
    history: Sequence[HybridField],
    order: int,
    dt: float,
    q_plus: np.ndarray,
    q_minus: np.ndarray,
    c_hat: float = 1.0,
    tol: float = 1e-9,
) -> HalfStepResult:
    """One backward-differentiation update of the concentration.

    ``history`` lists past levels newest first and must hold ``order`` of
    them; the Darcy samples belong to the evaluation time of the new level.
    Order 1 is implicit Euler, kept for equivalence checks against the
    midpoint scheme.
    """
    if order not in _BDF_ALPHA:
        raise InvalidArgumentError(f"BDF order must be in 1..4, got {order}")
    if len(history) < order:
        raise InvalidArgumentError(
            f"BDF{order} needs {order} history levels, got {len(history)}"
        )
    if dt <= 0.0:
        raise InvalidArgumentError("time step must be positive")
    alpha = _BDF_ALPHA[order]
    phi = model.cell_porosity(space.n_cells)
    reaction = alpha[0] * phi / dt + np.asarray(q_minus, dtype=float)
    total, adv, diff = assemble_transport(
        space, model, darcy.u_cell, darcy.u_face, darcy.flux_face, reaction
    )
    qp = np.asarray(q_plus, dtype=float)
    hist_vals = [space.cell_values(history[j]) for j in range(order)]
    vals = []
    for gi, g in enumerate(space.groups):
        v = np.broadcast_to((qp[g.cell_ids] * c_hat)[:, None], g.cq_w.shape).copy()
        for j in range(order):
            v -= (alpha[j + 1] / dt) * phi[g.cell_ids, None] * hist_vals[j][gi]
        vals.append(v)
    rhs_cell = space.cell_moments(vals)
    return solve_transport_system(space, total, adv, diff, rhs_cell, history[0], tol=tol)


def check_step_invariants(diag: StepDiagnostics, bound: float, tol: float = 1e-9) -> None:
    """Raise if any recorded residual or slack violates its guarantee."""
    problems = []
    if diag.conservation > tol:
        problems.append(f"flux balance identity residual {diag.conservation:.3e}")
    if diag.antisymmetry > tol:
        problems.append(f"interior flux antisymmetry residual {diag.antisymmetry:.3e}")
    if diag.mass_balance > tol:
        problems.append(f"local mass balance residual {diag.mass_balance:.3e}")
    if diag.coercivity_slack < -tol * diag.coercivity_scale:
        problems.append(f"advection coercivity slack {diag.coercivity_slack:.3e}")
    if diag.energy_slack is not None and diag.energy_slack < -tol * diag.energy_scale:
        problems.append(f"energy inequality slack {diag.energy_slack:.3e}")
    if diag.c_norm2 > bound * (1.0 + 1e-9):
        problems.append(
            f"concentration norm {diag.c_norm2:.6e} exceeds the bound {bound:.6e}"
        )
    if problems:
        raise InvariantViolationError(
            f"step {diag.step}: " + "; ".join(problems), step=diag.step
        )


def run(
    config: SimulationConfig,
    mesh: Mesh | None = None,
    check_invariants: bool = False,
    tol: float = 1e-9,
) -> RunResult:
    """Advance the coupled system from t=0 to t_f per the configured scheme.

    Each step extrapolates the concentration, solves the pressure with the
    doubled polynomial degree, extracts the Darcy samples, and advances the
    transport; backward-differentiation steppers bootstrap from midpoint
    steps until enough history exists. Aborts with a stability diagnostic if
    the concentration norm leaves ten times the guaranteed region.
    """
    problems = config.validate()
    if problems:
        raise ConfigError(problems)
    if mesh is None:
        mesh = config.mesh.build()

    k = config.k
    exactness = 4 * k + 2
    pspace = HhoSpace(mesh, 2 * k, exactness=exactness)
    cspace = HhoSpace(mesh, k, exactness=exactness)
    perm_cell = config.permeability.cell_tensors(mesh)
    visc = ViscosityModel(config.mu0, config.mobility_ratio)
    model = DispersionModel(config.d_m, config.d_l, config.d_t, config.porosity)
    phi = model.cell_porosity(mesh.n_cells)
    q_plus = well_source(mesh, config.wells, "injection")
    q_minus = well_source(mesh, config.wells, "production")
    rhs_p = pressure_rhs(pspace, q_plus, q_minus)

    c0 = float(config.c0)
    c_init = cspace.interpolate(lambda pts: np.full(len(pts), c0))
    bound = stability_bound(cspace, c_init, q_plus, float(phi.min()), config.t_f)

    order = {"crank_nicolson": 0, "bdf2": 2, "bdf3": 3, "bdf4": 4}[config.stepper]
    depth = max(order, 2)
    history = [c_init, c_init]

    report = RunReport(
        stepper=config.stepper,
        dt=config.dt,
        t_f=config.t_f,
        n_steps=config.n_steps,
        stability_bound=bound,
    )
    report.recovery.append((0.0, oil_recovery(cspace, c_init, phi)))
    snapshots: list[tuple[int, HybridField]] = []

    state = darcy = None
    dt = config.dt
    for n in range(config.n_steps):
        t_start = _time.perf_counter()
        use_bdf = order >= 2 and n + 1 >= order
        if use_bdf:
            weights = extrapolation_weights(order)
            c_tilde = field_lincomb(list(zip(weights, history[:order])))
            t_eval = (n + 1) * dt
        else:
            c_tilde = extrapolate_concentration(history[0], history[1])
            t_eval = (n + 0.5) * dt

        lam_cell, lam_face = kappa_samples(pspace, perm_cell, visc, c_tilde)
        state = solve_pressure(pspace, lam_cell, lam_face, rhs_p, tol=tol, time=t_eval)
        darcy = build_darcy(pspace, state.ops, state.field)
        fdiag = conservation_residual(darcy, state.ops, q_plus, q_minus)

        if use_bdf:
            res = bdf_step(
                cspace, model, darcy, history, order, dt, q_plus, q_minus,
                c_hat=config.c_hat, tol=tol,
            )
            c_next = res.field
            # the coercivity bound's mass term is alpha0*phi/dt
            dt_eff = 2.0 * dt / _BDF_ALPHA[order][0]
            slack_field = c_next
            e_slack = e_scale = None
        else:
            res = solve_concentration_half_step(
                cspace, model, darcy.u_cell, darcy.u_face, darcy.flux_face,
                history[0], dt, q_plus, q_minus, c_hat=config.c_hat, tol=tol,
            )
            c_next = crank_nicolson_extrapolate(res.field, history[0])
            dt_eff = dt
            slack_field = res.field
            e_slack, e_scale = energy_slack(
                cspace, phi, dt, res.field, history[0], q_plus, config.c_hat
            )

        l_slack, l_scale = coercivity_slack(
            cspace, res.adv_mats, darcy.flux_face, phi, dt_eff, slack_field
        )
        c_norm2 = cspace.l2_norm(c_next) ** 2
        diag = StepDiagnostics(
            step=n,
            time=(n + 1) * dt,
            pressure_residual=state.residual,
            transport_residual=res.residual,
            conservation=fdiag.conservation,
            antisymmetry=fdiag.antisymmetry,
            mass_balance=fdiag.mass_balance,
            coercivity_slack=l_slack,
            coercivity_scale=l_scale,
            energy_slack=e_slack,
            energy_scale=e_scale,
            c_norm2=c_norm2,
            pinned_faces=int(res.pinned.sum()),
            wall_seconds=_time.perf_counter() - t_start,
        )
        report.steps.append(diag)
        report.recovery.append(((n + 1) * dt, oil_recovery(cspace, c_next, phi)))
        if c_norm2 > 10.0 * bound:
            raise StabilityError(
                f"step {n}: concentration norm squared {c_norm2:.6e} exceeds ten "
                f"times the guaranteed bound {bound:.6e}; reduce the time step",
                step=n,
            )
        if check_invariants:
            check_step_invariants(diag, bound, tol=tol)
        if config.output_every > 0 and (n + 1) % config.output_every == 0:
            snapshots.append((n + 1, c_next))

        history = [c_next] + history[: depth - 1]

    return RunResult(
        report=report,
        mesh=mesh,
        pspace=pspace,
        cspace=cspace,
        concentration=history[0],
        pressure=state,
        darcy=darcy,
        snapshots=snapshots,
    )
