"""Multiscale infrared iteration: cutoffs sigma_n = kappa * epsilon^n.

Each scale refines the momentum annulus (parent modes kept verbatim, so
embeddings are isometric and ground energies decrease monotonically), runs
the full dressing pipeline, and measures every quantity the scale-by-scale
analysis tracks:

* energy drops per scale and their lambda^2 * (annulus width) ledger constant;
* spectral gaps of the dressed Hamiltonians against sigma_n / 3;
* the projection of the previous dressed ground state under the intermediate
  Hamiltonian (previous dressing, new cutoff) via its ground overlap;
* Cauchy differences of the dressed wavefunction across scales, with the
  inter-scale Weyl difference applied exactly (real displacements commute,
  so W_{n+1} W_n* is a single displacement by h_{n+1} - h_n);
* resolvent sup norms on contours |z - E| = sigma_n / 3 around the ground
  energy of the intermediate Hamiltonian, in three directions Gamma_i phi;
* one-photon wavefunction envelope constants, dispersion deficits, radial
  hessians, third derivatives, and resolvent-chain norms per scale.

Scale 0 has an empty annulus: closed forms E = |P|^2/2, psi = vacuum, and
continuum gap kappa (1 - |P|) + kappa^2 / 2 seed the iteration.

Log-log exponent fits over sigma are ordinary least squares with a slope
standard error, so scaling claims carry uncertainties.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .derivatives import (
    _directional_gamma,
    phi_first_derivatives,
    radial_direction,
    scaling_norms,
    third_derivative_E,
)
from .dressing import DressedScaleState, dispersion_probe, dressed_ground_state
from .fiberop import assemble, assemble_vector_component, gamma_operator, \
    transformed_hamiltonian, weyl_coefficients
from .fock import FockBasis, StateVector, apply_displacement, build_basis, embed
from .grid import GridSpec, ModelParams, MomentumGrid, build_grid, form_factor, \
    refine_annulus
from .spectral import contour_sup_norm, ground_state, solve_reduced_resolvent
from .wavefunctions import BareGround, bound_constant_f1, extract_f1, \
    f1_resolvent

__all__ = [
    "SweepConfig",
    "ScaleRow",
    "SweepResult",
    "run_sweep",
    "fit_exponent",
    "cancellation_demo",
]


@dataclass(frozen=True)
class SweepConfig:
    params: ModelParams = ModelParams()
    spec: GridSpec = GridSpec()
    epsilon: float = 0.5
    n_scales: int = 5
    photon_cap: int = 2
    tol: float = 1e-10
    contour_samples: int = 8
    max_probes: int = 12
    dim_cap: int = 200_000
    with_contour: bool = True
    with_dispersion: bool = True
    with_f1: bool = True
    with_derivatives: bool = True

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.n_scales < 1:
            raise ValueError("need at least one scale")

    def sigma_at(self, n: int) -> float:
        return self.params.kappa * self.epsilon**n

    def content_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class ScaleRow:
    """Ledger entries for one scale; arrays stored as plain lists for I/O."""

    n: int
    sigma: float
    n_modes: int
    dim: int
    energy: float
    energy_w: float
    gap: float
    gap_w: float
    grad_e: list
    grad_norm: float
    alpha_min: float
    h_norm: float
    energy_drop: float = math.nan
    c_energy: float = math.nan
    grad_drift: float = math.nan
    proj_overlap: float = math.nan
    phi_hat_diff: float = math.nan
    psi_cauchy: float = math.nan
    phi_cauchy: float = math.nan
    transfer_defect: float = math.nan
    contour_sups: list = field(default_factory=lambda: [math.nan] * 3)
    contour_gap: float = math.nan
    rgamma_norm: float = math.nan
    f1_bound_c: float = math.nan
    deficit: float = math.nan
    radial_hessian: float = math.nan
    d3_radial: float = math.nan
    n0: float = math.nan
    n1: float = math.nan
    n2: float = math.nan
    energy_mismatch: float = math.nan
    dressing_defect: float = math.nan
    grad_defect_norm: float = math.nan
    grid_hash: str = ""
    basis_hash: str = ""
    wall_time: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


def fit_exponent(x, y):
    """Least-squares slope of log y against log x with its standard error.

    Returns (slope, stderr); nan stderr when fewer than three points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    lx, ly = np.log(x[keep]), np.log(y[keep])
    if len(lx) < 2:
        return math.nan, math.nan
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    slope = float(coef[0])
    if len(lx) < 3:
        return slope, math.nan
    resid = ly - A @ coef
    s2 = float(resid @ resid) / (len(lx) - 2)
    var = s2 * np.linalg.inv(A.T @ A)[0, 0]
    return slope, float(math.sqrt(max(var, 0.0)))


@dataclass
class SweepResult:
    config: SweepConfig
    rows: list
    fits: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def compute_fits(self, tail: int = 4) -> dict:
        """Scaling exponents over sigma, plus spreads of the per-scale
        stability constants.

        Exponent fits use the last `tail` scales: the first scales after
        onset still carry the annulus-filling transient, and all power-law
        statements here are asymptotic ones.  Each fit carries the OLS slope
        standard error.
        """
        lo = max(1, len(self.rows) - tail)
        sig = self.column("sigma")[lo:]
        fits = {"fit_rows": (lo, len(self.rows) - 1)}
        for name in ("psi_cauchy", "phi_cauchy", "grad_drift", "n0", "n1"):
            fits[name] = fit_exponent(sig, self.column(name)[lo:])
        sups = np.array([max(r.contour_sups) for r in self.rows[lo:]])
        fits["contour_sup"] = fit_exponent(sig, sups)
        # delta-hat: ||R0 Gamma phi|| ~ c / sigma^delta, so delta = -slope
        slope, err = fit_exponent(sig, self.column("rgamma_norm")[lo:])
        fits["delta_hat"] = (-slope, err)
        ce = self.column("c_energy")[1:]
        ce = ce[np.isfinite(ce)]
        fits["c_energy_spread"] = (float(np.min(ce)), float(np.max(ce))) \
            if len(ce) else (math.nan, math.nan)
        cf = self.column("f1_bound_c")[1:]
        cf = cf[np.isfinite(cf)]
        fits["f1_bound_spread"] = (float(np.min(cf)), float(np.max(cf))) \
            if len(cf) else (math.nan, math.nan)
        # gradient drift against lambda^2 sigma_{n-1} + ||phi_hat - phi||
        lam2 = self.config.params.coupling ** 2
        ratios = []
        for r in self.rows[1:]:
            denom = lam2 * r.sigma / self.config.epsilon + r.phi_hat_diff
            if math.isfinite(r.grad_drift) and denom > 0:
                ratios.append(r.grad_drift / denom)
        fits["drift_constant"] = float(max(ratios)) if ratios else math.nan
        self.fits = fits
        return fits

    def to_csv(self, path):
        cols = [f for f in ScaleRow.__dataclass_fields__]
        with open(path, "w") as fh:
            header = []
            for c in cols:
                if c == "grad_e":
                    header += ["grad_e_x", "grad_e_y", "grad_e_z"]
                elif c == "contour_sups":
                    header += ["contour_sup_x", "contour_sup_y", "contour_sup_z"]
                else:
                    header.append(c)
            fh.write(",".join(header) + "\n")
            for r in self.rows:
                cells = []
                for c in cols:
                    v = getattr(r, c)
                    if c in ("grad_e", "contour_sups"):
                        cells += [repr(float(x)) for x in v]
                    elif isinstance(v, str):
                        cells.append(v)
                    elif isinstance(v, (int, np.integer)):
                        cells.append(repr(int(v)))
                    else:
                        cells.append(repr(float(v)))
                fh.write(",".join(cells) + "\n")


def _scale_zero_row(config: SweepConfig) -> tuple:
    """Closed-form seed: empty annulus at sigma_0 = kappa."""
    params = config.params.with_sigma(config.sigma_at(0))
    grid = build_grid(params, config.spec)
    basis = build_basis(0, config.photon_cap)
    state = dressed_ground_state(params, grid, basis, config.tol)
    P = params.P_vec
    pnorm = float(np.linalg.norm(P))
    kap = params.kappa
    gap_closed = kap * (1.0 - pnorm) + 0.5 * kap * kap
    row = ScaleRow(
        n=0, sigma=params.sigma, n_modes=0, dim=1,
        energy=state.energy, energy_w=state.energy_w,
        gap=gap_closed, gap_w=gap_closed,
        grad_e=[float(g) for g in state.grad_e],
        grad_norm=state.grad_norm, alpha_min=1.0 - pnorm, h_norm=0.0,
        energy_mismatch=state.diagnostics["energy_mismatch"],
        dressing_defect=state.diagnostics["dressing_defect"],
        grad_defect_norm=state.diagnostics["grad_defect_norm"],
        grid_hash=grid.content_hash(), basis_hash=basis.content_hash(),
    )
    return row, state


def _aligned_distance(a: np.ndarray, b: np.ndarray) -> float:
    """||a - s b|| with the sign s chosen to make the overlap positive."""
    sgn = math.copysign(1.0, float(a @ b))
    return float(np.linalg.norm(a - sgn * b))


def _intermediate_quantities(config: SweepConfig, state: DressedScaleState,
                             prev: DressedScaleState, row: ScaleRow):
    """Cauchy differences, projection overlap, frame-transfer defect, and
    contour sup norms against the intermediate Hamiltonian (previous
    gradient's dressing at the current cutoff)."""
    params, grid, basis = state.params, state.grid, state.basis
    chi = embed(prev.phi, prev.basis, basis)
    grad_prev = prev.grad_e

    # Cauchy increments of the ground-state sequences under embedding: the
    # bare one picks up the new annulus's coherent cloud (~ sigma^alpha_bar),
    # the dressed one only the residual fluctuations.
    row.psi_cauchy = _aligned_distance(state.psi, embed(prev.psi, prev.basis, basis))
    row.phi_cauchy = _aligned_distance(state.phi, chi)

    op_int = transformed_hamiltonian(params, grid, grad_prev)
    H_int = assemble(op_int, basis)
    rec_int = ground_state(H_int, config.tol)
    row.proj_overlap = abs(float(rec_int.vector @ chi))
    # distance between the previous dressed state and its (unnormalized)
    # ground projection under the intermediate Hamiltonian
    row.phi_hat_diff = math.sqrt(max(0.0, 1.0 - row.proj_overlap**2))

    # The final and intermediate dressings differ by a single displacement
    # (real displacements commute); transporting the intermediate ground
    # state should reproduce the final one up to truncation.
    h_int = weyl_coefficients(params, grid, grad_prev)
    moved_int = apply_displacement(basis, state.h - h_int, rec_int.vector)
    row.transfer_defect = _aligned_distance(state.phi, moved_int)

    if config.with_contour:
        gam = gamma_operator(params, grid, grad_prev)
        radius = params.sigma / 3.0
        row.contour_gap = float(rec_int.gap - radius)
        sups = []
        for j in range(3):
            v = assemble_vector_component(gam, j, basis) @ chi
            sup, _, _ = contour_sup_norm(H_int, rec_int.energy, radius, v,
                                         n_samples=config.contour_samples)
            sups.append(float(sup))
        row.contour_sups = sups


def _derivative_quantities(state: DressedScaleState, row: ScaleRow, tol: float):
    n = radial_direction(state)
    norms = scaling_norms(state, n, tol)
    row.n0, row.n1, row.n2 = norms["n0"], norms["n1"], norms["n2"]
    G = _directional_gamma(state, n)
    Gphi = G @ state.phi
    u = solve_reduced_resolvent(state.Hw, state.energy_w, state.phi, Gphi, tol)
    row.radial_hessian = 1.0 - 2.0 * float(Gphi @ u)
    row.d3_radial = third_derivative_E(state, n, tol)
    # largest of the three reduced-resolvent norms ||R0 Gamma_i phi||; its
    # growth exponent over sigma is the delta-hat ledger quantity
    U = phi_first_derivatives(state, tol)
    row.rgamma_norm = float(np.linalg.norm(U, axis=0).max())


def _compute_scale(config: SweepConfig, n: int, grid: MomentumGrid,
                   basis: FockBasis, prev_state: DressedScaleState):
    t0 = time.monotonic()
    sigma = config.sigma_at(n)
    params = config.params.with_sigma(sigma)
    state = dressed_ground_state(params, grid, basis, config.tol)
    row = ScaleRow(
        n=n, sigma=sigma, n_modes=grid.n_modes, dim=basis.dim,
        energy=state.energy, energy_w=state.energy_w,
        gap=state.gap, gap_w=state.gap_w,
        grad_e=[float(g) for g in state.grad_e],
        grad_norm=state.grad_norm, alpha_min=state.alpha_min,
        h_norm=float(np.linalg.norm(state.h)),
        energy_mismatch=state.diagnostics["energy_mismatch"],
        dressing_defect=state.diagnostics["dressing_defect"],
        grad_defect_norm=state.diagnostics["grad_defect_norm"],
        grid_hash=grid.content_hash(), basis_hash=basis.content_hash(),
    )
    if prev_state is not None:
        row.energy_drop = prev_state.energy - state.energy
        lam = config.params.coupling
        if lam > 0.0:
            row.c_energy = row.energy_drop / (lam * lam * config.sigma_at(n - 1))
        row.grad_drift = float(np.linalg.norm(state.grad_e - prev_state.grad_e))
        _intermediate_quantities(config, state, prev_state, row)
    if config.with_f1 and grid.n_modes:
        bg = BareGround.from_state(state)
        row.f1_bound_c = bound_constant_f1(bg, extract_f1(bg))[0]
    if config.with_dispersion and grid.n_modes:
        row.deficit = dispersion_probe(params, grid, basis, H=state.H,
                                       energy=state.energy,
                                       max_probes=config.max_probes,
                                       tol=config.tol)[0]
    if config.with_derivatives and grid.n_modes:
        _derivative_quantities(state, row, config.tol)
    row.wall_time = time.monotonic() - t0
    return row, state


def _checkpoint_paths(directory, n):
    base = os.path.join(str(directory), f"scale_{n:02d}")
    return base + ".json", base + "_psi.csv", base + "_phi.csv"


def _save_checkpoint(directory, config, n, row, state):
    meta, psi_path, phi_path = _checkpoint_paths(directory, n)
    StateVector(state.psi, state.basis).to_csv(psi_path)
    StateVector(state.phi, state.basis).to_csv(phi_path)
    payload = {"config_hash": config.content_hash(), "row": row.as_dict(),
               "h": [float(x) for x in state.h]}
    with open(meta, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def _load_checkpoint(directory, config, n, grid, basis):
    """Rebuild a scale from disk; returns (row, state) or None on any
    mismatch (hash, shape) so the scale is recomputed."""
    meta, psi_path, phi_path = _checkpoint_paths(directory, n)
    if not (os.path.exists(meta) and os.path.exists(psi_path)
            and os.path.exists(phi_path)):
        return None
    with open(meta) as fh:
        payload = json.load(fh)
    if payload.get("config_hash") != config.content_hash():
        return None
    row_dict = payload["row"]
    if row_dict.get("grid_hash") != grid.content_hash() \
            or row_dict.get("basis_hash") != basis.content_hash():
        return None
    with open(psi_path) as fh:
        psi = StateVector.from_csv(fh.read(), basis).data
    with open(phi_path) as fh:
        phi = StateVector.from_csv(fh.read(), basis).data
    params = config.params.with_sigma(row_dict["sigma"])
    state = _rebuild_state(params, grid, basis, psi, phi, row_dict,
                           np.asarray(payload["h"], dtype=float))
    return ScaleRow(**row_dict), state


def _rebuild_state(params, grid, basis, psi, phi, row_dict, h):
    from .fiberop import nelson_hamiltonian
    grad_e = np.asarray(row_dict["grad_e"], dtype=float)
    hw_op = transformed_hamiltonian(params, grid, grad_e)
    H = assemble(nelson_hamiltonian(params, grid), basis)
    Hw = assemble(hw_op, basis)
    return DressedScaleState(
        params, grid, basis, row_dict["energy"], np.real(psi), row_dict["gap"],
        grad_e, h, hw_op, row_dict["energy_w"], np.real(phi),
        row_dict["gap_w"], H, Hw,
        {"energy_mismatch": row_dict["energy_mismatch"],
         "dressing_defect": row_dict["dressing_defect"],
         "grad_defect_norm": row_dict["grad_defect_norm"]})


def run_sweep(config: SweepConfig, checkpoint_dir=None,
              progress=None) -> SweepResult:
    """Run all scales, optionally checkpointing each to `checkpoint_dir` and
    resuming from any scale whose checkpoint matches the config."""
    rows = []
    row0, state = _scale_zero_row(config)
    rows.append(row0)
    grid = state.grid
    if progress:
        progress(row0)
    for n in range(1, config.n_scales):
        sigma = config.sigma_at(n)
        next_grid = refine_annulus(grid, sigma)
        bound = sum(math.comb(next_grid.n_modes + q - 1, q)
                    for q in range(config.photon_cap + 1))
        if bound > config.dim_cap:
            break  # ledger records the reachable scale range
        basis = build_basis(next_grid.n_modes, config.photon_cap)
        loaded = None
        if checkpoint_dir is not None:
            loaded = _load_checkpoint(checkpoint_dir, config, n, next_grid, basis)
        if loaded is not None:
            row, new_state = loaded
        else:
            row, new_state = _compute_scale(config, n, next_grid, basis, state)
            if checkpoint_dir is not None:
                _save_checkpoint(checkpoint_dir, config, n, row, new_state)
        rows.append(row)
        state, grid = new_state, next_grid
        if progress:
            progress(row)
    result = SweepResult(config, rows)
    result.compute_fits()
    return result


# ---------------------------------------------------------------------------
# cancellation demonstration for the second P-derivative of f^1


def _bare_directional_data(bg: BareGround, e: np.ndarray, tol: float):
    """(grad E, M diagonal, directional dpsi, directional hessian) for a
    bare ground state; exact derivatives of the truncated eigenvalue
    family."""
    from .dressing import hellmann_feynman_gradient
    from .fiberop import pf_diagonals
    grad = hellmann_feynman_gradient(bg.params, bg.grid, bg.basis, bg.psi)
    pf_e = pf_diagonals(bg.basis, bg.grid) @ e
    m_diag = float(bg.params.P_vec @ e) - pf_e - float(grad @ e)
    rhs = m_diag * bg.psi
    dpsi = -solve_reduced_resolvent(bg.H, bg.energy, bg.psi, rhs, tol)
    hess = 1.0 + 2.0 * float(rhs @ dpsi)
    return grad, m_diag, dpsi, hess


def cancellation_demo(params: ModelParams, grid: MomentumGrid, basis: FockBasis,
                      k_probe, tol: float = 1e-10) -> dict:
    """Decompose the second P-derivative of f^1(k) along e = k-hat.

    With R = (H_{P-k} - E_P + |k|)^{-1} and M = (P - k - P_f - grad E_P).e,
    differentiating f^1 = -v <Omega, R psi_P> twice in direction e gives the
    exact five-term expansion (everything a polynomial family in P, so the
    terms are exact derivatives of the truncated model):

        d2 f^1 = -v [ 2 <Omega, R M R M R psi>               (chains)
                      - (1 - e.HessE_P.e) <Omega, R^2 psi>   (undesirable)
                      - 2 <Omega, R M R dpsi>                (cross)
                      + <Omega, R d2psi> ]                   (curvature)

    The scalar pole terms isolate the ground-state channel of the
    undesirable term and of the chains; each carries the full
    R_sc^2 = (E_{P-k} - E_P + |k|)^{-2} ~ |k|^{-2} singularity:

        T1      = (1 - e.HessE_P.e)     <Omega, psi_{P-k}> R_sc^2 v
        T2 = T3 = (e.HessE_{P-k}.e - 1) <Omega, psi_{P-k}> R_sc^2 v / 2

    and their sum is proportional to the hessian difference between P and
    P - k, one power of |k| better than any single term.
    """
    k_probe = np.asarray(k_probe, dtype=float)
    r = float(np.linalg.norm(k_probe))
    e = k_probe / r
    v = float(form_factor(k_probe, params))

    bg = BareGround.solve(params, grid, basis, tol)
    bg_k = BareGround.solve(params.with_P(tuple(params.P_vec - k_probe)),
                            grid, basis, tol)
    grad, m0_diag, dpsi, hess_P = _bare_directional_data(bg, e, tol)
    _, _, _, hess_Pk = _bare_directional_data(bg_k, e, tol)

    # shifted resolvent solves (H_{P-k} - E_P + |k|)^{-1} via the diagonal
    # momentum shift, exactly as in the pull-through formula
    from .wavefunctions import _shifted_solve
    from .fiberop import pf_diagonals

    def R(x):
        return _shifted_solve(bg, k_probe, r, x, tol)

    pf_e = pf_diagonals(basis, grid) @ e
    m_diag = float((params.P_vec - k_probe) @ e) - pf_e - float(grad @ e)

    omega = np.zeros(basis.dim)
    omega[0] = 1.0
    y = R(omega)
    x1 = R(bg.psi)
    chain = float(y @ (m_diag * R(m_diag * x1)))
    undesirable = -(1.0 - hess_P) * float(y @ x1)
    cross = -2.0 * float(y @ (m_diag * R(dpsi)))
    d2psi = -2.0 * solve_reduced_resolvent(bg.H, bg.energy, bg.psi,
                                           m0_diag * dpsi, tol) \
        - float(dpsi @ dpsi) * bg.psi
    curvature = float(y @ d2psi)
    terms = {"chains": -v * 2.0 * chain, "undesirable": -v * undesirable,
             "cross": -v * cross, "curvature": -v * curvature}
    d2_exact = sum(terms.values())

    # central finite difference of the full f^1(P) along e
    step = 5e-3 * max(r, 0.1)

    def f_at(p_vec):
        bgp = BareGround.solve(params.with_P(tuple(p_vec)), grid, basis, tol)
        return f1_resolvent(bgp, k_probe, tol)[0]

    p0 = params.P_vec
    f0 = -v * float(omega @ x1)
    d2_fd = (f_at(p0 + step * e) - 2.0 * f0 + f_at(p0 - step * e)) / step**2

    r_sc = 1.0 / (bg_k.energy - bg.energy + r)
    vac = abs(float(bg_k.psi[0]))
    common = vac * r_sc * r_sc * v
    t1 = (1.0 - hess_P) * common
    t2 = 0.5 * (hess_Pk - 1.0) * common
    pole_sum = t1 + 2.0 * t2

    return {
        "k_radius": r,
        "f1": f0,
        "T1": t1, "T2": t2, "T3": t2,
        "pole_sum": pole_sum,
        "pole_scale": max(abs(t1), abs(t2)),
        "cancellation_ratio": abs(pole_sum) / max(abs(t1), abs(t2)),
        "d2_exact": d2_exact,
        "d2_fd": d2_fd,
        "terms": terms,
        "hess_P": hess_P,
        "hess_Pk": hess_Pk,
        "vacuum_overlap": vac,
        "resolvent_scale": r_sc,
    }
