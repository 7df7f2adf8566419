"""Analytic momentum derivatives of dressed fiber ground states.

All formulas are Rayleigh-Schrodinger expressions for the eigenvalue family
P -> compressed W0 H(P) W0* at a frozen dressing W0.  For that family the
first Hamiltonian derivative is gradE0_i - Gamma_i, the second is the
identity, and higher ones vanish, so every reduced-resolvent formula below
is an exact derivative of the truncated eigenvalue -- finite differences of
the same family must reproduce them to quadrature order.

Small gradient defects gamma_i = <phi, Gamma_i phi> (nonzero only through
truncation) are kept in the formulas rather than assumed away.
"""

from __future__ import annotations

import numpy as np

from .dressing import DressedScaleState
from .fiberop import assemble_vector_component, gamma_operator
from .fock import apply_displacement
from .spectral import solve_reduced_resolvent

__all__ = [
    "gamma_matrices",
    "grad_E_dressed",
    "phi_first_derivatives",
    "hessian_E",
    "directional_hessian",
    "phi_second_derivative",
    "third_derivative_E",
    "scaling_norms",
    "radial_direction",
    "to_bare_frame",
]


def gamma_matrices(state: DressedScaleState):
    """Compressed components of the dressed momentum defect Gamma (cached)."""
    mats = getattr(state, "_gamma_mats", None)
    if mats is None:
        gam = gamma_operator(state.params, state.grid, state.grad_e)
        mats = [assemble_vector_component(gam, j, state.basis) for j in range(3)]
        state._gamma_mats = mats
    return mats


def _gamma_defect(state: DressedScaleState, B: np.ndarray) -> np.ndarray:
    return B.T @ state.phi


def _gamma_applied(state: DressedScaleState) -> np.ndarray:
    """(dim, 3) array with columns Gamma_j phi (cached)."""
    B = getattr(state, "_gamma_phi", None)
    if B is None:
        B = np.column_stack([G @ state.phi for G in gamma_matrices(state)])
        state._gamma_phi = B
    return B


def grad_E_dressed(state: DressedScaleState) -> np.ndarray:
    """Exact gradient of the truncated dressed eigenvalue:
    gradE0_i - <phi, Gamma_i phi>."""
    return state.grad_e - _gamma_defect(state, _gamma_applied(state))


def phi_first_derivatives(state: DressedScaleState, tol: float = 1e-10) -> np.ndarray:
    """(dim, 3) array of eigenvector derivatives d(phi)/dP_i = R0 Gamma_i phi
    in the norm-preserving gauge <phi, d(phi)> = 0 (cached)."""
    U = getattr(state, "_phi_derivs", None)
    if U is None:
        B = _gamma_applied(state)
        U = np.column_stack([
            solve_reduced_resolvent(state.Hw, state.energy_w, state.phi,
                                    B[:, i], tol)
            for i in range(3)
        ])
        state._phi_derivs = U
    return U


def hessian_E(state: DressedScaleState, tol: float = 1e-10) -> np.ndarray:
    """3x3 matrix d2 E / dP_i dP_j = delta_ij - <Gamma_i phi, R0 Gamma_j phi>
    - <Gamma_j phi, R0 Gamma_i phi>."""
    B = _gamma_applied(state)
    U = phi_first_derivatives(state, tol)
    S = B.T @ U
    return np.eye(3) - S - S.T


def directional_hessian(state: DressedScaleState, direction, tol: float = 1e-10) -> float:
    """n . Hess E . n for a unit direction n; equals 1 - 2 <G phi, R0 G phi>
    with G = n . Gamma, hence never exceeds 1 (R0 is PSD off the ground state)."""
    n = np.asarray(direction, dtype=float)
    n = n / np.linalg.norm(n)
    return float(n @ hessian_E(state, tol) @ n)


def phi_second_derivative(state: DressedScaleState, i: int, j: int,
                          tol: float = 1e-10) -> np.ndarray:
    """d2 phi / dP_i dP_j:

        R0 (Gamma_i - gamma_i) d_j phi + R0 (Gamma_j - gamma_j) d_i phi
        - <d_i phi, d_j phi> phi.
    """
    G = gamma_matrices(state)
    B = _gamma_applied(state)
    gam = _gamma_defect(state, B)
    U = phi_first_derivatives(state, tol)
    t1 = solve_reduced_resolvent(state.Hw, state.energy_w, state.phi,
                                 G[i] @ U[:, j] - gam[i] * U[:, j], tol)
    t2 = solve_reduced_resolvent(state.Hw, state.energy_w, state.phi,
                                 G[j] @ U[:, i] - gam[j] * U[:, i], tol)
    return t1 + t2 - float(U[:, i] @ U[:, j]) * state.phi


def radial_direction(state: DressedScaleState) -> np.ndarray:
    """Unit vector along P (falling back to grad E, then x-hat, at P = 0)."""
    for cand in (state.params.P_vec, state.grad_e):
        norm = np.linalg.norm(cand)
        if norm > 1e-14:
            return np.asarray(cand, dtype=float) / norm
    return np.array([1.0, 0.0, 0.0])


def _directional_gamma(state: DressedScaleState, n: np.ndarray):
    G = gamma_matrices(state)
    return n[0] * G[0] + n[1] * G[1] + n[2] * G[2]


def third_derivative_E(state: DressedScaleState, direction=None,
                       tol: float = 1e-10) -> float:
    """d3 E / dt3 along P(t) = P + t n:

        2 <u, (gamma - G) u> - 4 <(gamma - G) phi, R0 (gamma - G) u>,

    with G = n . Gamma, gamma = <phi, G phi>, u = R0 G phi."""
    n = radial_direction(state) if direction is None else \
        np.asarray(direction, dtype=float) / np.linalg.norm(direction)
    G = _directional_gamma(state, n)
    phi = state.phi
    Gphi = G @ phi
    gamma = float(phi @ Gphi)
    u = solve_reduced_resolvent(state.Hw, state.energy_w, phi, Gphi, tol)
    Gu = G @ u
    term1 = 2.0 * (gamma * float(u @ u) - float(u @ Gu))
    w1 = solve_reduced_resolvent(state.Hw, state.energy_w, phi,
                                 gamma * u - Gu, tol)
    term2 = -4.0 * float((gamma * phi - Gphi) @ w1)
    return term1 + term2


def scaling_norms(state: DressedScaleState, direction=None,
                  tol: float = 1e-10) -> dict:
    """Resolvent-chain norms controlling the derivative formulas along n:

        n0 = ||R0 G phi||      (first eigenvector derivative)
        n1 = ||R0 Q G R0 G phi||  (second-order chain)
        n2 = ||(R0)^2 G phi||     (resolvent-squared chain)
    """
    n = radial_direction(state) if direction is None else \
        np.asarray(direction, dtype=float) / np.linalg.norm(direction)
    G = _directional_gamma(state, n)
    phi = state.phi
    u = solve_reduced_resolvent(state.Hw, state.energy_w, phi, G @ phi, tol)
    chain = solve_reduced_resolvent(state.Hw, state.energy_w, phi, G @ u, tol)
    square = solve_reduced_resolvent(state.Hw, state.energy_w, phi, u, tol)
    return {"n0": float(np.linalg.norm(u)),
            "n1": float(np.linalg.norm(chain)),
            "n2": float(np.linalg.norm(square))}


def to_bare_frame(state: DressedScaleState, v: np.ndarray) -> np.ndarray:
    """Undo the dressing: W* v, mapping dressed-frame vectors (phi and its
    derivatives at frozen W) to the bare frame."""
    return apply_displacement(state.basis, -state.h, v)
