"""Coefficient algebra for fiber Hamiltonians and their coherent dressings.

Operators are kept in the structured family

    H = |A|^2 / 2 + sum_m d_m n_m + sum_m g_m (b_m + b*_m) + e,
    A_j = w_j + sum_m K[m,j] n_m + sum_m C[m,j] (b_m + b*_m),

which is closed under the mode displacement b_m -> b_m + h_m (real h).  The
displacement is applied exactly at coefficient level -- never by matrix
exponentiation -- so conjugation by a Weyl operator is free of truncation
error.  Matrices are assembled as the exact compression of the full operator
to the truncated basis: the square |A|^2 is evaluated through an extended
basis with one more photon, which keeps variational monotonicity intact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fock import FockBasis, build_basis
from .grid import ModelParams, MomentumGrid, form_factor

__all__ = [
    "FiberOperator",
    "VectorFiberOperator",
    "nelson_hamiltonian",
    "weyl_coefficients",
    "alpha_factors",
    "displace",
    "gamma_operator",
    "transformed_hamiltonian",
    "transformed_hamiltonian_routes",
    "canonical_terms",
    "canonical_distance",
    "assemble",
    "assemble_vector_component",
    "pf_diagonals",
    "momentum_shift_diagonal",
]


@dataclass(frozen=True)
class FiberOperator:
    """H = |A|^2/2 + sum d_m n_m + sum g_m x_m + e with affine vector A."""

    w: np.ndarray   # (3,)
    K: np.ndarray   # (M, 3)
    C: np.ndarray   # (M, 3)
    d: np.ndarray   # (M,)
    g: np.ndarray   # (M,)
    e: float

    def __post_init__(self):
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float).reshape(3))
        M = np.asarray(self.K, dtype=float).reshape(-1, 3).shape[0]
        for name, shape in (("K", (M, 3)), ("C", (M, 3)), ("d", (M,)), ("g", (M,))):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(shape))
        object.__setattr__(self, "e", float(self.e))

    @property
    def n_modes(self) -> int:
        return self.K.shape[0]

    def to_json(self) -> str:
        return json.dumps({
            "kind": "fiber",
            "w": self.w.tolist(), "K": self.K.tolist(), "C": self.C.tolist(),
            "d": self.d.tolist(), "g": self.g.tolist(), "e": self.e,
        }, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "FiberOperator":
        obj = json.loads(text)
        if obj.get("kind") != "fiber":
            raise ValueError("not a FiberOperator payload")
        return FiberOperator(np.array(obj["w"]), np.array(obj["K"]), np.array(obj["C"]),
                             np.array(obj["d"]), np.array(obj["g"]), obj["e"])


@dataclass(frozen=True)
class VectorFiberOperator:
    """Three affine components G_j = w_j + sum K[m,j] n_m + sum C[m,j] x_m."""

    w: np.ndarray   # (3,)
    K: np.ndarray   # (M, 3)
    C: np.ndarray   # (M, 3)

    def __post_init__(self):
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float).reshape(3))
        M = np.asarray(self.K, dtype=float).reshape(-1, 3).shape[0]
        object.__setattr__(self, "K", np.asarray(self.K, dtype=float).reshape(M, 3))
        object.__setattr__(self, "C", np.asarray(self.C, dtype=float).reshape(M, 3))

    @property
    def n_modes(self) -> int:
        return self.K.shape[0]

    def displaced(self, h) -> "VectorFiberOperator":
        h = np.asarray(h, dtype=float)
        w = self.w + self.K.T @ (h * h) + 2.0 * (self.C.T @ h)
        return VectorFiberOperator(w, self.K, self.C + self.K * h[:, None])

    def plus_const(self, c) -> "VectorFiberOperator":
        return VectorFiberOperator(self.w + np.asarray(c, dtype=float), self.K, self.C)

    def to_json(self) -> str:
        return json.dumps({"kind": "vector", "w": self.w.tolist(),
                           "K": self.K.tolist(), "C": self.C.tolist()}, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "VectorFiberOperator":
        obj = json.loads(text)
        if obj.get("kind") != "vector":
            raise ValueError("not a VectorFiberOperator payload")
        return VectorFiberOperator(np.array(obj["w"]), np.array(obj["K"]), np.array(obj["C"]))


def nelson_hamiltonian(params: ModelParams, grid: MomentumGrid) -> FiberOperator:
    """Fiber Hamiltonian (P - P_f)^2/2 + H_f + field coupling on the grid.

    Discrete mode operators absorb sqrt(w_m): the coupling coefficient is
    g_m = v(k_m) sqrt(w_m) with v the continuum form factor.
    """
    g = form_factor(grid.k, params) * np.sqrt(grid.w) if grid.n_modes else np.zeros(0)
    return FiberOperator(
        w=params.P_vec,
        K=-grid.k,
        C=np.zeros_like(grid.k),
        d=grid.r.copy(),
        g=g,
        e=0.0,
    )


def alpha_factors(grid: MomentumGrid, gradE) -> np.ndarray:
    """Direction factors alpha_m = 1 - k_hat_m . gradE (must stay positive)."""
    gradE = np.asarray(gradE, dtype=float)
    if grid.n_modes == 0:
        return np.zeros(0)
    alpha = 1.0 - (grid.k @ gradE) / grid.r
    if np.any(alpha <= 0.0):
        raise ValueError(f"alpha factor not positive (min {alpha.min():.3g}); "
                         "|gradE| too large for coherent dressing")
    return alpha


def weyl_coefficients(params: ModelParams, grid: MomentumGrid, gradE) -> np.ndarray:
    """Displacement amplitudes h_m = -g_m / (|k_m| alpha_m) of the dressing."""
    if grid.n_modes == 0:
        return np.zeros(0)
    alpha = alpha_factors(grid, gradE)
    g = form_factor(grid.k, params) * np.sqrt(grid.w)
    return -g / (grid.r * alpha)


def displace(op: FiberOperator, h) -> FiberOperator:
    """Exact conjugation coefficients under b_m -> b_m + h_m.

    |A|^2 stays a symbolic square (only A's coefficients move); the number
    term feeds the field coefficient (g += d h) and the scalar picks up
    sum_m (d_m h_m^2 + 2 g_m h_m).
    """
    h = np.asarray(h, dtype=float).reshape(op.n_modes)
    w = op.w + op.K.T @ (h * h) + 2.0 * (op.C.T @ h)
    C = op.C + op.K * h[:, None]
    g = op.g + op.d * h
    e = op.e + float(np.sum(op.d * h * h + 2.0 * op.g * h))
    return FiberOperator(w, op.K, C, op.d, g, e)


def gamma_operator(params: ModelParams, grid: MomentumGrid, gradE) -> VectorFiberOperator:
    """Dressed momentum-defect operator Gamma.

    Built from the exact shift rule applied to P_f - P plus the constant
    gradE, i.e. the conjugation identity  W (P_f - P) W* = Gamma - gradE
    read backwards.  Its ground-state expectation vanishing is a measured
    property, not an input.
    """
    gradE = np.asarray(gradE, dtype=float)
    h = weyl_coefficients(params, grid, gradE)
    base = VectorFiberOperator(-params.P_vec, grid.k.copy(), np.zeros_like(grid.k))
    return base.displaced(h).plus_const(gradE)


def transformed_hamiltonian_routes(params: ModelParams, grid: MomentumGrid, gradE):
    """The dressed Hamiltonian W H W* computed two independent ways.

    Route one displaces the bare Hamiltonian coefficient-wise.  Route two
    assembles the closed form |Gamma|^2/2 + sum alpha_m |k_m| n_m + c with

        c = |P|^2/2 - |P - gradE|^2/2 - sum_m g_m^2 / (|k_m| alpha_m).

    Returns (displaced_route, closed_route).
    """
    gradE = np.asarray(gradE, dtype=float)
    ham = nelson_hamiltonian(params, grid)
    h = weyl_coefficients(params, grid, gradE)
    route_displaced = displace(ham, h)

    gam = gamma_operator(params, grid, gradE)
    if grid.n_modes:
        alpha = alpha_factors(grid, gradE)
        d = alpha * grid.r
        self_energy = float(np.sum(ham.g**2 / (grid.r * alpha)))
    else:
        d = np.zeros(0)
        self_energy = 0.0
    P = params.P_vec
    c = 0.5 * float(P @ P) - 0.5 * float((P - gradE) @ (P - gradE)) - self_energy
    route_closed = FiberOperator(gam.w, gam.K, gam.C, d, np.zeros(grid.n_modes), c)
    return route_displaced, route_closed


def transformed_hamiltonian(params: ModelParams, grid: MomentumGrid, gradE,
                            abort_tol: float = 1e-12) -> FiberOperator:
    """Dressed Hamiltonian with the mandatory dual-route self-check.

    Both construction routes are compared in canonical (gauge-invariant)
    coefficients; a relative deviation beyond abort_tol raises.  The closed
    form is returned.
    """
    route_displaced, route_closed = transformed_hamiltonian_routes(params, grid, gradE)
    dev = canonical_distance(route_displaced, route_closed)
    if dev > abort_tol:
        raise ArithmeticError(
            f"transformed-Hamiltonian routes disagree: displaced vs closed form "
            f"deviate by {dev:.3e} (> {abort_tol:.1e}) in canonical coefficients")
    return route_closed


def canonical_terms(op: FiberOperator) -> dict:
    """Gauge-invariant coefficient blocks of the operator.

    The family representation has a gauge freedom (shifting A by a constant
    against d, g, e and flipping component signs of A).  The expanded blocks

        const  = e + |w|^2/2              n_lin[m] = d_m + w . K_m
        x_lin[m] = g_m + w . C_m          nn = K K^T / 2
        xx = C C^T / 2                    nx[m, m'] = K_m . C_m'

    determine the operator uniquely; two representations agree iff all blocks
    agree.  (nn/xx are coefficients of symmetrized n_m n_m' / x_m x_m'
    products, nx of the anticommutator {n_m, x_m'}/2 pairs.)
    """
    return {
        "const": np.array([op.e + 0.5 * float(op.w @ op.w)]),
        "n_lin": op.d + op.K @ op.w,
        "x_lin": op.g + op.C @ op.w,
        "nn": 0.5 * (op.K @ op.K.T),
        "xx": 0.5 * (op.C @ op.C.T),
        "nx": op.K @ op.C.T,
    }


def canonical_distance(op1: FiberOperator, op2: FiberOperator) -> float:
    """Largest relative deviation between canonical blocks of two operators."""
    t1, t2 = canonical_terms(op1), canonical_terms(op2)
    scale = 0.0
    for key in t1:
        scale = max(scale, float(np.max(np.abs(t1[key]), initial=0.0)),
                    float(np.max(np.abs(t2[key]), initial=0.0)))
    if scale == 0.0:
        return 0.0
    dev = 0.0
    for key in t1:
        dev = max(dev, float(np.max(np.abs(t1[key] - t2[key]), initial=0.0)))
    return dev / scale


# ---------------------------------------------------------------------------
# assembly to sparse matrices


def extended_basis(basis: FockBasis) -> FockBasis:
    """Basis with one extra photon of headroom (cached on the basis object);
    used as the intermediate space when squaring affine vector operators."""
    ext = getattr(basis, "_extended", None)
    if ext is None:
        ext = build_basis(basis.n_modes, basis.n_max + 1, basis.per_mode_cap + 1)
        basis._extended = ext
    return ext


def _inclusion_map(basis: FockBasis, ext: FockBasis) -> np.ndarray:
    key = id(ext)
    cache = getattr(basis, "_inclusion_cache", None)
    if cache is None:
        cache = {}
        basis._inclusion_cache = cache
    if key not in cache:
        eindex = ext.index
        cache[key] = np.fromiter((eindex[s] for s in basis.states),
                                 dtype=np.int64, count=basis.dim)
    return cache[key]


def _affine_rect_matrix(basis: FockBasis, ext: FockBasis, const: float,
                        num_coeff, field_coeff) -> sp.csr_matrix:
    """Rectangular matrix (ext.dim x basis.dim) of an affine operator
    const + sum num_coeff[m] n_m + sum field_coeff[m] x_m, exact on the
    truncated domain (one photon of headroom in ext absorbs every creation)."""
    num_coeff = np.asarray(num_coeff, dtype=float)
    field_coeff = np.asarray(field_coeff, dtype=float)
    incl = _inclusion_map(basis, ext)
    cols_parts, rows_parts, vals_parts = [], [], []

    diag = basis.number_diagonal(num_coeff) + const if basis.n_modes \
        else np.full(basis.dim, const)
    rows_parts.append(incl)
    cols_parts.append(np.arange(basis.dim, dtype=np.int64))
    vals_parts.append(diag)

    if basis.n_modes and np.any(field_coeff):
        active = np.flatnonzero(field_coeff)
        cidx, camp = basis.creation_table(ext)
        sub_idx = cidx[:, active]
        sub_val = camp[:, active] * field_coeff[active][None, :]
        cols = np.repeat(np.arange(basis.dim, dtype=np.int64), len(active))
        ok = (sub_idx >= 0).ravel()
        rows_parts.append(sub_idx.ravel()[ok])
        cols_parts.append(cols[ok])
        vals_parts.append(sub_val.ravel()[ok])

        src, mode, tgt, amp = basis.annihilation_arrays()
        sel = field_coeff[mode] != 0.0
        rows_parts.append(incl[tgt[sel]])
        cols_parts.append(src[sel])
        vals_parts.append(field_coeff[mode[sel]] * amp[sel])

    rows = np.concatenate(rows_parts)
    cols = np.concatenate(cols_parts)
    vals = np.concatenate(vals_parts)
    return sp.csr_matrix((vals, (rows, cols)), shape=(ext.dim, basis.dim))


def assemble(op: FiberOperator, basis: FockBasis) -> sp.csr_matrix:
    """Exact compression of the operator to the truncated basis.

    Matrix elements of |A|^2 are summed over intermediate states with one
    photon above the cap (the compression of the square, not the square of
    the compression); this is what makes enlarging the basis variational.
    When A has no field part it is diagonal in occupation and the square is
    taken directly.
    """
    if op.n_modes != basis.n_modes:
        raise ValueError("operator and basis mode counts differ")
    dim = basis.dim
    diag = np.full(dim, op.e, dtype=float)
    if basis.n_modes:
        diag += basis.number_diagonal(op.d)
    H = sp.csr_matrix((dim, dim))
    if basis.n_modes and np.any(op.g):
        H = H + basis.field_matrix(op.g)

    if not np.any(op.C):
        # A_j diagonal in occupation: square componentwise
        for j in range(3):
            a = basis.number_diagonal(op.K[:, j]) + op.w[j] if basis.n_modes \
                else np.full(dim, op.w[j])
            diag += 0.5 * a * a
    else:
        ext = extended_basis(basis)
        for j in range(3):
            R = _affine_rect_matrix(basis, ext, op.w[j], op.K[:, j], op.C[:, j])
            H = H + 0.5 * (R.T @ R)
    H = H + sp.diags(diag)
    H = ((H + H.T) * 0.5).tocsr()  # symmetrize rounding noise
    return H


def assemble_vector_component(vop: VectorFiberOperator, j: int, basis: FockBasis) -> sp.csr_matrix:
    """Sparse matrix of one affine component on the truncated basis (exact
    compression; creations above the cap have no matrix element here)."""
    dim = basis.dim
    diag = np.full(dim, vop.w[j], dtype=float)
    if basis.n_modes:
        diag += basis.number_diagonal(vop.K[:, j])
    A = sp.diags(diag).tocsr()
    if basis.n_modes and np.any(vop.C[:, j]):
        A = A + basis.field_matrix(vop.C[:, j])
    return A


def pf_diagonals(basis: FockBasis, grid: MomentumGrid) -> np.ndarray:
    """(dim, 3) array of the diagonal photon-momentum operator P_f."""
    out = np.zeros((basis.dim, 3))
    for j in range(3):
        if grid.n_modes:
            out[:, j] = basis.number_diagonal(grid.k[:, j])
    return out


def momentum_shift_diagonal(basis: FockBasis, grid: MomentumGrid, P, P_new) -> np.ndarray:
    """Diagonal of H(P_new) - H(P) for the bare Hamiltonian:
    (|P_new|^2 - |P|^2)/2 - (P_new - P) . P_f.  Only the diagonal moves."""
    P = np.asarray(P, dtype=float)
    P_new = np.asarray(P_new, dtype=float)
    dP = P_new - P
    out = np.full(basis.dim, 0.5 * float(P_new @ P_new - P @ P))
    if grid.n_modes and np.any(dP):
        out -= basis.number_diagonal(grid.k @ dP)
    return out
