"""Ground states, reduced resolvents, and shifted solves for symmetric
sparse matrices.

Small problems are handled densely; larger ones use Lanczos-type Krylov
methods with deterministic start vectors, so repeated runs reproduce
bit-identical results.  Resolvent norms along a spectral contour reuse one
Lanczos tridiagonalization for every shift (Krylov spaces are shift
invariant), with an exact per-shift residual estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import LinearOperator, cg, eigsh, minres

__all__ = [
    "GroundStateRecord",
    "ground_state",
    "solve_reduced_resolvent",
    "solve_shifted",
    "contour_sup_norm",
    "contour_points",
]

DENSE_CUTOFF = 900


@dataclass
class GroundStateRecord:
    """Lowest eigenpair of a symmetric matrix plus solver diagnostics."""

    energy: float
    vector: np.ndarray
    gap: float
    residual: float
    dim: int
    method: str
    tol: float

    def as_dict(self):
        return {"energy": self.energy, "gap": self.gap, "residual": self.residual,
                "dim": self.dim, "method": self.method, "tol": self.tol}


def _fix_phase(v: np.ndarray) -> np.ndarray:
    anchor = v[0] if abs(v[0]) > 1e-10 else v[np.argmax(np.abs(v))]
    return -v if anchor < 0 else v


def _row_abs_sums(H) -> np.ndarray:
    if sp.issparse(H):
        return np.asarray(np.abs(H).sum(axis=1)).ravel()
    return np.sum(np.abs(H), axis=1)


def ground_state(H, tol: float = 1e-10) -> GroundStateRecord:
    """Lowest eigenpair with spectral gap.

    Dense diagonalization below DENSE_CUTOFF, else Lanczos (ARPACK) with a
    fixed vacuum-weighted start vector; falls back to shift-invert from a
    Gershgorin bound if plain Lanczos stalls.  The returned vector is
    normalized with a positive vacuum component (positive largest component
    if the vacuum one vanishes).
    """
    dim = H.shape[0]
    scale = max(1.0, float(np.max(_row_abs_sums(H))))
    if dim == 1:
        val = H.tocsr()[0, 0] if sp.issparse(H) else H[0, 0]
        return GroundStateRecord(float(val), np.ones(1), np.inf, 0.0, 1, "trivial", tol)
    if dim <= DENSE_CUTOFF:
        Hd = H.toarray() if sp.issparse(H) else np.asarray(H)
        vals, vecs = np.linalg.eigh(Hd)
        psi = _fix_phase(vecs[:, 0])
        resid = float(np.linalg.norm(Hd @ psi - vals[0] * psi))
        return GroundStateRecord(float(vals[0]), psi, float(vals[1] - vals[0]),
                                 resid, dim, "dense", tol)

    Hs = H.tocsr() if sp.issparse(H) else sp.csr_matrix(H)
    v0 = np.full(dim, 1e-3)
    v0[0] = 1.0
    v0 /= np.linalg.norm(v0)
    try:
        vals, vecs = eigsh(Hs, k=2, which="SA", v0=v0, tol=tol,
                           maxiter=10_000, ncv=min(dim - 1, 48))
        method = "lanczos"
    except Exception:
        diag = Hs.diagonal()
        lower = float(np.min(diag - (_row_abs_sums(Hs) - np.abs(diag)))) - 0.1
        vals, vecs = eigsh(Hs, k=2, sigma=lower, which="LM", v0=v0, tol=tol)
        method = "shift-invert"
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    psi = _fix_phase(vecs[:, 0] / np.linalg.norm(vecs[:, 0]))
    resid = float(np.linalg.norm(Hs @ psi - vals[0] * psi))
    if resid > 1e3 * tol * scale:
        raise ArithmeticError(f"eigensolver residual {resid:.3e} exceeds budget "
                              f"({1e3 * tol * scale:.3e}); method={method}")
    return GroundStateRecord(float(vals[0]), psi, float(vals[1] - vals[0]),
                             resid, dim, method, tol)


def _project_out(v: np.ndarray, psi: np.ndarray) -> np.ndarray:
    return v - psi * (psi @ v)


def solve_reduced_resolvent(H, energy: float, psi: np.ndarray, rhs: np.ndarray,
                            tol: float = 1e-10) -> np.ndarray:
    """x = (H - energy)^{-1} Q rhs with Q the projector off psi, x orthogonal
    to psi.  psi must be the normalized eigenvector at `energy`; the deflated
    system is then consistent and symmetric."""
    dim = H.shape[0]
    rhs_p = _project_out(np.asarray(rhs, dtype=float), psi)
    if not np.any(rhs_p):
        return np.zeros(dim)
    if dim <= DENSE_CUTOFF:
        Hd = H.toarray() if sp.issparse(H) else np.asarray(H)
        # rank-one shift makes the deflated operator invertible on all of R^n
        M = Hd - energy * np.eye(dim) + np.outer(psi, psi)
        x = _project_out(np.linalg.solve(M, rhs_p), psi)
    else:
        Hs = H.tocsr() if sp.issparse(H) else sp.csr_matrix(H)

        def apply(v):
            u = _project_out(v, psi)
            return _project_out(Hs @ u - energy * u, psi)

        op = LinearOperator((dim, dim), matvec=apply, dtype=float)
        x, _ = minres(op, rhs_p, rtol=max(1e-13, tol / 100.0), maxiter=40 * dim)
        x = _project_out(x, psi)
    resid = np.linalg.norm(_project_out(H @ x - energy * x, psi) - rhs_p)
    budget = 1e3 * tol * max(1.0, float(np.linalg.norm(rhs)))
    if resid > budget:
        raise ArithmeticError(f"reduced-resolvent residual {resid:.3e} over budget {budget:.3e}")
    return x


def solve_shifted(H, z: complex, rhs: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """x = (H - z)^{-1} rhs for z off the spectrum (real or complex).

    Complex shifts reduce to one real SPD solve of ((H-a)^2 + b^2) y = rhs
    via x = (H-a) y + i b y.
    """
    dim = H.shape[0]
    z = complex(z)
    a, b = z.real, z.imag
    if dim <= DENSE_CUTOFF:
        Hd = H.toarray() if sp.issparse(H) else np.asarray(H)
        if b == 0.0:
            return np.linalg.solve(Hd - a * np.eye(dim), np.asarray(rhs))
        return np.linalg.solve(Hd - z * np.eye(dim), np.asarray(rhs, dtype=complex))
    Hs = H.tocsr() if sp.issparse(H) else sp.csr_matrix(H)
    rhs = np.asarray(rhs, dtype=float)
    rnorm = max(1.0, float(np.linalg.norm(rhs)))
    if b == 0.0:
        x, _ = minres(Hs - a * sp.eye(dim), rhs, rtol=max(1e-13, tol / 100.0),
                      maxiter=40 * dim)
        resid = np.linalg.norm(Hs @ x - a * x - rhs)
        if resid > 1e3 * tol * rnorm:
            raise ArithmeticError(f"shifted solve residual {resid:.3e} over budget")
        return x

    def apply(v):
        u = Hs @ v - a * v
        return Hs @ u - a * u + b * b * v

    op = LinearOperator((dim, dim), matvec=apply, dtype=float)
    y, _ = cg(op, rhs, rtol=max(1e-14, (tol / 100.0) ** 2), maxiter=40 * dim)
    x = (Hs @ y - a * y) + 1j * b * y
    resid = np.linalg.norm(Hs @ x - z * x - rhs)
    if resid > 1e3 * tol * rnorm:
        raise ArithmeticError(f"complex shifted solve residual {resid:.3e} over budget")
    return x


def contour_points(center: float, radius: float, n_samples: int) -> np.ndarray:
    """Equally spaced samples of the circle |z - center| = radius."""
    theta = 2.0 * np.pi * np.arange(n_samples) / n_samples
    return center + radius * np.exp(1j * theta)


class _LanczosState:
    """Growable full-reorthogonalization Lanczos factorization of (H, v)."""

    def __init__(self, Hmul, v):
        self.Hmul = Hmul
        self.dim = len(v)
        self.vnorm = float(np.linalg.norm(v))
        self.V = np.empty((0, self.dim))
        self.alpha: list[float] = []
        self.beta: list[float] = []
        self.exhausted = False
        self._seed = v / self.vnorm

    @property
    def m(self) -> int:
        return len(self.alpha)

    def grow(self, m_target: int):
        m_target = min(m_target, self.dim)
        if self.V.shape[0] == 0:
            Vnew = np.empty((m_target + 1, self.dim))
            Vnew[0] = self._seed
            self.V, self._nv = Vnew, 1
        elif self.V.shape[0] < m_target + 1:
            Vnew = np.empty((m_target + 1, self.dim))
            Vnew[: self._nv] = self.V[: self._nv]
            self.V = Vnew
        while self.m < m_target and not self.exhausted:
            j = self._nv - 1
            q = self.V[j]
            r = self.Hmul(q)
            a = float(q @ r)
            self.alpha.append(a)
            r = r - a * q
            if j > 0:
                r = r - self.beta[-1] * self.V[j - 1]
            B = self.V[: self._nv]
            for _ in range(2):
                r = r - B.T @ (B @ r)
            nb = float(np.linalg.norm(r))
            if nb < 1e-14 * max(1.0, self.vnorm):
                self.exhausted = True
                break
            self.beta.append(nb)
            self.V[self._nv] = r / nb
            self._nv += 1

    def solve_norm(self, z: complex):
        """(||y||, residual) for (T - z) y = ||v|| e_1 on the current space;
        the residual equals the true ||(H - z) V y - v||."""
        m = self.m
        ab = np.zeros((3, m), dtype=complex)
        if m > 1:
            ab[0, 1:] = self.beta[: m - 1]
            ab[2, :-1] = self.beta[: m - 1]
        ab[1, :] = np.asarray(self.alpha) - z
        rhs = np.zeros(m, dtype=complex)
        rhs[0] = self.vnorm
        y = solve_banded((1, 1), ab, rhs)
        resid = abs(self.beta[m - 1] * y[m - 1]) if len(self.beta) >= m else 0.0
        return float(np.linalg.norm(y)), resid


def contour_sup_norm(H, center: float, radius: float, v: np.ndarray,
                     n_samples: int = 16, tol: float = 1e-8, m_max: int = 600):
    """sup over the contour |z - center| = radius of ||(H - z)^{-1} v||.

    One Lanczos factorization serves every sample shift; each shift carries an
    exact residual estimate and the space is grown until all residuals drop
    below tol * ||v||.  Returns (sup_norm, samples, norms).
    """
    dim = H.shape[0]
    zs = contour_points(center, radius, n_samples)
    vnorm = float(np.linalg.norm(v))
    if vnorm == 0.0:
        return 0.0, zs, np.zeros(n_samples)
    if dim <= DENSE_CUTOFF:
        Hd = H.toarray() if sp.issparse(H) else np.asarray(H)
        norms = np.array([np.linalg.norm(np.linalg.solve(Hd - z * np.eye(dim), v))
                          for z in zs])
        return float(np.max(norms)), zs, norms

    Hs = H.tocsr() if sp.issparse(H) else sp.csr_matrix(H)
    state = _LanczosState(lambda q: Hs @ q, np.asarray(v, dtype=float))
    m = min(48, dim)
    limit = min(m_max, dim)
    while True:
        state.grow(m)
        norms = np.empty(n_samples)
        worst = 0.0
        for i, z in enumerate(zs):
            norms[i], resid = state.solve_norm(z)
            worst = max(worst, resid)
        if state.exhausted or worst <= tol * vnorm:
            return float(np.max(norms)), zs, norms
        if state.m >= limit:
            raise ArithmeticError(f"contour solves not converged: residual "
                                  f"{worst:.3e} after {state.m} Lanczos steps")
        m = min(state.m + 64, limit)
