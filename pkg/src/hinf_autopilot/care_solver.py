"""Continuous algebraic Riccati machinery for H-infinity state feedback.

This module solves the attenuation-level-parameterized Riccati equation

    X A + A' X - X (B B' - gamma^-2 Bw Bw') X + C' C = 0

for its stabilizing, positive-semidefinite root, extracts state-feedback
gains K = B' X, computes H-infinity norms of stable state-space systems by
Hamiltonian bisection, and bisects the attenuation level down to the
feasibility boundary.

The solver works on dense 64-bit arrays and extracts the stable invariant
subspace of the 2n x 2n Hamiltonian by eigendecomposition.  That is entirely
adequate for the small (n <= 6) problems this package targets; no structure
is exploited.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "StateSpace",
    "CareProblem",
    "HinfSolution",
    "ShapeError",
    "NoStabilizingSolution",
    "IndefiniteSolution",
    "UnstableSystem",
    "BracketInvalid",
    "solve_care",
    "solve_lqr",
    "care_residual",
    "hinf_norm",
    "gamma_search",
]

# Relative condition-number ceiling for inverting the upper block of the
# stable-subspace basis; beyond this the solution has blown up (gamma is at
# or below the achievable attenuation level).
_MAX_BASIS_COND = 1e12

# Hamiltonian eigenvalues closer to the imaginary axis than this (relative
# to ||H||_F) are treated as axis eigenvalues: no clean stable subspace.
_AXIS_TOL = 1e-9


class ShapeError(ValueError):
    """Matrix dimensions are mutually inconsistent."""


class NoStabilizingSolution(RuntimeError):
    """The Riccati equation has no stabilizing solution at this level.

    Raised when the Hamiltonian has eigenvalues on (or numerically at) the
    imaginary axis, when the stable subspace is not n-dimensional, or when
    the subspace basis cannot be inverted reliably.  For the H-infinity
    equation this signals an attenuation level at or below the achievable
    minimum.
    """


class IndefiniteSolution(RuntimeError):
    """The stabilizing root exists but is not positive semidefinite.

    Signals an invalid problem (e.g. detectability violated) or an
    attenuation level inside the infeasible band where the stabilizing
    root loses semidefiniteness.
    """


class UnstableSystem(ValueError):
    """Operation requires a Hurwitz state matrix."""


class BracketInvalid(ValueError):
    """The bisection bracket does not enclose the feasibility boundary."""


def _as_matrix(value, name: str) -> np.ndarray:
    mat = np.atleast_2d(np.asarray(value, dtype=float))
    if mat.ndim != 2:
        raise ShapeError(f"{name} must be a 2-D matrix, got ndim={mat.ndim}")
    if not np.all(np.isfinite(mat)):
        raise ValueError(f"{name} contains non-finite entries")
    return mat


@dataclass
class StateSpace:
    """A real state-space system (A, B, C, D).

    Members are validated for mutual dimensional consistency and finiteness
    on construction.
    """

    A: np.ndarray
    B_in: np.ndarray
    C_out: np.ndarray
    D_ff: np.ndarray

    def __post_init__(self):
        self.A = _as_matrix(self.A, "A")
        self.B_in = _as_matrix(self.B_in, "B_in")
        self.C_out = _as_matrix(self.C_out, "C_out")
        self.D_ff = _as_matrix(self.D_ff, "D_ff")
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ShapeError(f"A must be square, got {self.A.shape}")
        if self.B_in.shape[0] != n:
            raise ShapeError("B_in row count must match A")
        if self.C_out.shape[1] != n:
            raise ShapeError("C_out column count must match A")
        if self.D_ff.shape != (self.C_out.shape[0], self.B_in.shape[1]):
            raise ShapeError("D_ff must be (outputs x inputs)")


@dataclass
class CareProblem:
    """Data for the gamma-parameterized Riccati equation.

    ``gamma`` is the disturbance attenuation level; ``B`` maps the control,
    ``B_w`` the exogenous disturbance, and ``C`` weights the state in the
    performance output.  Stabilizability of (A, B) and detectability of
    (C, A) are probed with PBH singular-value tests when the problem is
    solved; failures are reported as warnings on the solution rather than
    as hard errors.
    """

    A: np.ndarray
    B: np.ndarray
    B_w: np.ndarray
    C: np.ndarray
    gamma: float

    def __post_init__(self):
        self.A = _as_matrix(self.A, "A")
        self.B = _as_matrix(self.B, "B")
        self.B_w = _as_matrix(self.B_w, "B_w")
        self.C = _as_matrix(self.C, "C")
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ShapeError(f"A must be square, got {self.A.shape}")
        for name, mat in (("B", self.B), ("B_w", self.B_w)):
            if mat.shape[0] != n:
                raise ShapeError(f"{name} row count must match A")
        if self.C.shape[1] != n:
            raise ShapeError("C column count must match A")
        self.gamma = float(self.gamma)
        if not (self.gamma > 0.0 and math.isfinite(self.gamma)):
            raise ValueError(f"gamma must be positive and finite, got {self.gamma}")


@dataclass
class HinfSolution:
    """A verified stabilizing solution of the Riccati equation.

    Attributes:
        gamma: attenuation level the equation was solved at (+inf for the
            disturbance-free / LQR limit).
        X: symmetric PSD Riccati solution.
        K: feedback gain row(s), B' X.  The control law applies the minus
            sign, u = -K x.
        closed_loop_eigs: eigenvalues of A - B K (the loop as flown).
        worst_case_eigs: eigenvalues of A - (B B' - gamma^-2 Bw Bw') X,
            the stabilizing-solution certificate (strictly open left
            half-plane).
        residual: Frobenius norm of the Riccati residual at X.
        warnings: PBH stabilizability/detectability findings, if any.
    """

    gamma: float
    X: np.ndarray
    K: np.ndarray
    closed_loop_eigs: np.ndarray
    worst_case_eigs: np.ndarray
    residual: float
    warnings: tuple[str, ...] = field(default=())


def _pbh_warnings(A: np.ndarray, B: np.ndarray, C: np.ndarray) -> tuple[str, ...]:
    """PBH rank probes for stabilizability of (A, B) and detectability of (C, A).

    Rank deficiency is declared when the smallest singular value falls below
    1e-9 times the largest.  Only eigenvalues with non-negative real part
    matter for either property.
    """
    notes = []
    eigs = np.linalg.eigvals(A)
    for lam in eigs[eigs.real >= 0.0]:
        shifted = A - lam * np.eye(A.shape[0])
        sv = np.linalg.svd(np.hstack([shifted, B]), compute_uv=False)
        if sv[-1] <= 1e-9 * sv[0]:
            notes.append(
                f"(A, B) may not be stabilizable: PBH near-rank-deficient at eigenvalue {lam:.6g}"
            )
        sv = np.linalg.svd(np.vstack([shifted, C]), compute_uv=False)
        if sv[-1] <= 1e-9 * sv[0]:
            notes.append(
                f"(C, A) may not be detectable: PBH near-rank-deficient at eigenvalue {lam:.6g}"
            )
    return tuple(notes)


def _stable_subspace_root(A: np.ndarray, G: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Stabilizing root of X A + A' X - X G X + Q = 0 via the Hamiltonian.

    Builds H = [[A, -G], [-Q, -A']], takes the n eigenvectors belonging to
    strictly-stable eigenvalues, and forms X = X2 X1^-1 from the stacked
    basis.  Near-axis eigenvalues, a wrong-dimensional stable set, or an
    ill-conditioned X1 all raise NoStabilizingSolution.
    """
    n = A.shape[0]
    H = np.block([[A, -G], [-Q, -A.T]])
    h_scale = np.linalg.norm(H, "fro")
    eigvals, eigvecs = np.linalg.eig(H)

    if np.any(np.abs(eigvals.real) < _AXIS_TOL * h_scale):
        raise NoStabilizingSolution(
            "Hamiltonian has eigenvalues on the imaginary axis; "
            "the attenuation level is at or below the achievable minimum"
        )
    stable = eigvals.real < 0.0
    if int(stable.sum()) != n:
        raise NoStabilizingSolution(
            f"stable subspace has dimension {int(stable.sum())}, expected {n}"
        )

    basis = eigvecs[:, stable]
    X1 = basis[:n, :]
    X2 = basis[n:, :]
    cond = np.linalg.cond(X1)
    if not np.isfinite(cond) or cond > _MAX_BASIS_COND:
        raise NoStabilizingSolution(
            f"subspace basis is numerically singular (cond={cond:.3g}); "
            "the solution has blown up at this attenuation level"
        )

    X = X2 @ np.linalg.inv(X1)
    x_scale = max(1.0, float(np.abs(X).max()))
    if float(np.abs(X.imag).max()) > 1e-8 * x_scale:
        raise NoStabilizingSolution("stable subspace produced a non-real solution")
    X = X.real
    return 0.5 * (X + X.T)


def _verified_solution(
    A: np.ndarray,
    G: np.ndarray,
    Q: np.ndarray,
    B: np.ndarray,
    gamma: float,
    warnings: tuple[str, ...],
) -> HinfSolution:
    """Solve, then enforce the PSD / stabilizing / residual contracts."""
    X = _stable_subspace_root(A, G, Q)

    x_norm = np.linalg.norm(X, "fro")
    lam_min = float(np.linalg.eigvalsh(X)[0])
    if lam_min < -1e-8 * max(1.0, x_norm):
        raise IndefiniteSolution(
            f"stabilizing root is not positive semidefinite (lambda_min={lam_min:.6g})"
        )

    worst_case = A - G @ X
    worst_eigs = np.linalg.eigvals(worst_case)
    if float(worst_eigs.real.max()) >= 0.0:
        raise NoStabilizingSolution(
            "extracted root does not stabilize A - G X; no valid solution at this level"
        )

    residual = float(np.linalg.norm(X @ A + A.T @ X - X @ G @ X + Q, "fro"))
    bbt_norm = np.linalg.norm(B @ B.T, "fro")
    scale = max(1.0, float(np.linalg.norm(Q, "fro")), float(x_norm**2 * bbt_norm))
    if residual > 1e-8 * scale:
        raise NoStabilizingSolution(
            f"Riccati residual {residual:.3g} exceeds tolerance {1e-8 * scale:.3g}; "
            "the level is too close to the feasibility boundary"
        )

    K = B.T @ X
    closed_eigs = np.linalg.eigvals(A - B @ K)
    return HinfSolution(
        gamma=gamma,
        X=X,
        K=K,
        closed_loop_eigs=closed_eigs,
        worst_case_eigs=worst_eigs,
        residual=residual,
        warnings=warnings,
    )


def solve_care(problem: CareProblem) -> HinfSolution:
    """Solve the gamma-parameterized Riccati equation for its stabilizing root.

    Returns an HinfSolution whose X is symmetric, PSD up to tolerance, and
    satisfies the residual bound 1e-8 * max(1, ||C'C||_F, ||X||_F^2 ||BB'||_F).

    Raises:
        NoStabilizingSolution: gamma at or below the achievable level.
        IndefiniteSolution: stabilizing root exists but is not PSD.
    """
    warnings = _pbh_warnings(problem.A, problem.B, problem.C)
    G = problem.B @ problem.B.T - (problem.B_w @ problem.B_w.T) / problem.gamma**2
    Q = problem.C.T @ problem.C
    return _verified_solution(problem.A, G, Q, problem.B, problem.gamma, warnings)


def solve_lqr(A, B, C) -> HinfSolution:
    """Solve X A + A' X - X B B' X + C' C = 0 (the disturbance-free limit).

    Same solution contract as solve_care; the returned gamma is +inf.
    """
    A = _as_matrix(A, "A")
    B = _as_matrix(B, "B")
    C = _as_matrix(C, "C")
    if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0] or C.shape[1] != A.shape[0]:
        raise ShapeError("inconsistent dimensions for the Riccati data")
    warnings = _pbh_warnings(A, B, C)
    return _verified_solution(A, B @ B.T, C.T @ C, B, math.inf, warnings)


def care_residual(problem: CareProblem, X) -> float:
    """Frobenius norm of X A + A' X - X (BB' - gamma^-2 BwBw') X + C'C."""
    X = _as_matrix(X, "X")
    n = problem.A.shape[0]
    if X.shape != (n, n):
        raise ShapeError(f"X must be {n}x{n}, got {X.shape}")
    G = problem.B @ problem.B.T - (problem.B_w @ problem.B_w.T) / problem.gamma**2
    Q = problem.C.T @ problem.C
    return float(np.linalg.norm(X @ problem.A + problem.A.T @ X - X @ G @ X + Q, "fro"))


def _axis_crossing(A, B, C, D, gamma: float) -> bool:
    """True iff the norm-test Hamiltonian at this level has axis eigenvalues.

    Levels at or below sigma_max(D) (where gamma^2 I - D'D loses
    definiteness) count as crossings: the norm certainly exceeds them.
    """
    p = C.shape[0]
    R = gamma**2 * np.eye(D.shape[1]) - D.T @ D
    if float(np.linalg.eigvalsh(R)[0]) <= 0.0:
        return True
    Rinv = np.linalg.inv(R)
    M = A + B @ Rinv @ D.T @ C
    H = np.block(
        [
            [M, B @ Rinv @ B.T],
            [-C.T @ (np.eye(p) + D @ Rinv @ D.T) @ C, -M.T],
        ]
    )
    eigs = np.linalg.eigvals(H)
    return bool(np.any(np.abs(eigs.real) <= 1e-8 * (1.0 + np.abs(eigs))))


def _grid_lower_bound(A, B, C, D) -> float:
    """Coarse frequency sweep of sigma_max(G(jw)) to seed the bisection."""
    best = float(np.linalg.norm(D, 2))
    # DC gain.
    best = max(best, float(np.linalg.norm(C @ np.linalg.solve(-A, B) + D, 2)))
    eigs = np.linalg.eigvals(A)
    mags = np.abs(eigs)
    w_lo = max(float(mags.min()) * 1e-3, 1e-8)
    w_hi = max(float(mags.max()) * 1e3, 1.0)
    n = A.shape[0]
    eye = np.eye(n)
    for w in np.logspace(math.log10(w_lo), math.log10(w_hi), 200):
        G = C @ np.linalg.solve(1j * w * eye - A, B) + D
        best = max(best, float(np.linalg.norm(G, 2)))
    return best


def hinf_norm(sys: StateSpace, tol: float = 1e-6) -> float:
    """H-infinity norm of a stable system by Hamiltonian bisection.

    The level test is the standard one: the Hamiltonian associated with a
    level gamma has imaginary-axis eigenvalues iff gamma <= ||T||_inf.  The
    initial bracket comes from sigma_max(D) and a coarse frequency sweep
    (a guaranteed lower bound), with the upper bound grown by doubling.

    Args:
        sys: state-space data; A must be Hurwitz.
        tol: relative tolerance on the returned value.

    Raises:
        UnstableSystem: A has an eigenvalue with non-negative real part.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    A, B, C, D = sys.A, sys.B_in, sys.C_out, sys.D_ff
    if float(np.linalg.eigvals(A).real.max()) >= 0.0:
        raise UnstableSystem("A is not Hurwitz; the H-infinity norm is unbounded")

    lo = _grid_lower_bound(A, B, C, D)
    hi = max(1.0, 2.0 * lo)
    for _ in range(64):
        if not _axis_crossing(A, B, C, D, hi):
            break
        hi *= 2.0
    else:  # pragma: no cover - unreachable for finite-norm systems
        raise ValueError("failed to bracket the norm from above")

    # The 1e-12 floor keeps the level test away from gamma^-2 overflow on
    # (numerically) zero transfer functions; anything below it is zero.
    iterations = 0
    while (hi - lo) > tol * hi and hi > 1e-12 and iterations < 200:
        mid = 0.5 * (lo + hi)
        if _axis_crossing(A, B, C, D, mid):
            lo = mid
        else:
            hi = mid
        iterations += 1
    return 0.5 * (lo + hi)


def gamma_search(A, B, B_w, C, bracket: tuple[float, float], tol: float = 1e-6) -> float:
    """Bisect the attenuation level down to the feasibility boundary.

    Feasibility means solve_care returns a verified solution; both failure
    modes (axis eigenvalues and indefinite roots) count as infeasible.
    Assumes feasibility is monotone in gamma.  If the lower bracket end is
    itself feasible the search returns it unchanged (e.g. B_w = 0, where
    every positive level is feasible).

    Raises:
        BracketInvalid: malformed bracket, or an infeasible upper end.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not (0.0 < lo < hi) or tol <= 0.0:
        raise BracketInvalid(f"bracket must satisfy 0 < lo < hi, got ({lo}, {hi})")

    def feasible(gamma: float) -> bool:
        try:
            solve_care(CareProblem(A=A, B=B, B_w=B_w, C=C, gamma=gamma))
        except (NoStabilizingSolution, IndefiniteSolution):
            return False
        return True

    if not feasible(hi):
        raise BracketInvalid(f"upper bracket end gamma={hi} is infeasible")
    if feasible(lo):
        return lo

    while (hi - lo) > tol * hi:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi
