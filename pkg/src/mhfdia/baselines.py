"""Reference attacks: range-space, generalized stealth, static-H, eigenvalue moving-horizon, static (T = 1)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .attack import (AttackHistory, AttackStepResult, AttackSupport, GeneratorConfig, make_workspace,
                     generate_attack, nullspace_basis)
from .errors import ConfigError
from .plant import HorizonObservation, PlantModel, build_horizon

BASELINE_KINDS = ("range-space", "generalized-stealth", "static-H", "eigenvalue-mh", "static-T1")
GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def range_space_attack(C: np.ndarray, a: np.ndarray) -> np.ndarray:
    """``e_i = C a``: invisible to a single-step least-squares residual."""
    return np.asarray(C, float) @ np.asarray(a, float)


def windowed_range_residual(horizon: HorizonObservation, C: np.ndarray, a_window: np.ndarray) -> float:
    """``||(I - H H^+)(I_T kron C) a_I||`` for a stacked per-step bias ``a_I``."""
    T = horizon.T
    e = np.kron(np.eye(T), C) @ np.asarray(a_window, float)
    return float(np.linalg.norm(horizon.U2.T @ e))


def generalized_stealth_attack(C: np.ndarray, delta_step: float, bias: np.ndarray,
                               orth_direction: np.ndarray | None = None) -> np.ndarray:
    """Range-space bias plus an orthogonal component spending the per-step budget.

    The single-step problem (maximize ``||C^+ e||`` subject to
    ``||(I - C C^+) e|| <= delta_step``) is unbounded along range(C), so the bias
    ``C bias`` is supplied by the caller; the orthogonal part of norm
    ``delta_step`` is taken along ``orth_direction`` projected off range(C)
    (default: the complement direction with the largest first entry).
    """
    C = np.asarray(C, float)
    m = C.shape[0]
    e = C @ np.asarray(bias, float)
    if delta_step <= 0:
        return e
    Uc, s, _ = np.linalg.svd(C, full_matrices=True)
    rank = int(np.sum(s > max(C.shape) * np.finfo(float).eps * (s[0] if s.size else 1.0)))
    comp = Uc[:, rank:]
    if comp.shape[1] == 0:
        return e
    if orth_direction is None:
        o = comp[:, np.argmax(np.abs(comp[0]))] if m else np.zeros(0)
    else:
        o = comp @ (comp.T @ np.asarray(orth_direction, float))
    nrm = np.linalg.norm(o)
    if nrm == 0:
        return e
    return e + (delta_step / nrm) * o


def single_step_residual(C: np.ndarray, e: np.ndarray) -> float:
    C = np.asarray(C, float)
    return float(np.linalg.norm(e - C @ np.linalg.lstsq(C, e, rcond=None)[0]))


def static_h_attack(horizon: HorizonObservation, a: np.ndarray) -> np.ndarray:
    """``e_I = H a``: stealthy within one window only."""
    return horizon.H @ np.asarray(a, float)


# --------------------------------------------------------------------------
# eigenvalue moving-horizon baseline
# --------------------------------------------------------------------------

def _sphere_lsq(A: np.ndarray, h: np.ndarray, rho: float, eig=None) -> np.ndarray:
    """``argmin ||A u - h||`` over the sphere ``||u|| = rho``.

    Stationary points satisfy ``(A^T A + mu I) u = A^T h``; the global one has
    ``mu >= -s_min^2`` where ``||u(mu)||`` is monotone, so a scalar root solve suffices.
    """
    k = A.shape[1]
    if rho == 0:
        return np.zeros(k)
    w, W = np.linalg.eigh(A.T @ A) if eig is None else eig
    b = W.T @ (A.T @ h)
    lo = -w[0]
    scale = max(1.0, abs(w[-1]))
    bottom = np.abs(w - w[0]) <= 1e-12 * scale
    if np.all(np.abs(b[bottom]) <= 1e-14 * max(1.0, np.linalg.norm(b))):
        # hard case: u(mu) stays bounded as mu -> lo
        c = np.zeros(k)
        c[~bottom] = b[~bottom] / (w[~bottom] - w[0])
        if np.linalg.norm(c) <= rho:
            c[np.flatnonzero(bottom)[0]] = np.sqrt(max(rho ** 2 - c @ c, 0.0))
            return W @ c

    def phi(mu):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.linalg.norm(b / (w + mu)) - rho

    hi = lo + max(np.linalg.norm(b) / rho, 1e-12 * scale)
    while phi(hi) > 0:
        hi = lo + 2.0 * (hi - lo)
    gap = hi - lo
    while phi(lo + gap) < 0 and gap > 1e-300:
        gap *= 1e-3
    mu = brentq(phi, lo + gap, hi, xtol=1e-15 * scale, rtol=4 * np.finfo(float).eps) if gap > 1e-300 else lo + gap
    u = W @ (b / (w + mu))
    nu = np.linalg.norm(u)
    return u * (rho / nu) if nu > 0 else u


@dataclass
class EigenSolution:
    lam: float
    v: np.ndarray
    feasible: bool
    mismatch: float


def solve_eigen_problem(A: np.ndarray, h: np.ndarray, eps_tilde: float, tol: float = 1e-8) -> EigenSolution:
    """Maximize ``|lam|`` subject to ``||lam A v - h|| <= eps_tilde`` over unit ``v``.

    With ``u = lam v`` the feasible radii form an interval (the feasible set of
    ``u`` is a convex ellipsoid). Its point of least mismatch is found by
    golden-section search on the sphere-constrained least-squares mismatch and
    its upper end by bisection.
    """
    A = np.atleast_2d(np.asarray(A, float))
    h = np.asarray(h, float)
    k = A.shape[1]
    s = np.linalg.svd(A, compute_uv=False)
    if s.size < k or s[-1] <= 1e-12 * max(s[0], 1.0):
        raise ConfigError("eigenvalue attack is unbounded: history block is rank deficient")
    if eps_tilde < 0:
        raise ConfigError("eps_tilde must be non-negative")

    eig = np.linalg.eigh(A.T @ A)

    def mismatch(rho):
        return float(np.linalg.norm(A @ _sphere_lsq(A, h, rho, eig) - h))

    hi = (np.linalg.norm(h) + eps_tilde) / s[-1] * (1.0 + 1e-9) + 1e-12
    a, b = 0.0, hi
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = mismatch(c), mismatch(d)
    while b - a > tol * max(1.0, hi):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = mismatch(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = mismatch(d)
    rho_min = 0.5 * (a + b)
    f_min = mismatch(rho_min)
    if f_min > eps_tilde:
        return EigenSolution(0.0, np.zeros(k), False, f_min)
    lo, up = rho_min, hi
    while up - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + up)
        if mismatch(mid) <= eps_tilde:
            lo = mid
        else:
            up = mid
    u = _sphere_lsq(A, h, lo, eig)
    rho = float(np.linalg.norm(u))
    v = u / rho if rho > 0 else np.zeros(k)
    return EigenSolution(rho, v, True, float(np.linalg.norm(A @ u - h)))


def eigen_blocks(horizon: HorizonObservation, support: AttackSupport) -> tuple[np.ndarray, np.ndarray]:
    """``(U11 Sigma, U12 Sigma)``: all history-block rows of ``U1``, and the newest block's support rows."""
    T, m = horizon.T, horizon.m
    U1S = horizon.U1Sigma
    return U1S[: (T - 1) * m], U1S[(T - 1) * m + support.idx]


def eigenvalue_mh_attack(horizon: HorizonObservation, history: AttackHistory, support: AttackSupport,
                         eps_tilde: float) -> np.ndarray:
    """Fit ``lam U11 Sigma v`` to the committed history and inject ``lam U12 Sigma v`` on the support."""
    if horizon.T < 2:
        raise ConfigError("eigenvalue baseline needs a window of at least two samples")
    U11S, U12S = eigen_blocks(horizon, support)
    sol = solve_eigen_problem(U11S, history.stacked(), eps_tilde)
    e_i = np.zeros(support.m)
    if sol.feasible:
        e_i[support.idx] = sol.lam * (U12S @ sol.v)
    return e_i


class EigenvalueAttacker:
    """Closed-loop driver for the eigenvalue baseline (same interface as the MH attacker)."""

    def __init__(self, horizon: HorizonObservation, support: AttackSupport, eps_tilde: float):
        self.horizon = horizon
        self.support = support
        self.eps_tilde = eps_tilde
        self.history = AttackHistory(support, horizon.T)

    def rebase(self, horizon: HorizonObservation) -> None:
        self.horizon = horizon

    def step(self) -> AttackStepResult:
        h = self.horizon
        e_i = eigenvalue_mh_attack(h, self.history, self.support, self.eps_tilde)
        e_I = np.concatenate([self.history.stacked(), e_i])
        self.history.push(e_i)
        alpha = float(np.linalg.norm(h.pinv @ e_I))
        resid = float(np.linalg.norm(h.U2.T @ e_I))
        return AttackStepResult(e_i, alpha, resid, bool(np.any(e_i) or not np.any(e_I)), 0)

    def skip(self) -> None:
        self.history.push(np.zeros(self.support.m))


def static_t1_attack(plant: PlantModel, support: AttackSupport, eps: float,
                     config: GeneratorConfig | None = None) -> AttackStepResult:
    """The generator with a one-sample window: maximize ``||N1 v||`` s.t. ``||N2 v|| <= eps``.

    With ``eps = 0`` only injections in range(C) restricted to the support are admissible.
    """
    horizon = build_horizon(plant, 1)
    hist = AttackHistory(support, 1)
    basis = nullspace_basis(horizon, support)
    if eps <= 0:
        ws = make_workspace(horizon, support, hist, 0.0, basis)
        # directions with N2 v = 0 keep the residual at zero; take the one of largest bias
        null_n2 = basis.W2.shape[1] < basis.q
        if not null_n2:
            return AttackStepResult(np.zeros(support.m), 0.0, 0.0, True, 0)
        _, _, Vt = np.linalg.svd(basis.N2)
        K = Vt[basis.W2.shape[1]:].T
        _, _, Wt = np.linalg.svd(basis.N1 @ K)
        v = K @ Wt[0]
        z1 = basis.N1 @ v
        e_i = np.zeros(support.m)
        e_i[support.idx] = basis.U12 @ z1 + basis.U22 @ (basis.N2 @ v)
        ws.v = v
        return AttackStepResult(e_i, float(np.linalg.norm(z1)), float(np.linalg.norm(basis.N2 @ v)), True, 0, v=v)
    cfg = config if config is not None else GeneratorConfig(epsilon=eps)
    ws = make_workspace(horizon, support, hist, cfg.eps_tilde, basis)
    return generate_attack(ws, cfg)
