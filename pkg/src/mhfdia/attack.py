"""Moving-horizon false-data-injection generator.

A window attack is parameterized as ``e_I = U1 Sigma w1 + U2 w2`` so that the
estimate bias is ``||w1||`` and the detector residual is ``||w2||``. Given the
injections already committed in the window (the history), the current
injection is searched in the null space that keeps every off-support entry of
the window at zero, and a projected ascent on the bias keeps the residual
inside the budget ``eps_tilde`` at every iterate.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError, NumericalError
from .plant import HorizonObservation

log = logging.getLogger(__name__)

LEAK_TOL = 1e-8
STALL_STEP = 1e-12
STALL_COUNT = 10


# --------------------------------------------------------------------------
# support / history / config
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AttackSupport:
    """Compromised sensor channels, 1-based as in configuration files."""

    channels: tuple[int, ...]
    m: int

    def __post_init__(self):
        ch = tuple(int(c) for c in self.channels)
        if list(ch) != sorted(set(ch)):
            raise ConfigError(f"support must be strictly increasing, got {ch}")
        if ch and (ch[0] < 1 or ch[-1] > self.m):
            raise ConfigError(f"support {ch} outside channels 1..{self.m}")
        object.__setattr__(self, "channels", ch)

    @classmethod
    def from_indices(cls, idx, m: int) -> "AttackSupport":
        return cls(tuple(int(i) + 1 for i in sorted(idx)), m)

    @property
    def idx(self) -> np.ndarray:
        """0-based channel indices."""
        return np.array(self.channels, dtype=int) - 1

    def __len__(self) -> int:
        return len(self.channels)

    def window_indices(self, T: int) -> np.ndarray:
        return np.concatenate([k * self.m + self.idx for k in range(T)]) if len(self) else np.zeros(0, int)

    def current_block(self, T: int) -> np.ndarray:
        """Row indices of the newest block's compromised entries in a stacked window."""
        return (T - 1) * self.m + self.idx

    def mask(self) -> np.ndarray:
        mk = np.zeros(self.m, dtype=bool)
        mk[self.idx] = True
        return mk


class AttackHistory:
    """The last ``T - 1`` injections, oldest first, zero-padded before warm-up."""

    def __init__(self, support: AttackSupport, T: int):
        self.support = support
        self.T = T
        self._off = ~support.mask()
        self._buf: deque[np.ndarray] = deque(
            (np.zeros(support.m) for _ in range(T - 1)), maxlen=max(T - 1, 0))

    def push(self, e_i: np.ndarray) -> None:
        e_i = np.array(e_i, dtype=float)
        if e_i.shape != (self.support.m,):
            raise ConfigError(f"injection must have shape ({self.support.m},)")
        leak = np.max(np.abs(e_i[self._off]), initial=0.0)
        if leak > LEAK_TOL * max(1.0, np.max(np.abs(e_i))):
            raise NumericalError(f"injection leaks outside the support (|e| = {leak:.3g})")
        e_i[self._off] = 0.0
        if self.T > 1:
            self._buf.append(e_i)

    def stacked(self) -> np.ndarray:
        if self.T == 1:
            return np.zeros(0)
        return np.concatenate(list(self._buf))

    def padded(self) -> np.ndarray:
        """``[e_{I-}; 0]`` over a full window."""
        return np.concatenate([self.stacked(), np.zeros(self.support.m)])

    def __len__(self) -> int:
        return len(self._buf)


@dataclass(frozen=True)
class GeneratorConfig:
    epsilon: float
    epsilon_v: float = 0.0
    lambda0: float = 1e-4
    M: int = 2000
    tau: float = 1e-6
    early_stop: bool = True
    # "quadrature": sqrt(eps^2 - eps_v^2); "triangle": eps - eps_v (robust to any noise alignment)
    budget: str = "quadrature"
    trace_every: int = 0
    # relative design margin: iterates pinned on the boundary must not round above the threshold
    margin: float = 1e-10

    def __post_init__(self):
        if not self.epsilon > self.epsilon_v >= 0:
            raise ConfigError("need epsilon > epsilon_v >= 0")
        if self.lambda0 <= 0:
            raise ConfigError("lambda0 must be positive")
        if self.M < 0:
            raise ConfigError("M must be >= 0")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.budget not in ("quadrature", "triangle"):
            raise ConfigError(f"unknown budget rule {self.budget!r}")
        if not 0.0 <= self.margin < 1.0:
            raise ConfigError("margin must lie in [0, 1)")

    @property
    def eps_tilde(self) -> float:
        if self.budget == "triangle":
            raw = self.epsilon - self.epsilon_v
        else:
            raw = float(np.sqrt(self.epsilon ** 2 - self.epsilon_v ** 2))
        return raw * (1.0 - self.margin)


# --------------------------------------------------------------------------
# parameterization and null space
# --------------------------------------------------------------------------

def parameterize_attack(horizon: HorizonObservation, w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """``e_I = U1 Sigma w1 + U2 w2``; bias ``||w1||``, residual ``||w2||``."""
    return horizon.U1Sigma @ np.asarray(w1, float) + horizon.U2 @ np.asarray(w2, float)


def history_offsets(horizon: HorizonObservation, history: AttackHistory) -> tuple[np.ndarray, np.ndarray]:
    padded = history.padded()
    if padded.shape != (horizon.rows,):
        raise ConfigError("history does not match the window dimension")
    w1 = (horizon.U1.T @ padded) / horizon.Sigma
    w2 = horizon.U2.T @ padded
    return w1, w2


@dataclass(frozen=True)
class NullSpaceBasis:
    """Orthonormal ``N = [N1; N2]`` with ``[U1 Sigma, U2]`` rows off the newest-block support mapped to 0.

    ``N2 = Q2 diag(S2) W2^T`` (thin SVD, numerical rank ``r``); ``N2_perp`` spans
    the complement of range(N2).
    """

    N: np.ndarray
    n: int
    Q2: np.ndarray
    S2: np.ndarray
    W2: np.ndarray
    N2_perp: np.ndarray
    U12: np.ndarray
    U22: np.ndarray

    @property
    def N1(self) -> np.ndarray:
        return self.N[: self.n]

    @property
    def N2(self) -> np.ndarray:
        return self.N[self.n:]

    @property
    def q(self) -> int:
        return self.N.shape[1]

    @cached_property
    def N2_pinv(self) -> np.ndarray:
        return (self.W2 / self.S2) @ self.Q2.T

    @cached_property
    def R2(self) -> np.ndarray:
        """``diag(S2) W2^T``: N2 expressed in the ``Q2`` coordinates."""
        return self.S2[:, None] * self.W2.T


def nullspace_basis(horizon: HorizonObservation, support: AttackSupport) -> NullSpaceBasis:
    if len(support) == 0:
        raise ConfigError("support admits no stealthy injection: empty support")
    T, n = horizon.T, horizon.n
    cur = support.current_block(T)
    off = np.setdiff1d(np.arange(horizon.rows), cur)
    full = np.hstack([horizon.U1Sigma, horizon.U2])
    restricted = full[off]
    _, s, Vt = np.linalg.svd(restricted, full_matrices=True)
    tol = max(restricted.shape) * np.finfo(float).eps * (s[0] if s.size else 1.0)
    rank = int(np.sum(s > tol))
    N = Vt[rank:].T
    if N.shape[1] == 0:
        raise ConfigError("support admits no stealthy injection: trivial null space")
    N = N * _column_signs(N)
    N2 = N[n:]
    Q, s2, W2t = np.linalg.svd(N2, full_matrices=True)
    tol2 = max(N2.shape) * np.finfo(float).eps * (s2[0] if s2.size else 1.0)
    r = int(np.sum(s2 > tol2))
    block = horizon.block_rows(T - 1)
    return NullSpaceBasis(
        N=N, n=n, Q2=Q[:, :r], S2=s2[:r], W2=W2t[:r].T, N2_perp=Q[:, r:],
        U12=horizon.U1Sigma[block][support.idx], U22=horizon.U2[block][support.idx],
    )


def _column_signs(N: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(N), axis=0)
    s = np.sign(N[idx, np.arange(N.shape[1])])
    s[s == 0] = 1.0
    return s


# --------------------------------------------------------------------------
# workspace and the ascent step rules
# --------------------------------------------------------------------------

@dataclass
class GeneratorWorkspace:
    horizon: HorizonObservation
    support: AttackSupport
    basis: NullSpaceBasis
    w1_minus: np.ndarray
    w2_minus: np.ndarray
    eps_tilde: float
    v: np.ndarray = None

    def __post_init__(self):
        if self.v is None:
            self.v = self.initial_iterate()

    @property
    def N1(self):
        return self.basis.N1

    @property
    def N2(self):
        return self.basis.N2

    def initial_iterate(self) -> np.ndarray:
        """``v_1 = -N2^+ w2^-``, the minimizer of the residual."""
        return -self.basis.N2_pinv @ self.w2_minus

    def alpha(self, v=None) -> float:
        v = self.v if v is None else v
        return float(np.linalg.norm(self.N1 @ v + self.w1_minus))

    def residual_vector(self, v=None) -> np.ndarray:
        v = self.v if v is None else v
        return self.N2 @ v + self.w2_minus

    def residual(self, v=None) -> float:
        return float(np.linalg.norm(self.residual_vector(v)))

    @property
    def history_floor(self) -> float:
        """``||N2_perp^T w2^-||``: smallest residual any current injection can reach."""
        return float(np.linalg.norm(self.basis.N2_perp.T @ self.w2_minus))


def make_workspace(horizon: HorizonObservation, support: AttackSupport, history: AttackHistory,
                   eps_tilde: float, basis: NullSpaceBasis | None = None) -> GeneratorWorkspace:
    basis = nullspace_basis(horizon, support) if basis is None else basis
    w1, w2 = history_offsets(horizon, history)
    return GeneratorWorkspace(horizon, support, basis, w1, w2, eps_tilde)


def feasibility_check(ws: GeneratorWorkspace) -> bool:
    return ws.history_floor <= ws.eps_tilde


def step_direction(ws: GeneratorWorkspace, tau: float, v=None) -> np.ndarray:
    v = ws.v if v is None else v
    g = ws.N1.T @ (ws.N1 @ v + ws.w1_minus)
    gn = np.linalg.norm(g)
    return g / gn if gn >= tau else g


def seed_direction(ws: GeneratorWorkspace, v=None) -> np.ndarray:
    """Unit direction of fastest bias growth, used while the bias is (numerically) zero.

    Top right singular vector of ``N1``, signed so that it does not decrease the bias.
    """
    v = ws.v if v is None else v
    _, _, Wt = np.linalg.svd(ws.N1)
    d = Wt[0].copy()
    a = ws.N1 @ v + ws.w1_minus
    if a @ (ws.N1 @ d) < 0:
        d = -d
    return d


@dataclass
class StepSize:
    value: float
    boundary: bool = False
    infeasible: bool = False


def step_size(ws: GeneratorWorkspace, d: np.ndarray, lambda0: float, eps_tilde: float, v=None) -> StepSize:
    r = ws.residual_vector(v)
    Nd = ws.N2 @ d
    nd = np.linalg.norm(Nd)
    if nd == 0.0:
        return StepSize(lambda0)
    if np.linalg.norm(r + lambda0 * Nd) <= eps_tilde:
        return StepSize(lambda0)
    rd = r @ Nd / nd
    disc = rd * rd - r @ r + eps_tilde ** 2
    if disc < 0:
        return StepSize(0.0, boundary=True, infeasible=True)
    lam = (-rd + np.sqrt(disc)) / nd
    return StepSize(max(lam, 0.0), boundary=True)


# --------------------------------------------------------------------------
# ascent loop (reduced coordinates)
# --------------------------------------------------------------------------

def _ascent_loop(N1, w1, R2, c, rho2, v, seed, lambda0, eps_t, tau, M, early_stop, trace_every, trace):
    """Iterate ``v <- v + lambda_k d_k``; all residual algebra in the Q2 coordinates.

    ``r_k = Q2 s + p`` with ``s = R2 v + c`` and ``p`` orthogonal to range(N2), so
    ``||r_k||^2 = ||s||^2 + rho2`` and ``r_k^T N2 d = s^T R2 d``.
    While the bias ``||N1 v + w1||`` is below ``tau`` the gradient vanishes, so the
    unit direction ``seed`` is used instead.
    Returns (iterations, clipped_steps).
    """
    n, q = N1.shape
    r = R2.shape[0]
    a = N1 @ v + w1
    s = R2 @ v + c
    g = np.empty(q)
    Nd = np.empty(r)
    Ad = np.empty(n)
    eps2 = eps_t * eps_t
    stall = 0
    clipped = 0
    k = 0
    while k < M:
        an2 = 0.0
        for i in range(n):
            an2 += a[i] * a[i]
        if an2 < tau * tau:
            for j in range(q):
                g[j] = seed[j]
            dn = 1.0
        else:
            # g = N1^T a
            gn2 = 0.0
            for j in range(q):
                acc = 0.0
                for i in range(n):
                    acc += N1[i, j] * a[i]
                g[j] = acc
                gn2 += acc * acc
            gn = np.sqrt(gn2)
            if gn >= tau:
                for j in range(q):
                    g[j] /= gn
                dn = 1.0
            else:
                dn = gn
        nd2 = 0.0
        for i in range(r):
            acc = 0.0
            for j in range(q):
                acc += R2[i, j] * g[j]
            Nd[i] = acc
            nd2 += acc * acc
        if nd2 == 0.0:
            lam = lambda0
        else:
            ss = 0.0
            trial = 0.0
            sd = 0.0
            for i in range(r):
                t = s[i] + lambda0 * Nd[i]
                trial += t * t
                ss += s[i] * s[i]
                sd += s[i] * Nd[i]
            if trial + rho2 <= eps2:
                lam = lambda0
            else:
                nd = np.sqrt(nd2)
                rd = sd / nd
                disc = rd * rd - (ss + rho2) + eps2
                if disc < 0.0:
                    lam = 0.0
                    clipped += 1
                else:
                    lam = (-rd + np.sqrt(disc)) / nd
                    if lam < 0.0:
                        lam = 0.0
                        clipped += 1
        for j in range(q):
            v[j] += lam * g[j]
        for i in range(n):
            acc = 0.0
            for j in range(q):
                acc += N1[i, j] * g[j]
            a[i] += lam * acc
        for i in range(r):
            s[i] += lam * Nd[i]
        k += 1
        if trace_every > 0 and k % trace_every == 0:
            an = 0.0
            for i in range(n):
                an += a[i] * a[i]
            trace[k // trace_every - 1] = np.sqrt(an)
        if early_stop:
            if lam * dn < STALL_STEP:
                stall += 1
                if stall >= STALL_COUNT:
                    break
            else:
                stall = 0
    return k, clipped


try:  # pragma: no cover - exercised implicitly when numba is present
    import numba

    _ascent_loop_fast = numba.njit(cache=True)(_ascent_loop)
except Exception:  # pragma: no cover
    _ascent_loop_fast = _ascent_loop


@dataclass
class AttackStepResult:
    e_i: np.ndarray
    alpha: float
    residual_bound: float
    feasible: bool
    iterations_used: int
    v: np.ndarray | None = None
    alpha_initial: float = 0.0
    clipped_steps: int = 0
    alpha_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))


def generate_attack(ws: GeneratorWorkspace, config: GeneratorConfig, jit: bool = True) -> AttackStepResult:
    """Run the ascent from ``v_1 = -N2^+ w2^-`` and return the newest-block injection."""
    m = ws.support.m
    if not feasibility_check(ws):
        # zero current injection: the window carries only the history
        return AttackStepResult(np.zeros(m), float(np.linalg.norm(ws.w1_minus)),
                                float(np.linalg.norm(ws.w2_minus)), False, 0)
    b = ws.basis
    v = ws.initial_iterate().astype(float).copy()
    alpha0 = ws.alpha(v)
    c = b.Q2.T @ ws.w2_minus
    rho2 = float(ws.history_floor ** 2)
    n_trace = config.M // config.trace_every if config.trace_every > 0 else 0
    trace = np.zeros(max(n_trace, 1))
    loop = _ascent_loop_fast if jit else _ascent_loop
    iters, clipped = loop(
        np.ascontiguousarray(b.N1), np.ascontiguousarray(ws.w1_minus), np.ascontiguousarray(b.R2),
        np.ascontiguousarray(c), rho2, v, seed_direction(ws, v), float(config.lambda0), float(ws.eps_tilde), float(config.tau),
        int(config.M), bool(config.early_stop), int(config.trace_every), trace)
    if not np.all(np.isfinite(v)):
        raise NumericalError(f"attack iteration diverged (|w1-| = {np.linalg.norm(ws.w1_minus):.3g}, "
                             f"|w2-| = {np.linalg.norm(ws.w2_minus):.3g})")
    ws.v = v
    z1 = ws.w1_minus + b.N1 @ v
    z2 = ws.w2_minus + b.N2 @ v
    e_i = np.zeros(m)
    e_i[ws.support.idx] = b.U12 @ z1 + b.U22 @ z2
    if iters < config.M and config.trace_every > 0:
        trace[iters // config.trace_every:] = np.linalg.norm(z1)
    return AttackStepResult(e_i, float(np.linalg.norm(z1)), float(np.linalg.norm(z2)), True, int(iters),
                            v=v.copy(), alpha_initial=alpha0, clipped_steps=int(clipped),
                            alpha_trace=trace[:n_trace])


def assemble_window_attack(ws: GeneratorWorkspace, v=None) -> np.ndarray:
    v = ws.v if v is None else np.asarray(v, float)
    e = parameterize_attack(ws.horizon, ws.w1_minus + ws.N1 @ v, ws.w2_minus + ws.N2 @ v)
    T, mm = ws.horizon.T, ws.support.m
    last = e[(T - 1) * mm:]
    off = ~ws.support.mask()
    leak = np.max(np.abs(last[off]), initial=0.0)
    if leak > LEAK_TOL * max(1.0, np.max(np.abs(e), initial=0.0)):
        raise NumericalError(f"assembled attack leaks outside the support (|e| = {leak:.3g})")
    return e


def dump_record(ws: GeneratorWorkspace, result: AttackStepResult) -> dict:
    """Structured per-window debug record."""
    return {
        "w1_minus_norm": float(np.linalg.norm(ws.w1_minus)),
        "w2_minus_norm": float(np.linalg.norm(ws.w2_minus)),
        "history_floor": ws.history_floor,
        "feasible": bool(result.feasible),
        "iterations": int(result.iterations_used),
        "alpha": result.alpha,
        "residual_bound": result.residual_bound,
        "alpha_trace": [float(a) for a in result.alpha_trace],
    }


# --------------------------------------------------------------------------
# closed-loop driver
# --------------------------------------------------------------------------

class MovingHorizonAttacker:
    """Keeps the attack history and produces one injection per window."""

    def __init__(self, horizon: HorizonObservation, support: AttackSupport, config: GeneratorConfig):
        if support.m != horizon.m:
            raise ConfigError("support and horizon disagree on the measurement dimension")
        self.horizon = horizon
        self.support = support
        self.config = config
        self.basis = nullspace_basis(horizon, support)
        self.history = AttackHistory(support, horizon.T)
        self.last_workspace: GeneratorWorkspace | None = None

    def rebase(self, horizon: HorizonObservation) -> None:
        """Swap the observation model while keeping the committed injections."""
        self.horizon = horizon
        self.basis = nullspace_basis(horizon, self.support)

    def step(self) -> AttackStepResult:
        ws = make_workspace(self.horizon, self.support, self.history, self.config.eps_tilde, self.basis)
        res = generate_attack(ws, self.config)
        if not res.feasible:
            log.info("attack infeasible (floor %.4g > %.4g); injecting zero", ws.history_floor, ws.eps_tilde)
        self.history.push(res.e_i)
        self.last_workspace = ws
        return res

    def skip(self) -> None:
        """Commit a zero injection (e.g. attack suppressed this instant)."""
        self.history.push(np.zeros(self.support.m))
