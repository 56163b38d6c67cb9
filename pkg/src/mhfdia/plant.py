"""Discrete LTI plant, windowed (backward) observation operator and bounded noise.

Window convention: a window of length ``T`` ending at instant ``i`` stacks
``y_{i-T+1}, ..., y_i`` oldest first, so that ``y_I = H x_i + v_I`` with

    H = [C A^{1-T}; C A^{2-T}; ...; C]
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, NumericalError

MAX_CONDITION = 1e12
NOISE_KINDS = ("none", "uniform-ball", "truncated-gaussian")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PlantModel:
    """Closed-loop plant ``x+ = A x``, ``y = C x + v`` with ``||v_I|| <= epsilon_v``."""

    A: np.ndarray
    C: np.ndarray
    Ts: float = 1.0
    epsilon_v: float = 0.0
    require_stable: bool = False

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ConfigError(f"A must be square, got {A.shape}")
        if C.shape[1] != A.shape[0]:
            raise ConfigError(f"C has {C.shape[1]} columns but A is {A.shape[0]}x{A.shape[0]}")
        if self.Ts <= 0:
            raise ConfigError("Ts must be positive")
        if self.epsilon_v < 0:
            raise ConfigError("epsilon_v must be non-negative")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(C))):
            raise ConfigError("A and C must be finite")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "C", _frozen(C))
        if self.require_stable:
            rho = self.spectral_radius
            if not 0.0 < rho < 1.0:
                raise ConfigError(f"plant is not asymptotically stable: rho(A) = {rho:.6g}")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))

    def step(self, x: np.ndarray) -> np.ndarray:
        return self.A @ x

    def measure(self, x: np.ndarray) -> np.ndarray:
        return self.C @ x


def linearize(dfdx, dfdu, dgdx, K, Ts: float, **plant_kwargs) -> PlantModel:
    """Euler-discretize a Jacobian pair and close the loop with ``u = K x``.

    ``A = (dfdx Ts + I) + (dfdu Ts) K`` and ``C = dgdx``.
    """
    dfdx = np.atleast_2d(np.asarray(dfdx, dtype=float))
    dfdu = np.atleast_2d(np.asarray(dfdu, dtype=float))
    dgdx = np.atleast_2d(np.asarray(dgdx, dtype=float))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    n = dfdx.shape[0]
    if Ts <= 0:
        raise ConfigError("Ts must be positive")
    if dfdx.shape != (n, n):
        raise ConfigError(f"df/dx must be square, got {dfdx.shape}")
    if dfdu.shape[0] != n:
        raise ConfigError(f"df/du has {dfdu.shape[0]} rows, expected {n}")
    if K.shape != (dfdu.shape[1], n):
        raise ConfigError(f"K must be {dfdu.shape[1]}x{n}, got {K.shape}")
    if dgdx.shape[1] != n:
        raise ConfigError(f"dg/dx has {dgdx.shape[1]} columns, expected {n}")
    A = (dfdx * Ts + np.eye(n)) + (dfdu * Ts) @ K
    return PlantModel(A=A, C=dgdx, Ts=Ts, **plant_kwargs)


def backward_powers(A: np.ndarray, T: int) -> list[np.ndarray]:
    """``[A^0, A^-1, ..., A^-(T-1)]`` by repeated linear solves."""
    A = np.asarray(A, dtype=float)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise ConfigError(f"backward powers undefined: cond(A) = {cond:.3g}")
    powers = [np.eye(A.shape[0])]
    for _ in range(T - 1):
        powers.append(np.linalg.solve(A, powers[-1]))
    return powers


def _sign_fix(U: np.ndarray) -> np.ndarray:
    """Column signs making the largest-magnitude entry of each column positive."""
    if U.size == 0:
        return np.ones(U.shape[1])
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return signs


@dataclass(frozen=True)
class HorizonObservation:
    """Backward observation matrix over a window of length ``T`` and its SVD.

    ``H = U1 diag(Sigma) V^T``; ``U2`` spans the orthogonal complement of range(H).
    """

    T: int
    H: np.ndarray
    U1: np.ndarray
    U2: np.ndarray
    Sigma: np.ndarray
    V: np.ndarray
    m: int

    @classmethod
    def from_matrix(cls, H: np.ndarray, T: int, m: int) -> "HorizonObservation":
        """Factor an arbitrary stacked observation matrix (rows ``T*m``)."""
        H = np.asarray(H, dtype=float)
        if H.shape[0] != T * m:
            raise ConfigError(f"H has {H.shape[0]} rows, expected T*m = {T * m}")
        n = H.shape[1]
        if not np.all(np.isfinite(H)):
            raise NumericalError("H contains non-finite entries")
        U, s, Vt = np.linalg.svd(H, full_matrices=True)
        tol = max(H.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
        rank = int(np.sum(s > tol))
        if rank < n:
            raise ConfigError(f"window not observable: rank(H) = {rank} < n = {n}")
        U1, U2, V = U[:, :n], U[:, n:], Vt.T
        signs = _sign_fix(U1)
        U1 = U1 * signs
        V = V * signs
        U2 = U2 * _sign_fix(U2)
        return cls(T=T, H=_frozen(H), U1=_frozen(U1), U2=_frozen(U2),
                   Sigma=_frozen(s[:n]), V=_frozen(V), m=m)

    @property
    def n(self) -> int:
        return self.H.shape[1]

    @property
    def rows(self) -> int:
        return self.H.shape[0]

    @property
    def U1Sigma(self) -> np.ndarray:
        return self.U1 * self.Sigma

    @property
    def pinv(self) -> np.ndarray:
        return (self.V / self.Sigma) @ self.U1.T

    @property
    def projector(self) -> np.ndarray:
        """``I - H H^+`` (equal to ``U2 U2^T``)."""
        return self.U2 @ self.U2.T

    def block_rows(self, k: int) -> slice:
        """Row slice of block ``k`` (0 = oldest sample)."""
        return slice(k * self.m, (k + 1) * self.m)


def build_horizon(plant: PlantModel, T: int) -> HorizonObservation:
    if T < 1:
        raise ConfigError("window length T must be >= 1")
    powers = backward_powers(plant.A, T)
    # block j (oldest first) is C A^{-(T-1-j)}
    H = np.vstack([plant.C @ powers[T - 1 - j] for j in range(T)])
    return HorizonObservation.from_matrix(H, T, plant.m)


def stack_window(samples: Sequence[np.ndarray], T: int | None = None, m: int | None = None) -> np.ndarray:
    """Concatenate ``T`` measurement vectors, oldest first."""
    samples = [np.atleast_1d(np.asarray(s, dtype=float)) for s in samples]
    if T is not None and len(samples) != T:
        raise ConfigError(f"expected {T} samples, got {len(samples)}")
    if not samples:
        raise ConfigError("window needs at least one sample")
    dims = {s.shape for s in samples}
    if len(dims) != 1 or samples[0].ndim != 1:
        raise ConfigError(f"samples must be 1-D vectors of equal length, got {sorted(dims)}")
    if m is not None and samples[0].shape[0] != m:
        raise ConfigError(f"expected samples of dimension {m}, got {samples[0].shape[0]}")
    return np.concatenate(samples)


def unstack_window(y: np.ndarray, T: int) -> list[np.ndarray]:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size % T:
        raise ConfigError(f"window of length {y.size} does not split into {T} blocks")
    return list(y.reshape(T, -1))


@dataclass
class NoiseModel:
    """Bounded measurement noise.

    ``sample_window`` draws a stacked window noise with ``||v_I|| <= epsilon_v``.
    ``sample_step`` draws per-instant noise bounded by ``epsilon_v / sqrt(T)`` so
    that any ``T`` consecutive draws stacked together respect the window bound.
    """

    kind: str = "uniform-ball"
    epsilon_v: float = 0.0
    seed: int | None = None
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}; choose from {NOISE_KINDS}")
        if self.epsilon_v < 0:
            raise ConfigError("epsilon_v must be non-negative")
        self.rng = np.random.default_rng(self.seed)

    def _draw(self, dim: int, bound: float) -> np.ndarray:
        if self.kind == "none" or bound == 0.0:
            return np.zeros(dim)
        if self.kind == "uniform-ball":
            g = self.rng.standard_normal(dim)
            norm = np.linalg.norm(g)
            radius = bound * self.rng.random() ** (1.0 / dim)
            return g * (radius / norm) if norm > 0 else np.zeros(dim)
        # truncated gaussian: per-coordinate sigma chosen so the bound sits at ~3 sigma
        sigma = bound / (3.0 * np.sqrt(dim))
        while True:
            v = sigma * self.rng.standard_normal(dim)
            if np.linalg.norm(v) <= bound:
                return v

    def sample_window(self, T: int, m: int) -> np.ndarray:
        return self._draw(T * m, self.epsilon_v)

    def sample_step(self, m: int, T: int) -> np.ndarray:
        return self._draw(m, self.epsilon_v / np.sqrt(T))


def sample_noise(model: NoiseModel, T: int, m: int) -> np.ndarray:
    return model.sample_window(T, m)


def load_matrix(path) -> np.ndarray:
    """Read a dense matrix: first line ``rows cols`` then row-major decimals."""
    text = Path(path).read_text().split()
    if len(text) < 2:
        raise ConfigError(f"{path}: missing 'rows cols' header")
    try:
        rows, cols = int(text[0]), int(text[1])
        values = np.array([float(t) for t in text[2:]])
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if values.size != rows * cols:
        raise ConfigError(f"{path}: expected {rows * cols} entries, found {values.size}")
    return values.reshape(rows, cols)


def save_matrix(path, M: np.ndarray) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    lines = [f"{M.shape[0]} {M.shape[1]}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in M]
    Path(path).write_text("\n".join(lines) + "\n")
