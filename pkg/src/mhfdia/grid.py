"""IEEE 14-bus small-signal closed loop (swing equations + lossless DC network)."""
from __future__ import annotations

import configparser
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .plant import PlantModel


@dataclass(frozen=True)
class GridTopology:
    """Kron-partitioned network data; generator internal nodes come first."""

    L: np.ndarray
    n_g: int
    n_b: int
    M_inertia: np.ndarray
    D_g: np.ndarray
    P_node: np.ndarray
    P_d: np.ndarray
    K_reg: np.ndarray | None = None

    def __post_init__(self):
        N = self.n_g + self.n_b
        L = np.asarray(self.L, float)
        if L.shape != (N, N):
            raise ConfigError(f"Laplacian must be {N}x{N}, got {L.shape}")
        if not np.allclose(L, L.T, atol=1e-8):
            raise ConfigError("Laplacian must be symmetric")
        if np.max(np.abs(L.sum(axis=1))) > 1e-8:
            raise ConfigError("Laplacian rows must sum to zero")
        if np.any(np.asarray(self.M_inertia) <= 0) or np.any(np.asarray(self.D_g) <= 0):
            raise ConfigError("inertia and damping must be strictly positive")
        if np.linalg.matrix_rank(self.L_ll) < self.n_b:
            raise ConfigError("load-bus block L_ll is singular")

    @property
    def L_gg(self):
        return self.L[: self.n_g, : self.n_g]

    @property
    def L_gl(self):
        return self.L[: self.n_g, self.n_g:]

    @property
    def L_lg(self):
        return self.L[self.n_g:, : self.n_g]

    @property
    def L_ll(self):
        return self.L[self.n_g:, self.n_g:]

    def reduced_laplacian(self) -> np.ndarray:
        """``L_gg - L_gl L_ll^-1 L_lg``."""
        return self.L_gg - self.L_gl @ np.linalg.solve(self.L_ll, self.L_lg)


def read_topology(path) -> GridTopology:
    """Parse a topology file (see ``data/ieee14.topology`` for the schema)."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        read = cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not read:
        raise ConfigError(f"cannot read topology file {path}")
    return _topology_from_parser(cp, str(path))


def _topology_from_parser(cp: configparser.ConfigParser, source: str) -> GridTopology:
    try:
        n_b = cp.getint("system", "buses")
        gens = [[float(t) for t in val.split(",")] for val in cp["generators"].values()]
        lines = []
        for key, val in cp["lines"].items():
            a, b = (int(t) for t in key.split("-"))
            lines.append((a, b, float(val)))
        loads = {int(k): float(v) for k, v in cp["loads"].items()} if cp.has_section("loads") else {}
        reg = cp["regulation"] if cp.has_section("regulation") else None
    except (KeyError, ValueError, configparser.Error) as exc:
        raise ConfigError(f"{source}: malformed topology ({exc})") from None
    n_g = len(gens)
    N = n_g + n_b
    L = np.zeros((N, N))

    def connect(i, j, b):
        L[i, j] -= b
        L[j, i] -= b
        L[i, i] += b
        L[j, j] += b

    for a, b, sus in lines:
        if not (1 <= a <= n_b and 1 <= b <= n_b):
            raise ConfigError(f"{source}: line {a}-{b} references an unknown bus")
        connect(n_g + a - 1, n_g + b - 1, sus)
    for k, (bus, _, _, xd) in enumerate(gens):
        if xd <= 0:
            raise ConfigError(f"{source}: generator reactance must be positive")
        connect(k, n_g + int(bus) - 1, 1.0 / xd)
    P_d = np.zeros(n_b)
    for bus, p in loads.items():
        P_d[bus - 1] = p
    K_reg = None
    if reg is not None:
        kp = float(reg.get("angle_gain", 0.0))
        kd = float(reg.get("frequency_gain", 0.0))
        K_reg = regulation_gain(n_g, n_b, kp, kd)
    return GridTopology(
        L=L, n_g=n_g, n_b=n_b,
        M_inertia=np.array([g[1] for g in gens]), D_g=np.array([g[2] for g in gens]),
        P_node=np.eye(n_b), P_d=P_d, K_reg=K_reg,
    )


def regulation_gain(n_g: int, n_b: int, angle_gain: float, frequency_gain: float) -> np.ndarray:
    """``u = K x`` acting on mechanical power only: ``P_m = -kp delta - kd omega``."""
    K = np.zeros((n_g + n_b, 2 * n_g))
    K[:n_g, :n_g] = -angle_gain * np.eye(n_g)
    K[:n_g, n_g:] = -frequency_gain * np.eye(n_g)
    return K


def default_ieee14() -> GridTopology:
    ref = resources.files("mhfdia") / "data" / "ieee14.topology"
    with resources.as_file(ref) as p:
        return read_topology(Path(p))


@dataclass(frozen=True)
class GridPlant:
    topology: GridTopology
    plant: PlantModel
    A_c: np.ndarray
    B_c: np.ndarray

    @property
    def n(self):
        return self.plant.n

    @property
    def m(self):
        return self.plant.m

    def bus_angles(self, x: np.ndarray) -> np.ndarray:
        """``theta = -L_ll^-1 (L_lg delta - P_d)``."""
        topo = self.topology
        delta = x[: topo.n_g]
        return -np.linalg.solve(topo.L_ll, topo.L_lg @ delta - topo.P_d)


def continuous_model(topo: GridTopology) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n_g, n_b = topo.n_g, topo.n_b
    Minv = np.diag(1.0 / np.asarray(topo.M_inertia, float))
    Z, I = np.zeros((n_g, n_g)), np.eye(n_g)
    A_c = np.block([[Z, I], [-Minv @ topo.reduced_laplacian(), -Minv @ np.diag(topo.D_g)]])
    LllinvLlg = np.linalg.solve(topo.L_ll, topo.L_lg)
    B_c = np.block([
        [np.zeros((n_g, n_g)), np.zeros((n_g, n_b))],
        [Minv, -Minv @ topo.L_gl @ np.linalg.inv(topo.L_ll)],
    ])
    C = np.block([
        [np.zeros((n_g, n_g)), I],
        [-topo.P_node @ LllinvLlg, np.zeros((n_b, n_g))],
    ])
    return A_c, B_c, C


def build_grid_plant(topology: GridTopology, Ts: float = 0.01, K_reg: np.ndarray | None = None,
                     epsilon_v: float = 0.0) -> GridPlant:
    """Forward-Euler discretization ``A = I + Ts (A_c + B_c K)``; must be Schur stable."""
    if Ts <= 0:
        raise ConfigError("Ts must be positive")
    A_c, B_c, C = continuous_model(topology)
    K = topology.K_reg if K_reg is None else np.asarray(K_reg, float)
    A_cl = A_c if K is None else A_c + B_c @ K
    A = np.eye(A_c.shape[0]) + Ts * A_cl
    rho = float(np.max(np.abs(np.linalg.eigvals(A))))
    if not 0.0 < rho < 1.0:
        raise ConfigError(f"discretized grid is not stable (rho = {rho:.6g}): reduce Ts or supply K_reg")
    plant = PlantModel(A=A, C=C, Ts=Ts, epsilon_v=epsilon_v, require_stable=True)
    return GridPlant(topology, plant, A_c, B_c)


def grid_measurement(plant: GridPlant, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, float)
    if x.shape != (plant.n,):
        raise ConfigError(f"grid state must have dimension {plant.n}")
    return plant.plant.C @ x
