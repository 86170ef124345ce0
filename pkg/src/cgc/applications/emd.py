"""Time-frequency energy maps from a Gabor dictionary and ridge partitions.

Every grid pair ``(tau, omega)`` contributes the kernel
``chi_c chi_c^T + chi_s chi_s^T``; the energy of a pair is the squared
projection of the shared coefficient vector ``K^-1 v`` on its two atoms.
Modes are separated by following ridges of the energy across time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputError
from ..kernels import chol_jitter, chol_solve, gabor


@dataclass
class EmdConfig:
    """Time and frequency grids, Gabor width ``alpha`` and ridge filters.

    ``noise`` is the variance of the white-noise mode added to the summed
    kernel. Ridges keep local maxima above ``rel_threshold`` times the
    global maximum and must span at least ``min_length`` of the time grid.
    """

    taus: np.ndarray
    omegas: np.ndarray
    alpha: float = 20.0
    noise: float = 1e-4
    rel_threshold: float = 0.05
    min_length: float = 0.2

    def __post_init__(self):
        self.taus = np.asarray(self.taus, dtype=float).ravel()
        self.omegas = np.asarray(self.omegas, dtype=float).ravel()
        if self.taus.size == 0 or self.omegas.size == 0:
            raise InputError("time and frequency grids must be nonempty")
        if np.any(self.omegas <= 0):
            raise InputError("frequencies must be positive")
        if np.any(np.diff(self.omegas) <= 0) or np.any(np.diff(self.taus) <= 0):
            raise InputError("grids must be strictly increasing")
        if not (self.alpha > 0 and self.noise > 0):
            raise InputError("alpha and noise must be positive")


@dataclass
class EmdResult:
    energy: np.ndarray  # (n_tau, n_omega)
    labels: np.ndarray  # partition index per cell, -1 where no ridge is present
    ridges: list[np.ndarray]  # omega index per tau, -1 where absent
    frequencies: np.ndarray  # (n_components, n_tau), nan where absent
    coeffs: np.ndarray

    @property
    def n_components(self) -> int:
        return len(self.ridges)


def _dictionary(t, cfg: EmdConfig):
    """Cosine and sine atoms with shape ``(n_tau, n_omega, n_t)`` each."""
    C = np.empty((cfg.taus.size, cfg.omegas.size, t.size))
    S = np.empty_like(C)
    for i, tau in enumerate(cfg.taus):
        for j, om in enumerate(cfg.omegas):
            C[i, j], S[i, j] = gabor(tau, om, cfg.alpha, t)
    return C, S


def energy_map(t, v, cfg: EmdConfig):
    """``(E, coeffs)`` with ``E[i, j] = (chi_c . c)^2 + (chi_s . c)^2`` and ``c = K^-1 v``."""
    t = np.asarray(t, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if t.size != v.size:
        raise InputError("time grid and signal differ in length")
    nyquist = np.pi / np.min(np.diff(t))
    if cfg.omegas.max() >= nyquist:
        raise InputError(f"frequency grid exceeds the Nyquist limit {nyquist:.4g}")
    C, S = _dictionary(t, cfg)
    Phi = np.concatenate([C.reshape(-1, t.size), S.reshape(-1, t.size)], axis=0)
    K = Phi.T @ Phi
    K[np.diag_indices_from(K)] += cfg.noise
    L, _ = chol_jitter(K)
    c = chol_solve(L, v)
    E = np.einsum("ijt,t->ij", C, c) ** 2 + np.einsum("ijt,t->ij", S, c) ** 2
    return E, c


def _local_maxima(row, floor):
    n = row.size
    out = []
    for j in range(n):
        left = row[j - 1] if j > 0 else -np.inf
        right = row[j + 1] if j < n - 1 else -np.inf
        if row[j] >= floor and row[j] > left and row[j] >= right:
            out.append(j)
    return out


def extract_ridges(E: np.ndarray, rel_threshold: float = 0.05, min_length: float = 0.2) -> list[np.ndarray]:
    """Link per-time local maxima in frequency into ridges.

    A maximum at time index ``i`` continues a ridge whose last maximum at
    ``i - 1`` lies within one frequency step; ties go to the closest ridge.
    Ridges shorter than ``min_length`` of the time grid are dropped. Each
    ridge is an array of frequency indices with ``-1`` where absent.
    """
    n_tau, _ = E.shape
    floor = rel_threshold * E.max() if E.size and E.max() > 0 else np.inf
    open_ridges: list[dict] = []
    done: list[dict] = []
    for i in range(n_tau):
        peaks = _local_maxima(E[i], floor)
        claimed = set()
        still_open = []
        for r in open_ridges:
            last = r["path"][-1][1]
            cands = [j for j in peaks if abs(j - last) <= 1 and j not in claimed]
            if cands:
                j = min(cands, key=lambda j: (abs(j - last), -E[i, j]))
                claimed.add(j)
                r["path"].append((i, j))
                still_open.append(r)
            else:
                done.append(r)
        for j in peaks:
            if j not in claimed:
                still_open.append({"path": [(i, j)]})
        open_ridges = still_open
    done.extend(open_ridges)
    ridges = []
    for r in done:
        if len(r["path"]) < max(2, min_length * n_tau):
            continue
        arr = -np.ones(n_tau, dtype=int)
        for i, j in r["path"]:
            arr[i] = j
        ridges.append(arr)
    ridges.sort(key=lambda a: float(np.mean(a[a >= 0])))
    return ridges


def partition(E: np.ndarray, ridges: list[np.ndarray]) -> np.ndarray:
    """Assign each cell to the ridge nearest in frequency at the same time."""
    n_tau, n_om = E.shape
    labels = -np.ones((n_tau, n_om), dtype=int)
    js = np.arange(n_om)
    for i in range(n_tau):
        present = [(k, r[i]) for k, r in enumerate(ridges) if r[i] >= 0]
        if not present:
            continue
        d = np.stack([np.abs(js - j) for _, j in present])
        labels[i] = np.array([k for k, _ in present])[np.argmin(d, axis=0)]
    return labels


def emd_energy(t, v, cfg: EmdConfig) -> EmdResult:
    """Energy map, ridge partition and per-component frequency curves.

    The frequency of component ``k`` at time ``tau`` is the grid frequency
    of largest energy among the cells assigned to ``k``.
    """
    E, c = energy_map(t, v, cfg)
    ridges = extract_ridges(E, cfg.rel_threshold, cfg.min_length)
    labels = partition(E, ridges)
    freqs = np.full((len(ridges), cfg.taus.size), np.nan)
    for k in range(len(ridges)):
        for i in range(cfg.taus.size):
            cells = np.flatnonzero(labels[i] == k)
            if cells.size:
                freqs[k, i] = cfg.omegas[cells[np.argmax(E[i, cells])]]
    return EmdResult(E, labels, ridges, freqs, c)


def two_chirps(n: int = 400, noise: float = 0.0, seed: int = 0):
    """``(t, v, true_frequencies, cfg)`` for two well-separated linear chirps.

    Instantaneous frequencies are ``2 pi (20 + 6 t)`` and ``2 pi (45 + 10 t)``.
    """
    t = np.linspace(0.0, 1.0, n)
    v = np.cos(2 * np.pi * (20 * t + 3 * t ** 2)) + 0.8 * np.cos(2 * np.pi * (45 * t + 5 * t ** 2))
    if noise > 0:
        v = v + noise * np.random.default_rng(seed).standard_normal(n)
    cfg = EmdConfig(np.linspace(0.0, 1.0, 41), np.geomspace(60.0, 600.0, 117))

    def truth(tau):
        tau = np.asarray(tau, dtype=float)
        return np.stack([2 * np.pi * (20 + 6 * tau), 2 * np.pi * (45 + 10 * tau)])

    return t, v, truth, cfg
