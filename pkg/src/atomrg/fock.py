"""Truncated bosonic Fock space over the discrete modes.

States are occupation vectors with total occupancy <= n_max, enumerated in
graded lexicographic order (by total occupancy, then lexicographic), so every
matrix is reproducible bit-for-bit.  Ladder identities that cannot leak past
the truncation boundary are exact here and asserted as such in the tests;
boundary leakage is measured, never asserted away.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import CapacityExceeded

DEFAULT_CAPACITY = 200_000


def capacity_cap() -> int:
    return int(os.environ.get("ATOMRG_CAPACITY", DEFAULT_CAPACITY))


@dataclass(frozen=True)
class FockBasis:
    frequencies: np.ndarray       # (d,)
    n_max: int
    states: np.ndarray            # (size, d) int occupation vectors
    energies: np.ndarray          # (size,) field energies

    @property
    def size(self) -> int:
        return self.states.shape[0]

    @property
    def d(self) -> int:
        return self.states.shape[1]

    def index_of(self, state) -> int:
        key = tuple(int(x) for x in state)
        return self._index[key]

    def lookup(self, state) -> int | None:
        return self._index.get(tuple(int(x) for x in state))

    @property
    def _index(self) -> dict:
        if "_index_cache" not in self.__dict__:
            object.__setattr__(self, "_index_cache",
                               {tuple(int(x) for x in s): i for i, s in enumerate(self.states)})
        return self.__dict__["_index_cache"]

    def lookup_table(self) -> tuple[np.ndarray, np.ndarray]:
        """(strides, table): table[occ @ strides] is the state index or -1.
        Supports vectorized lookup of occupation arrays within the cube
        [0, n_max]^d."""
        if "_lookup_cache" not in self.__dict__:
            strides = (self.n_max + 1) ** np.arange(self.d)
            table = -np.ones((self.n_max + 1) ** self.d, dtype=np.int64)
            table[self.states @ strides] = np.arange(self.size)
            object.__setattr__(self, "_lookup_cache", (strides, table))
        return self.__dict__["_lookup_cache"]

    def lookup_many(self, occs: np.ndarray) -> np.ndarray:
        """Vectorized index lookup; -1 for states outside the basis."""
        strides, table = self.lookup_table()
        occs = np.asarray(occs)
        bad = np.any((occs < 0) | (occs > self.n_max), axis=-1)
        enc = np.clip(occs, 0, self.n_max) @ strides
        out = table[enc]
        out[bad] = -1
        return out


def build_basis(modes, n_max: int, cap: int | None = None) -> FockBasis:
    """Enumerate occupation vectors with total occupancy <= n_max.

    `modes` is a PhotonModes or a plain frequency array.
    """
    freqs = np.asarray(getattr(modes, "frequencies", modes), dtype=float)
    d = len(freqs)
    if n_max < 0 or d < 1:
        raise ValueError("need n_max >= 0 and at least one mode")
    cap = capacity_cap() if cap is None else cap
    count = math.comb(n_max + d, d)
    if count > cap:
        raise CapacityExceeded("basis would exceed the configured capacity cap",
                               size=count, cap=cap)
    states = []
    for total in range(n_max + 1):
        for occ in _compositions(total, d):
            states.append(occ)
    arr = np.array(states, dtype=np.int64).reshape(len(states), d)
    energies = arr @ freqs
    return FockBasis(frequencies=freqs, n_max=int(n_max), states=arr, energies=energies)


def _compositions(total: int, d: int):
    """Weak compositions of `total` into d parts, lexicographic."""
    if d == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, d - 1):
            yield (first,) + rest


def create_matrix(basis: FockBasis, mode: int) -> np.ndarray:
    """Matrix of a*_mode; rows that would leave the truncation are dropped."""
    if not (0 <= mode < basis.d):
        raise ValueError("mode index out of range")
    A = np.zeros((basis.size, basis.size))
    totals = basis.states.sum(axis=1)
    for col in range(basis.size):
        if totals[col] >= basis.n_max:
            continue
        target = basis.states[col].copy()
        target[mode] += 1
        row = basis.lookup(target)
        if row is not None:
            A[row, col] = math.sqrt(basis.states[col, mode] + 1)
    return A


def annihilate_matrix(basis: FockBasis, mode: int) -> np.ndarray:
    return create_matrix(basis, mode).T


def field_energy(basis: FockBasis) -> np.ndarray:
    return np.diag(basis.energies)


def number_parity(basis: FockBasis) -> np.ndarray:
    return np.diag(np.where(basis.states.sum(axis=1) % 2 == 0, 1.0, -1.0))


def vacuum_vector(basis: FockBasis) -> np.ndarray:
    v = np.zeros(basis.size)
    v[basis.index_of((0,) * basis.d)] = 1.0
    return v


def interior_selector(basis: FockBasis) -> np.ndarray:
    """States whose total occupancy stays strictly below n_max (the guarded
    sub-basis on which creation cannot leak past the truncation)."""
    return basis.states.sum(axis=1) < basis.n_max


def pull_through_residual(basis: FockBasis, f, mode: int) -> float:
    """|| f(H_f) a*_i - a*_i f(H_f + omega_i) || on the guarded sub-basis.

    Exactly zero there: both sides act by f(E_target) * sqrt(n_i + 1).
    """
    a_star = create_matrix(basis, mode)
    w = basis.frequencies[mode]
    lhs = np.diag(f(basis.energies)) @ a_star
    rhs = a_star @ np.diag(f(basis.energies + w))
    diff = (lhs - rhs)[:, interior_selector(basis)]
    return float(np.max(np.abs(diff))) if diff.size else 0.0


def annihilation_resolution(basis: FockBasis, phi: np.ndarray, order: int = 1) -> float:
    """Discrete analogue of the resolution identity behind the sharp-norm bound:

        sum over mode tuples (i_1..i_n) of  prod_l omega_{i_l} *
            || prod_l (H_f + omega_{i_1}+..+omega_{i_l})^{-1/2} a_{i_1}..a_{i_n} phi ||^2

    For order 1 this equals ||(1 - |Omega><Omega|) phi||^2 exactly; for higher
    order it equals the squared norm of the >= n-quanta part (callers compare
    against both readings of the projection, see the docs).
    """
    total = 0.0
    ann = [annihilate_matrix(basis, i) for i in range(basis.d)]
    for tup in product(range(basis.d), repeat=order):
        v = phi.astype(complex)
        for i in tup:
            v = ann[i] @ v
        shift = 0.0
        weight = 1.0
        for i in tup:
            shift += basis.frequencies[i]
            weight *= basis.frequencies[i]
            v = v / np.sqrt(basis.energies + shift)
        total += weight * float(np.vdot(v, v).real)
    return total


def dilation_transport(basis: FockBasis, rho: float) -> tuple[np.ndarray, float]:
    """One-particle frequency transport omega -> rho*omega on the mode grid.

    Returns (T, lost) where T is the d x d transport matrix (columns are the
    images of each mode, amplitude-split so single-photon norms are preserved)
    and `lost` is the squared-amplitude mass per unit occupation dropped below
    the grid minimum (fed to the truncation ledger, never silently dropped).
    """
    from .interp import linear_weights

    d = basis.d
    T = np.zeros((d, d))
    lost = 0.0
    grid = basis.frequencies
    for i in range(d):
        target = rho * grid[i]
        if target < grid[0] - 1e-12:
            lost += 1.0          # below the representable range
            continue
        for j, w in linear_weights(grid, target):
            T[j, i] += np.sqrt(w)
    return T, lost


def dilate_vector(basis: FockBasis, rho: float, vec: np.ndarray) -> tuple[np.ndarray, float]:
    """Approximate adjoint dilation: transport occupations omega -> rho*omega.

    Vacuum maps to vacuum exactly.  Returns (vector, dropped_mass) where
    dropped_mass is the squared amplitude lost to below-grid transports.
    """
    if not (0 < rho <= 1):
        raise ValueError("rho must be in (0, 1]")
    T, _ = dilation_transport(basis, rho)
    out = np.zeros(basis.size, dtype=complex)
    dropped = 0.0
    col_alive = np.linalg.norm(T, axis=0) > 0
    for src in range(basis.size):
        amp = vec[src]
        if amp == 0:
            continue
        occ = basis.states[src]
        if occ.sum() == 0:
            out[basis.index_of(occ)] += amp
            continue
        if np.any(~col_alive[occ > 0]):
            dropped += abs(amp) ** 2
            continue
        # expand prod_i (sum_j T[j,i] a*_j)^{occ_i} |0> quantum by quantum
        wave: dict[tuple, complex] = {(0,) * basis.d: amp}
        for i in range(basis.d):
            for _ in range(occ[i]):
                nxt: dict[tuple, complex] = {}
                for state, a in wave.items():
                    for j in range(basis.d):
                        t = T[j, i]
                        if t == 0.0:
                            continue
                        ns = list(state)
                        ns[j] += 1
                        key = tuple(ns)
                        nxt[key] = nxt.get(key, 0.0) + a * t * np.sqrt(ns[j])
                wave = nxt
        norm_in = math.prod(math.sqrt(math.factorial(k)) for k in occ)
        for state, a in wave.items():
            idx = basis.lookup(state)
            val = a / norm_in
            if idx is None:
                dropped += abs(val) ** 2
            else:
                out[idx] += val
    return out, dropped
