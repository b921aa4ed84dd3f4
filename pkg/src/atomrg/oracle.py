"""Ground truth at desk scale: assembly of the full truncated Hamiltonian,
exact diagonalization, Cauchy coefficient extraction and parity checks.

The oracle works on the full truncated space (no reduced-space compression),
so it shares no approximation with the renormalization path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonHermitian
from .fock import FockBasis, build_basis, create_matrix, number_parity
from .model import DiscretizedModel


def interaction_parts(model: DiscretizedModel, basis: FockBasis):
    """(W1, W2): the one-leg and two-leg interaction operators on
    atomic (x) fock, with unit coupling (multiply by g, g^2 to use)."""
    d_at = model.atomic.dim
    freqs = model.active_frequencies
    c = model.slot_factors()
    lin = model.active_linear()
    cc = model.active_quad_cc()
    ca = model.active_quad_ca()
    size = basis.size
    # creation matrices for the active modes, located within the basis's
    # (possibly larger) mode list
    a_star = []
    for w in freqs:
        mode = int(np.nonzero(np.isclose(basis.frequencies, w))[0][0])
        a_star.append(create_matrix(basis, mode))
    W1 = np.zeros((d_at * size, d_at * size), dtype=complex)
    W2 = np.zeros_like(W1)
    for i, ai in enumerate(a_star):
        W1 += c[i] * (np.kron(lin[i], ai) + np.kron(lin[i].conj().T, ai.T))
    for i, ai in enumerate(a_star):
        for j, aj in enumerate(a_star):
            cij = c[i] * c[j]
            if np.any(ca[i, j]):
                W2 += cij * np.kron(ca[i, j], ai @ aj.T)
            if np.any(cc[i, j]):
                W2 += cij * np.kron(cc[i, j], ai @ aj)
                W2 += cij * np.kron(cc[i, j].conj().T, (ai @ aj).T)
    return W1, W2


def free_hamiltonian(model: DiscretizedModel, basis: FockBasis) -> np.ndarray:
    d_at = model.atomic.dim
    return (np.kron(model.atomic.matrix(), np.eye(basis.size))
            + np.kron(np.eye(d_at), np.diag(basis.energies)))


def full_hamiltonian(model: DiscretizedModel, basis: FockBasis, g: complex) -> np.ndarray:
    """H(g) = H_at + H_f + g W1 + g^2 W2 on atomic (x) fock."""
    W1, W2 = interaction_parts(model, basis)
    return free_hamiltonian(model, basis) + g * W1 + g ** 2 * W2


def parity_operator(model: DiscretizedModel, basis: FockBasis) -> np.ndarray:
    return np.kron(np.eye(model.atomic.dim), number_parity(basis))


@dataclass
class GroundResult:
    energy: float
    vector: np.ndarray
    residual: float
    basis: FockBasis


def ed_ground(model: DiscretizedModel, g: float, n_max: int = 8,
              basis: FockBasis | None = None) -> GroundResult:
    """Lowest eigenpair of the Hermitian assembled Hamiltonian.

    Rejects complex coupling (the assembled matrix is not Hermitian there;
    use resolvent probes instead)."""
    if abs(complex(g).imag) > 0:
        raise NonHermitian("exact diagonalization needs real coupling", g=str(g))
    g = float(np.real(g))
    basis = basis if basis is not None else build_basis(model.modes, n_max)
    H = full_hamiltonian(model, basis, g)
    herm_defect = np.max(np.abs(H - H.conj().T))
    if herm_defect > 1e-10 * max(np.max(np.abs(H)), 1.0):
        raise NonHermitian("assembled Hamiltonian is not Hermitian",
                           defect=float(herm_defect))
    evals, evecs = np.linalg.eigh(H)
    e0 = float(evals[0])
    v0 = evecs[:, 0]
    residual = float(np.linalg.norm(H @ v0 - e0 * v0))
    return GroundResult(energy=e0, vector=v0, residual=residual, basis=basis)


def truncation_study(model: DiscretizedModel, g: float, n_values) -> list[dict]:
    rows = []
    prev = None
    for n in n_values:
        E = ed_ground(model, g, n_max=n).energy
        rows.append({"n_max": n, "energy": E,
                     "delta": None if prev is None else abs(E - prev)})
        prev = E
    return rows


def cauchy_coefficients(f_samples: np.ndarray, radius: float, n_max: int):
    """Taylor coefficients from equispaced circle samples by discrete Fourier
    extraction; returns (coeffs, aliasing_flags).

    Flags mark orders whose magnitude exceeds the coefficient bound
    max|f| / r^n, the aliasing signature of under-sampling.
    """
    f = np.asarray(f_samples)
    N = len(f)
    if N < 2 * n_max:
        raise ValueError("need at least 2*n_max circle samples")
    k = np.arange(N)
    coeffs = []
    flags = []
    fmax = float(np.max(np.abs(f)))
    for n in range(n_max + 1):
        c = np.sum(f * np.exp(-2j * np.pi * k * n / N)) / N / radius ** n
        coeffs.append(c)
        flags.append(bool(abs(c) > 1.05 * fmax / radius ** n + 1e-300))
    return np.array(coeffs), flags


def parity_check(model: DiscretizedModel, g_values, n_max: int = 8,
                 rg_energies: dict | None = None) -> dict:
    """Conjugation identity (-1)^N H(g) (-1)^N = H(-g) as exact matrix
    equality, plus E(g) = E(-g) from two diagonalizations per g."""
    basis = build_basis(model.modes, n_max)
    P = parity_operator(model, basis)
    Hp = full_hamiltonian(model, basis, max(abs(float(g)) for g in g_values))
    Hm = full_hamiltonian(model, basis, -max(abs(float(g)) for g in g_values))
    op_defect = float(np.max(np.abs(P @ Hp @ P - Hm)))
    rows = []
    for g in g_values:
        g = float(g)
        ep = ed_ground(model, g, basis=basis).energy
        em = ed_ground(model, -g, basis=basis).energy
        row = {"g": g, "ed_asymmetry": abs(ep - em)}
        if rg_energies and g in rg_energies and -g in rg_energies:
            row["rg_asymmetry"] = abs(rg_energies[g] - rg_energies[-g])
        rows.append(row)
    return {"operator_defect": op_defect, "rows": rows}
