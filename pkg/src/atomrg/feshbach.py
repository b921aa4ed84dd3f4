"""Smooth Feshbach map as a reusable linear-algebra facility.

A validated pair (H, T) for commuting cutoffs (chi, chibar) with
chi^2 + chibar^2 = 1 supports the Schur-complement-like reduction
F = H_chi - chi W chibar (H_chibar|Ran chibar)^{-1} chibar W chi and the
auxiliary operator Q = chi - chibar (H_chibar)^{-1} chibar W chi, with the
kernel correspondences of the isospectrality theorem.

"Bounded invertible on a subspace" is implemented by orthonormal-basis
restriction: Ran chibar is spanned by eigenvectors of chibar with eigenvalue
above a rank tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (FeshbachPairInvalid, HChiBarSingular, NeumannConditionFailed,
                     PartitionOfUnityViolated, TNotInvertibleOnRange)

RANK_TOL = 1e-10


def _range_basis(P: np.ndarray, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal columns spanning the numerical range of a Hermitian matrix."""
    vals, vecs = np.linalg.eigh(P)
    keep = np.abs(vals) > rank_tol
    return vecs[:, keep]


def restricted_inverse(A: np.ndarray, V: np.ndarray, sing_tol: float = 1e-12):
    """(A restricted to span(V))^{-1} as a full-space matrix V (V*AV)^{-1} V*.

    Returns (matrix, smallest_singular_value_of_the_restriction).
    """
    Ar = V.conj().T @ A @ V
    svals = np.linalg.svd(Ar, compute_uv=False)
    smin = float(svals[-1]) if svals.size else 0.0
    if smin <= sing_tol * max(float(svals[0]) if svals.size else 1.0, 1.0):
        return None, smin
    return V @ np.linalg.inv(Ar) @ V.conj().T, smin


@dataclass
class FeshbachPair:
    H: np.ndarray
    T: np.ndarray
    chi: np.ndarray
    chibar: np.ndarray
    norms: tuple          # (|T^-1 cb W cb|, |cb W T^-1 cb|, |T^-1 cb W chi|)
    range_chibar: np.ndarray
    t_min_singular: float
    residuals: dict

    @property
    def W(self) -> np.ndarray:
        return self.H - self.T


def validate_pair(H: np.ndarray, T: np.ndarray, chi: np.ndarray,
                  chibar: np.ndarray, comm_tol: float = 1e-9,
                  rank_tol: float = RANK_TOL) -> FeshbachPair:
    """Check the sufficient Neumann conditions and return the validated pair.

    (a') chi and chibar commute with T (and each other), chi^2+chibar^2 = 1;
    (b') T invertible on Ran chibar;
    (c') the two sandwich norms are < 1 and the cross term is bounded.
    """
    if H.shape != T.shape or chi.shape != H.shape or chibar.shape != H.shape:
        raise FeshbachPairInvalid("shape mismatch")
    scale = max(np.linalg.norm(T, 2), 1.0)
    res = {
        "partition": float(np.linalg.norm(chi @ chi + chibar @ chibar - np.eye(len(H)), 2)),
        "chi_chibar_comm": float(np.linalg.norm(chi @ chibar - chibar @ chi, 2)),
        "chi_T_comm": float(np.linalg.norm(chi @ T - T @ chi, 2)) / scale,
        "chibar_T_comm": float(np.linalg.norm(chibar @ T - T @ chibar, 2)) / scale,
    }
    if res["partition"] > comm_tol:
        raise PartitionOfUnityViolated("chi^2 + chibar^2 != 1",
                                       residual=res["partition"])
    if max(res["chi_chibar_comm"], res["chi_T_comm"], res["chibar_T_comm"]) > comm_tol:
        raise FeshbachPairInvalid("cutoffs do not commute with T", **res)

    V = _range_basis(chibar, rank_tol)
    Tinv_r, smin = restricted_inverse(T, V)
    if Tinv_r is None:
        raise TNotInvertibleOnRange("T is singular on Ran chibar", smallest_singular=smin)

    W = H - T
    n1 = float(np.linalg.norm(Tinv_r @ (chibar @ W @ chibar), 2))
    n2 = float(np.linalg.norm((chibar @ W) @ Tinv_r @ chibar, 2))
    n3 = float(np.linalg.norm(Tinv_r @ (chibar @ W @ chi), 2))
    if n1 >= 1.0 or n2 >= 1.0:
        raise NeumannConditionFailed("Neumann sandwich norm >= 1", n1=n1, n2=n2)
    return FeshbachPair(H=H, T=T, chi=chi, chibar=chibar, norms=(n1, n2, n3),
                        range_chibar=V, t_min_singular=smin, residuals=res)


def _h_chibar_inverse(pair: FeshbachPair, sing_tol: float = 1e-12) -> np.ndarray:
    H_cb = pair.T + pair.chibar @ pair.W @ pair.chibar
    inv, smin = restricted_inverse(H_cb, pair.range_chibar, sing_tol)
    if inv is None:
        raise HChiBarSingular("H_chibar is singular on Ran chibar",
                              smallest_singular=smin)
    return inv


def feshbach_map(pair: FeshbachPair) -> np.ndarray:
    """F = T + chi W chi - chi W chibar (H_chibar)^{-1} chibar W chi."""
    W, chi, chibar = pair.W, pair.chi, pair.chibar
    Rinv = _h_chibar_inverse(pair)
    return pair.T + chi @ W @ chi - chi @ W @ chibar @ Rinv @ chibar @ W @ chi


def q_operator(pair: FeshbachPair) -> np.ndarray:
    """Q = chi - chibar (H_chibar)^{-1} chibar W chi."""
    Rinv = _h_chibar_inverse(pair)
    return pair.chi - pair.chibar @ Rinv @ pair.chibar @ pair.W @ pair.chi


def neumann_series_inverse(pair: FeshbachPair, n_terms: int) -> np.ndarray:
    """(H_chibar)^{-1} chibar via the Neumann expansion; consistency probe."""
    V = pair.range_chibar
    Tinv_r, _ = restricted_inverse(pair.T, V)
    B = Tinv_r @ (pair.chibar @ pair.W @ pair.chibar)
    acc = np.zeros_like(pair.T)
    term = Tinv_r @ pair.chibar
    for _ in range(n_terms):
        acc = acc + term
        term = -B @ term
    return acc


@dataclass
class IsospectralityReport:
    dim_ker_H: int
    dim_ker_F: int
    map_residual: float           # chi ker H -> ker F and back through Q
    roundtrip_residual: float     # Q(chi u) vs u on ker H, chi(Q v) vs v on ker F
    invertibility_consistent: bool
    smallest_sv_H: float
    smallest_sv_F_restricted: float

    @property
    def passed(self) -> bool:
        return (self.dim_ker_H == self.dim_ker_F and self.invertibility_consistent)


def isospectrality_report(pair: FeshbachPair, kernel_tol: float = 1e-8) -> IsospectralityReport:
    """Numerical content of the isospectrality theorem on a validated pair."""
    F = feshbach_map(pair)
    Q = q_operator(pair)
    scaleH = max(np.linalg.norm(pair.H, 2), 1e-300)

    _, sH, VhH = np.linalg.svd(pair.H)
    kerH = VhH.conj().T[:, sH < kernel_tol * scaleH]

    Vchi = _range_basis(pair.chi)
    Fr = Vchi.conj().T @ F @ Vchi
    scaleF = max(np.linalg.norm(Fr, 2), 1e-300)
    _, sF, VhF = np.linalg.svd(Fr)
    kerF = Vchi @ VhF.conj().T[:, sF < kernel_tol * scaleF]

    map_res = 0.0
    round_res = 0.0
    for u in kerH.T:
        v = pair.chi @ u
        map_res = max(map_res, float(np.linalg.norm(F @ v)) / scaleH)
        round_res = max(round_res, float(np.linalg.norm(Q @ v - u)))
    for v in kerF.T:
        u = Q @ v
        map_res = max(map_res, float(np.linalg.norm(pair.H @ u)) / scaleH)
        round_res = max(round_res, float(np.linalg.norm(pair.chi @ u - v)))

    sminH = float(sH[-1]) / scaleH
    sminF = float(sF[-1]) / scaleF if sF.size else 0.0
    both_inv = (sminH >= kernel_tol) == (sminF >= kernel_tol)
    return IsospectralityReport(
        dim_ker_H=kerH.shape[1], dim_ker_F=kerF.shape[1],
        map_residual=map_res, roundtrip_residual=round_res,
        invertibility_consistent=both_inv,
        smallest_sv_H=sminH, smallest_sv_F_restricted=sminF)
