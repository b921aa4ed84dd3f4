"""Discretized atom-photon model.

The continuum momenta are reduced to a finite list of radial photon modes.
Each mode i carries a frequency omega_i in (0, Lambda] and a quadrature weight
q_i that absorbs the normalized measure dK/(8*pi*|k|^2) and the polarization
sum, i.e. q_i is the length of the mode's radial cell.  With that convention
the per-slot assembly factor of every normal-ordered operator is
sqrt(q_i * omega_i), and no 8*pi ever appears explicitly.

The atomic part is an abstract Hermitian matrix; build_model rotates it to its
eigenbasis (ascending), so H_at is stored diagonal with the ground state at
index 0 and all coupling matrices are transformed along.
"""

from __future__ import annotations

import ast
import configparser
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateGroundState, InvalidCutoff, InvalidModel

GAP_TOL = 1e-12


@dataclass(frozen=True)
class AtomicPart:
    energies: np.ndarray          # ascending eigenvalues, shape (d_at,)
    ground_index: int             # always 0 after build_model
    transform: np.ndarray         # unitary: original basis -> eigenbasis

    @property
    def dim(self) -> int:
        return len(self.energies)

    @property
    def ground_energy(self) -> float:
        return float(self.energies[self.ground_index])

    @property
    def gap(self) -> float:
        rest = np.delete(self.energies, self.ground_index)
        return float(np.min(rest) - self.ground_energy)

    def matrix(self) -> np.ndarray:
        return np.diag(self.energies).astype(complex)

    def ground_projection(self) -> np.ndarray:
        p = np.zeros((self.dim, self.dim), dtype=complex)
        p[self.ground_index, self.ground_index] = 1.0
        return p


@dataclass(frozen=True)
class PhotonModes:
    frequencies: np.ndarray       # strictly increasing, all > 0
    weights: np.ndarray           # positive cell weights (normalized measure)
    ir_cutoff: float = 0.0
    uv_cutoff: float = 1.0

    @property
    def count(self) -> int:
        return len(self.frequencies)

    @property
    def active(self) -> np.ndarray:
        return self.frequencies >= self.ir_cutoff - GAP_TOL

    def validate(self):
        w = np.asarray(self.frequencies, dtype=float)
        if w.size == 0:
            raise InvalidModel("mode list is empty")
        if np.any(w <= 0):
            raise InvalidModel("mode frequencies must be positive", frequencies=w.tolist())
        if np.any(np.diff(w) <= 0):
            raise InvalidModel("mode frequencies must be strictly increasing")
        if np.any(w > self.uv_cutoff + GAP_TOL):
            raise InvalidModel("mode above the ultraviolet cutoff",
                               uv_cutoff=self.uv_cutoff)
        q = np.asarray(self.weights, dtype=float)
        if q.shape != w.shape or np.any(~np.isfinite(q)) or np.any(q <= 0):
            raise InvalidModel("weights must be positive finite, one per mode")
        if not (0.0 <= self.ir_cutoff):
            raise InvalidCutoff("infrared cutoff must be nonnegative", sigma=self.ir_cutoff)
        if self.ir_cutoff > self.uv_cutoff + GAP_TOL:
            raise InvalidCutoff("infrared cutoff exceeds the ultraviolet cutoff",
                                sigma=self.ir_cutoff, uv_cutoff=self.uv_cutoff)


@dataclass(frozen=True)
class InteractionSpec:
    """Coupling matrices in the atomic eigenbasis.

    linear: shape (d, d_at, d_at); one matrix per mode, the creation kernel.
    The annihilation kernel is its conjugate transpose (symmetry below).
    quad_cc: shape (d, d, d_at, d_at); two-creation kernel, symmetric in (i, j).
    quad_ca: shape (d, d, d_at, d_at); creation-annihilation kernel, G[i,j] = G[j,i]^dagger.
    Coupling powers of g: 1 for one-leg kernels, 2 for two-leg kernels.
    """
    linear: np.ndarray
    quad_cc: np.ndarray
    quad_ca: np.ndarray

    def coupling_power(self, m: int, n: int) -> int:
        return m + n

    def validate(self, d: int, d_at: int):
        if self.linear.shape != (d, d_at, d_at):
            raise InvalidModel("linear coupling must be one atomic matrix per mode",
                               shape=list(self.linear.shape))
        for name, arr in (("quad_cc", self.quad_cc), ("quad_ca", self.quad_ca)):
            if arr.shape != (d, d, d_at, d_at):
                raise InvalidModel(f"{name} coupling must be a mode-pair family",
                                   shape=list(arr.shape))
        if not np.allclose(self.quad_cc, np.swapaxes(self.quad_cc, 0, 1), atol=1e-13):
            raise InvalidModel("two-creation coupling must be symmetric in the mode pair")
        herm = np.conj(np.swapaxes(np.swapaxes(self.quad_ca, 0, 1), 2, 3))
        if not np.allclose(self.quad_ca, herm, atol=1e-13):
            raise InvalidModel("creation-annihilation coupling must satisfy G[i,j] = G[j,i]^dagger")


@dataclass(frozen=True)
class DiscretizedModel:
    atomic: AtomicPart
    modes: PhotonModes
    interaction: InteractionSpec
    g: complex = 0.0
    beta: float = 0.0             # metadata only; phases live in the matrices
    name: str = "model"
    meta: dict = field(default_factory=dict)

    @property
    def active_frequencies(self) -> np.ndarray:
        return self.modes.frequencies[self.modes.active]

    @property
    def active_weights(self) -> np.ndarray:
        return self.modes.weights[self.modes.active]

    def active_linear(self) -> np.ndarray:
        return self.interaction.linear[self.modes.active]

    def active_quad_cc(self) -> np.ndarray:
        a = self.modes.active
        return self.interaction.quad_cc[np.ix_(a, a)]

    def active_quad_ca(self) -> np.ndarray:
        a = self.modes.active
        return self.interaction.quad_ca[np.ix_(a, a)]

    def slot_factors(self) -> np.ndarray:
        """Per-slot assembly factors sqrt(q_i * omega_i) for the active modes."""
        return np.sqrt(self.active_weights * self.active_frequencies)


def _as_matrix(x, d_at: int) -> np.ndarray:
    a = np.asarray(x, dtype=complex)
    if a.shape != (d_at, d_at):
        raise InvalidModel("coupling matrix has wrong shape", shape=list(a.shape))
    return a


def build_model(config: dict) -> DiscretizedModel:
    """Validate a declarative description and return the model.

    config keys: atomic {matrix}, modes {frequencies, weights, sigma, uv_cutoff},
    interaction {g10, optional g20, g11}, parameters {g, beta, name}.
    """
    at_cfg = config.get("atomic", {})
    H_raw = np.asarray(at_cfg.get("matrix"), dtype=complex)
    if H_raw.ndim != 2 or H_raw.shape[0] != H_raw.shape[1]:
        raise InvalidModel("atomic matrix must be square")
    if not np.allclose(H_raw, H_raw.conj().T, atol=1e-12):
        raise InvalidModel("atomic matrix must be Hermitian")
    evals, evecs = np.linalg.eigh(H_raw)
    d_at = len(evals)
    if d_at < 2:
        raise InvalidModel("atomic part needs at least two levels")
    gap = evals[1] - evals[0]
    if gap <= GAP_TOL:
        raise DegenerateGroundState("lowest atomic eigenvalue is degenerate", gap=float(gap))
    atomic = AtomicPart(energies=evals, ground_index=0, transform=evecs)

    md_cfg = config.get("modes", {})
    freqs = np.asarray(md_cfg.get("frequencies"), dtype=float)
    weights = np.asarray(md_cfg.get("weights", np.ones_like(freqs)), dtype=float)
    uv = float(md_cfg.get("uv_cutoff", freqs.max() if freqs.size else 1.0))
    sigma = float(md_cfg.get("sigma", 0.0))
    modes = PhotonModes(frequencies=freqs, weights=weights, ir_cutoff=0.0, uv_cutoff=uv)
    modes.validate()

    d = modes.count
    it_cfg = config.get("interaction", {})
    U = evecs

    def rot(mat):
        return U.conj().T @ mat @ U

    lin = np.stack([rot(_as_matrix(m, d_at)) for m in it_cfg.get("g10", [np.zeros((d_at, d_at))] * d)])
    if lin.shape[0] != d:
        raise InvalidModel("g10 must provide one matrix per mode", count=int(lin.shape[0]))

    def pair_family(key):
        fam = it_cfg.get(key)
        if fam is None:
            return np.zeros((d, d, d_at, d_at), dtype=complex)
        arr = np.asarray(fam, dtype=complex)
        if arr.shape != (d, d, d_at, d_at):
            raise InvalidModel(f"{key} must be a (modes x modes) family of atomic matrices",
                               shape=list(arr.shape))
        out = np.empty_like(arr)
        for i in range(d):
            for j in range(d):
                out[i, j] = rot(arr[i, j])
        return out

    quad_cc = pair_family("g20")
    quad_cc = 0.5 * (quad_cc + np.swapaxes(quad_cc, 0, 1))   # symmetrize the pair index
    quad_ca = pair_family("g11")
    inter = InteractionSpec(linear=lin, quad_cc=quad_cc, quad_ca=quad_ca)
    inter.validate(d, d_at)

    pr_cfg = config.get("parameters", {})
    model = DiscretizedModel(
        atomic=atomic, modes=modes, interaction=inter,
        g=complex(pr_cfg.get("g", 0.0)), beta=float(pr_cfg.get("beta", 0.0)),
        name=str(pr_cfg.get("name", config.get("name", "model"))),
        meta={"original_basis": True},
    )
    if sigma > 0:
        model = apply_ir_cutoff(model, sigma)
    return model


def load_config(path: str) -> dict:
    """Parse the INI-style declarative config; values are Python literals."""
    cp = configparser.ConfigParser()
    with open(path) as fh:
        cp.read_file(fh)
    out: dict = {}
    for section in cp.sections():
        sec = {}
        for key, raw in cp[section].items():
            try:
                sec[key] = ast.literal_eval(raw)
            except (ValueError, SyntaxError):
                sec[key] = raw
        out[section] = sec
    return out


def normalize_gap(model: DiscretizedModel) -> tuple[DiscretizedModel, float]:
    """Rescale so the atomic gap is exactly 1; returns (model', scale=delta).

    H_at, omega, Lambda, sigma and the weights divide by delta, g multiplies by
    delta^(1/2), the linear couplings divide by delta^(1/2), quadratic couplings
    are unchanged: then H'(g') = H(g)/delta exactly and energies map back as
    E = delta * E'.
    """
    delta = model.atomic.gap
    if delta <= GAP_TOL:
        raise DegenerateGroundState("zero atomic gap", gap=delta)
    if abs(delta - 1.0) <= GAP_TOL:
        return model, 1.0
    s = 1.0 / delta
    atomic = replace(model.atomic, energies=model.atomic.energies * s)
    modes = PhotonModes(frequencies=model.modes.frequencies * s,
                        weights=model.modes.weights * s,
                        ir_cutoff=model.modes.ir_cutoff * s,
                        uv_cutoff=model.modes.uv_cutoff * s)
    inter = InteractionSpec(linear=model.interaction.linear / np.sqrt(delta),
                            quad_cc=model.interaction.quad_cc,
                            quad_ca=model.interaction.quad_ca)
    out = replace(model, atomic=atomic, modes=modes, interaction=inter,
                  g=model.g * np.sqrt(delta))
    return out, float(delta)


def apply_ir_cutoff(model: DiscretizedModel, sigma: float) -> DiscretizedModel:
    """Mark modes below sigma inactive and zero their couplings.

    Frequencies are retained (they still enter the free field energy of the
    full space); composition obeys max(sigma1, sigma2).
    """
    if sigma < 0:
        raise InvalidCutoff("sigma must be nonnegative", sigma=sigma)
    if sigma > model.modes.uv_cutoff + GAP_TOL:
        raise InvalidCutoff("sigma exceeds the ultraviolet cutoff",
                            sigma=sigma, uv_cutoff=model.modes.uv_cutoff)
    sigma_eff = max(sigma, model.modes.ir_cutoff)
    dead = model.modes.frequencies < sigma_eff - GAP_TOL
    lin = model.interaction.linear.copy()
    lin[dead] = 0.0
    cc = model.interaction.quad_cc.copy()
    cc[dead, :] = 0.0
    cc[:, dead] = 0.0
    ca = model.interaction.quad_ca.copy()
    ca[dead, :] = 0.0
    ca[:, dead] = 0.0
    modes = replace(model.modes, ir_cutoff=sigma_eff)
    inter = InteractionSpec(linear=lin, quad_cc=cc, quad_ca=ca)
    return replace(model, modes=modes, interaction=inter)
