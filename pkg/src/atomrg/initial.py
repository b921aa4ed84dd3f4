"""Initial Feshbach transformation: from the full atom-photon model to the
first effective kernel family on the reduced photon space.

The smooth cutoffs are chi1(r) = cos(theta(r)), chibar1(r) = sin(theta(r))
with theta = (pi/2) * smoothstep(clamp(4r - 3, 0, 1)): chi1 = 1 on [0, 3/4),
supported in [0, 1].  The transformation expands the Feshbach map of
(H(g) - zeta, H0 - zeta) for the cutoff P_at (x) chi1(H_f) in its Neumann
series, normal-orders every term with the Wick engine (atomic ground-state
sandwich), and packages the per-spectral-parameter kernels as a Chebyshev
family.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import oracle
from .errors import NeumannConditionFailed, OutOfDomain
from .feshbach import FeshbachPair, q_operator, validate_pair
from .fock import FockBasis, build_basis
from .interp import cheb_nodes
from .kernels import Kernel, KernelSequence, ZFamily, ball_report
from .model import DiscretizedModel
from .wick import MatrixInteraction, WickEnv, components_to_sequence, neumann_normal_order


# ---------------------------------------------------------------------------
# smooth cutoff functions


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return 3 * t ** 2 - 2 * t ** 3


def _dsmoothstep(t):
    tc = np.clip(t, 0.0, 1.0)
    inside = (t > 0) & (t < 1)
    return np.where(inside, 6 * tc - 6 * tc ** 2, 0.0)


def _theta(r):
    return 0.5 * np.pi * _smoothstep(4.0 * np.asarray(r, dtype=float) - 3.0)


def _dtheta(r):
    return 0.5 * np.pi * 4.0 * _dsmoothstep(4.0 * np.asarray(r, dtype=float) - 3.0)


def chi1(r):
    return np.cos(_theta(r))


def chibar1(r):
    return np.sin(_theta(r))


def dchi1(r):
    return -np.sin(_theta(r)) * _dtheta(r)


def dchibar1(r):
    return np.cos(_theta(r)) * _dtheta(r)


def chi1_dual(x):
    return chi1(x), dchi1(x)


def scaled_chi_dual(rho: float):
    def f(x):
        return chi1(x / rho), dchi1(x / rho) / rho
    return f


@dataclass
class InitialCutoffs:
    basis: FockBasis
    d_at: int
    chi_op: np.ndarray            # P_at (x) chi1(H_f)
    chibar_op: np.ndarray         # (1-P_at) (x) 1 + P_at (x) chibar1(H_f)


def build_cutoffs(basis: FockBasis, atomic) -> InitialCutoffs:
    d_at = atomic.dim
    c = chi1(basis.energies)
    cb = chibar1(basis.energies)
    P = atomic.ground_projection()
    Pb = np.eye(d_at) - P
    chi_op = np.kron(P, np.diag(c))
    chibar_op = np.kron(Pb, np.eye(basis.size)) + np.kron(P, np.diag(cb))
    return InitialCutoffs(basis=basis, d_at=d_at, chi_op=chi_op, chibar_op=chibar_op)


# ---------------------------------------------------------------------------
# pair verification on the full truncated space


@dataclass
class InitialPair:
    pair: FeshbachPair
    resolvent_norm: float         # ||(H0 - zeta)^-1 restricted to Ran chibar||
    z: complex
    g: complex


def verify_initial_pair(model: DiscretizedModel, basis: FockBasis, g: complex,
                        z: complex) -> InitialPair:
    """Validate (H(g) - zeta, H0 - zeta) for the initial cutoff at
    zeta = E_at + z, |z| < 1/2; records the restricted resolvent norm."""
    if abs(z) >= 0.5:
        raise OutOfDomain("spectral parameter outside the half-disk", z=str(z))
    zeta = model.atomic.ground_energy + z
    H = oracle.full_hamiltonian(model, basis, g)
    T = oracle.full_hamiltonian(model, basis, 0.0)
    cut = build_cutoffs(basis, model.atomic)
    pair = validate_pair(H - zeta * np.eye(len(H)), T - zeta * np.eye(len(T)),
                         cut.chi_op, cut.chibar_op)
    res_norm = 1.0 / pair.t_min_singular
    return InitialPair(pair=pair, resolvent_norm=res_norm, z=z, g=g)


def q_initial(model: DiscretizedModel, basis: FockBasis, g: complex,
              z: complex) -> np.ndarray:
    """Auxiliary operator of the initial pair on the full truncated space."""
    return q_operator(verify_initial_pair(model, basis, g, z).pair)


# ---------------------------------------------------------------------------
# effective kernel family


@dataclass
class EffectiveKernelFamily:
    family: ZFamily
    per_l_norms: list
    tail_bound: float
    neumann_l_max: int
    guard_min_denominator: float
    reports: list

    @property
    def error_budget(self) -> float:
        return max(k.ledger for k in self.family.kernels)


def _interior_factor(model: DiscretizedModel, zeta: complex):
    """F(x) = chibar^2(x) / (H_at - zeta + x) in the atomic eigenbasis:
    ground level carries chibar1(x)^2, excited levels carry 1."""
    energies = model.atomic.energies

    def f(x):
        x = np.asarray(x, dtype=float)
        denom = energies.reshape((1,) * x.ndim + (-1,)) - zeta + x[..., None]
        cb = chibar1(x)[..., None]
        dcb = dchibar1(x)[..., None]
        num = np.ones_like(denom) + 0j
        dnum = np.zeros_like(denom)
        num[..., 0] = (cb ** 2)[..., 0]
        dnum[..., 0] = (2 * cb * dcb)[..., 0]
        val = num / denom
        dval = dnum / denom - num / denom ** 2
        return val, dval

    return f


def initial_kernel(model: DiscretizedModel, g: complex, cfg) -> EffectiveKernelFamily:
    """Effective kernel family w(z) on the reduced space, per Chebyshev node.

    Requires a gap-normalized model.  Verifies the Feshbach pair at every
    node, expands the map in its Neumann series with the ground-state-sandwich
    Wick engine, and symmetrizes; the series tail and the dropped high-rank
    mass are recorded in the per-kernel ledger.
    """
    nodes = cheb_nodes(cfg.n_z_nodes, -cfg.z_interval, cfg.z_interval)
    freqs = model.active_frequencies
    weights = model.active_weights
    r_grid = np.linspace(0.0, 1.0, cfg.r_points)
    e_at = model.atomic.ground_energy

    pair_basis = build_basis(freqs, cfg.pair_check_n_max)
    guard_min = np.inf
    kernels_per_node = []
    reports = []
    per_l_all = []
    tail_worst = 0.0
    l_used = 0
    for z in nodes:
        zc = complex(z)
        ip = verify_initial_pair(model, pair_basis, g, zc)
        reports.append({"z": zc, "neumann_norms": ip.pair.norms,
                        "resolvent_norm": ip.resolvent_norm})
        zeta = e_at + zc

        # singularity guard on the interior-factor denominators: excited
        # levels everywhere, ground level only where chibar1 > 0 (r >= 3/4)
        rprobe = np.linspace(0.0, 4.0, 65)
        denoms = np.abs(model.atomic.energies[None, 1:] - zeta + rprobe[:, None])
        guard_min = min(guard_min, float(np.min(denoms)),
                        float(np.min(np.abs(rprobe[rprobe >= 0.75] - zc))))

        env = WickEnv(out_r_grid=r_grid, out_slot_freqs=freqs, ext_freqs=freqs,
                      int_freqs=freqs, int_weights=weights,
                      d_at=model.atomic.dim, ground=0, m_max=cfg.m_max,
                      mask_support=True)
        interaction = MatrixInteraction(model, g)
        acc, per_l, tail, dropped = neumann_normal_order(
            interaction, chi1_dual, _interior_factor(model, zeta), env,
            cfg.xi, l_max=cfg.l_max, stop_tol=cfg.series_stop_tol)
        per_l_all.append(per_l)
        tail_worst = max(tail_worst, tail)
        l_used = max(l_used, len(per_l))

        seq = components_to_sequence(acc, env, cfg.xi, weights, r_grid, zc,
                                     ledger=tail + dropped,
                                     ground_sandwich=True, max_mn=cfg.m_max)
        # free part: the ground-sector compression of H_at + H_f - zeta
        w00 = seq.components.setdefault(
            (0, 0), Kernel(0, 0, r_grid, freqs,
                           np.zeros(len(r_grid), complex),
                           np.zeros(len(r_grid), complex), zc))
        w00.values = w00.values + (r_grid - zc)
        w00.dvalues = w00.dvalues + 1.0
        kernels_per_node.append(seq)

    family = ZFamily(nodes=np.asarray(nodes, float), kernels=kernels_per_node)
    return EffectiveKernelFamily(family=family, per_l_norms=per_l_all,
                                 tail_bound=tail_worst, neumann_l_max=l_used,
                                 guard_min_denominator=guard_min,
                                 reports=reports)


def empirical_g0(model: DiscretizedModel, cfg, g_start: float = 0.64,
                 n_halvings: int = 12) -> float:
    """Largest g in a dyadic sweep passing the pair conditions and the ball
    thresholds (epsilon0/2 each); the existence constant is not quantified by
    the theory, so it is measured per model."""
    thr = cfg.epsilon0 / 2
    g = g_start
    basis = build_basis(model.active_frequencies, cfg.pair_check_n_max)
    for _ in range(n_halvings):
        try:
            for z in (0.0, 0.45, -0.45):
                verify_initial_pair(model, basis, g, z)
            fam = initial_kernel(model, g, cfg)
            rep = ball_report(fam.family.kernels, thr, thr, thr, cfg.zero_linear_tol)
            if rep.in_ball:
                return g
        except (NeumannConditionFailed, OutOfDomain):
            pass
        g /= 2.0
    return g
