"""Renormalization transformation on kernel families and its iteration to the
ground-state energy and eigenvector.

One step, at every Chebyshev node z: invert the energy map to find the
preimage zeta, validate the Feshbach pair (H(w(zeta)), w00(zeta, H_f)) for the
scaled cutoff, expand the map in its Neumann series with the photon-vacuum
Wick engine, and rescale: the new kernel at (r, K) is
rho^(m+n-1) * [map kernel](rho r, rho K).  Components with 3 <= m+n <= m_max
skipped by the two-leg engine enter through their direct cutoff-sandwich
image; their resolvent insertions and everything beyond m_max go to the
ledger.

The ground energy is located by nested inversion of the per-step energy maps;
the eigenvector is unwound through the stored auxiliary operators and the
adjoint dilation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import initial as initial_mod
from .errors import (ContractionLost, DenominatorTooSmall, MaxIterations,
                     NoConvergence, OutOfDomain, ResidualTooLarge)
from .feshbach import q_operator, validate_pair
from .fock import build_basis, dilate_vector, vacuum_vector
from .initial import chi1, chibar1, dchi1, dchibar1, scaled_chi_dual
from .interp import hermite_eval
from .kernels import (Kernel, KernelSequence, ZFamily, apply_support, assemble,
                      ball_report, build_reduced, free_kernel, symmetrize)
from .wick import GridInteraction, WickEnv, components_to_sequence, neumann_normal_order


@dataclass
class RGConfig:
    rho: float = 0.25
    xi: float = 0.25
    epsilon0: float = 0.25 / 16
    max_iterations: int = 60
    min_iterations: int = 10
    tol_energy: float = 1e-11
    tol_kernel: float = 1e-9
    zero_linear_tol: float = 1e-12
    n_z_nodes: int = 12
    z_interval: float = 0.45
    r_points: int = 129
    m_max: int = 4
    l_max: int = 6
    series_stop_tol: float = 1e-16
    pair_check_n_max: int = 6
    newton_tol: float = 1e-13
    contraction_slack: float = 0.75
    psi_residual_tol: float = 1e-5

    def __post_init__(self):
        if not (0 < self.rho <= 0.25 and 0 < self.xi <= 0.25
                and self.epsilon0 <= self.rho / 8):
            raise ValueError("need rho <= 1/4, xi <= 1/4, epsilon0 <= rho/8")


# ---------------------------------------------------------------------------
# energy map


def energy_map(family: ZFamily, rho: float) -> dict:
    """Per-node table of E_rho[w](z) = -w00(z, 0)/rho with domain flags."""
    rows = []
    for z, seq in zip(family.nodes, family.kernels):
        e = -seq.vacuum_value()
        rows.append({"z": complex(z), "E": e / rho, "E_unscaled": e,
                     "in_domain": abs(e) < rho / 2})
    return {"rho": rho, "samples": rows}


def invert_energy_map(family: ZFamily, rho: float, z_target: complex,
                      tol: float = 1e-13, max_steps: int = 60) -> complex:
    """Newton inversion of E_rho[w] seeded at rho*z, bisection fallback on the
    real section; the result is checked to lie in the map's domain."""
    if abs(z_target) >= 0.5 + 1e-12:
        raise OutOfDomain("target outside the half-disk", z=str(z_target))

    def E(z):
        return -family.w00_vacuum(z) / rho

    def dE(z):
        return -family.w00_vacuum_deriv(z) / rho

    zeta = rho * complex(z_target)
    converged = False
    for _ in range(max_steps):
        r = E(zeta) - z_target
        if abs(r) <= tol:
            converged = True
            break
        d = dE(zeta)
        if d == 0:
            break
        step = r / d
        zeta = zeta - step
        if abs(zeta) > 0.75:      # runaway; leave to the fallback
            break
    if not converged and abs(complex(z_target).imag) < 1e-14:
        lo, hi = -0.499, 0.499
        flo = (E(lo) - z_target).real
        fhi = (E(hi) - z_target).real
        if flo * fhi <= 0:
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                fm = (E(mid) - z_target).real
                if abs(fm) <= tol:
                    zeta = mid
                    converged = True
                    break
                if flo * fm <= 0:
                    hi, fhi = mid, fm
                else:
                    lo, flo = mid, fm
            else:
                zeta = 0.5 * (lo + hi)
                converged = abs(E(zeta) - z_target) <= 10 * tol
    if not converged:
        raise NoConvergence("energy-map inversion did not converge",
                            z=str(z_target), residual=abs(E(zeta) - z_target))
    if abs(zeta) >= 0.5 or not abs(E(zeta) * rho) < rho / 2 + 1e-12:
        raise OutOfDomain("preimage left the map's domain", zeta=str(zeta))
    return complex(zeta)


# ---------------------------------------------------------------------------
# one step


def _interior_factor_rg(seq: KernelSequence, rho: float):
    """F(x) = chibar1(x/rho)^2 / w00(x) with the stored radial derivative;
    w00 extrapolates linearly beyond the unit grid (it is free there)."""
    w00 = seq.w00()

    def f(x):
        x = np.asarray(x, dtype=float)
        v, dv = hermite_eval(w00.r_grid, w00.values, w00.dvalues, x.ravel(),
                             with_deriv=True)
        v = v.reshape(x.shape)
        dv = dv.reshape(x.shape)
        cb = chibar1(x / rho)
        dcb = dchibar1(x / rho) / rho
        val = cb ** 2 / v
        dval = 2 * cb * dcb / v - cb ** 2 * dv / v ** 2
        return val[..., None], dval[..., None]

    return f


@dataclass
class StepRecord:
    zeta: np.ndarray
    pair_norms: list
    ball: object
    ledger_increment: float
    energy_table: dict
    inverse_residuals: list
    linear_defect: float


def rg_step(family: ZFamily, cfg: RGConfig, red=None) -> tuple[ZFamily, StepRecord]:
    """One renormalization step of a kernel family."""
    rho, xi = cfg.rho, cfg.xi
    base = family.kernels[0]
    freqs, weights, r_grid = base.freqs, base.weights, base.r_grid
    if red is None:
        n_red = int(np.floor(1.0 / np.min(freqs))) + 1
        red = build_reduced(build_basis(freqs, n_red))
    chif = chi1(red.energies / rho)
    new_kernels = []
    zetas = []
    pair_norms = []
    inv_res = []
    ledger_inc = 0.0
    for z in family.nodes:
        zc = complex(z)
        zeta = invert_energy_map(family, rho, zc, tol=cfg.newton_tol)
        zetas.append(zeta)
        w_at = family.at(zeta)
        inv_res.append(abs(-w_at.vacuum_value() / rho - zc))

        # Feshbach pair of the assembled operators for the scaled cutoff
        H = assemble(w_at, red)
        T = np.diag(hermite_eval(w_at.w00().r_grid, w_at.w00().values,
                                 w_at.w00().dvalues, red.energies))
        pair = validate_pair(H, T, np.diag(chif),
                             np.diag(chibar1(red.energies / rho)))
        pair_norms.append(pair.norms)

        # Neumann series, normal-ordered at the scaled arguments
        env = WickEnv(out_r_grid=rho * r_grid, out_slot_freqs=freqs,
                      ext_freqs=rho * freqs, int_freqs=freqs,
                      int_weights=weights, d_at=1, ground=0, m_max=cfg.m_max,
                      mask_support=False)
        interaction = GridInteraction(w_at)
        acc, per_l, tail, dropped = neumann_normal_order(
            interaction, scaled_chi_dual(rho), _interior_factor_rg(w_at, rho),
            env, xi, l_max=cfg.l_max, stop_tol=cfg.series_stop_tol)

        comps = {}
        for (M, N), (v, dv) in acc.items():
            scale = rho ** (M + N - 1)
            comps[(M, N)] = [scale * v[..., 0, 0], scale * rho * dv[..., 0, 0]]

        # direct cutoff-sandwich image of the high-rank components the
        # two-leg engine does not insert; their Neumann-sandwich insertions
        # are bounded into the ledger below
        high_norm = 0.0
        for (M, N), kern in w_at.components.items():
            if not (3 <= M + N <= cfg.m_max):
                continue
            high_norm += xi ** (-(M + N)) * (np.max(np.abs(kern.values))
                                             + np.max(np.abs(kern.dvalues)))
            scale = rho ** (M + N - 1)
            grids = np.meshgrid(*([freqs] * (M + N)), indexing="ij")
            s_c = sum(grids[:M]) if M else np.zeros_like(grids[0])
            s_a = sum(grids[M:]) if N else np.zeros_like(grids[0])
            rr = r_grid.reshape((-1,) + (1,) * (M + N))
            # chi1(r + sum): the scaled cutoffs at the scaled arguments
            c_left, dc_left = chi1(rr + s_c), dchi1(rr + s_c)
            c_right, dc_right = chi1(rr + s_a), dchi1(rr + s_a)
            slots = tuple(np.ravel(g) for g in grids)
            vflat = []
            dflat = []
            for idx in range(grids[0].size):
                sl = tuple(s.flat[idx] for s in slots)
                vv, dd = kern.eval(rho * r_grid, tuple(rho * np.array(sl)),
                                   with_deriv=True)
                vflat.append(vv)
                dflat.append(dd)
            vgrid = np.stack(vflat, axis=1).reshape((len(r_grid),) + grids[0].shape)
            dgrid = np.stack(dflat, axis=1).reshape((len(r_grid),) + grids[0].shape)
            img_v = scale * c_left * vgrid * c_right
            img_d = scale * (dc_left * vgrid * c_right + rho * c_left * dgrid * c_right
                             + c_left * vgrid * dc_right)
            if (M, N) in comps:
                comps[(M, N)][0] = comps[(M, N)][0] + img_v
                comps[(M, N)][1] = comps[(M, N)][1] + img_d
            else:
                comps[(M, N)] = [img_v, img_d]

        n1 = pair_norms[-1][0]
        insertion_bound = high_norm * (n1 / max(1 - n1, 1e-6) + n1)
        new_ledger = tail + dropped + insertion_bound
        ledger_inc = max(ledger_inc, new_ledger)

        out_comps = {}
        for (M, N), (v, dv) in comps.items():
            kern = Kernel(M, N, r_grid, freqs, v, dv, zc)
            kern = symmetrize(kern)
            kern = apply_support(kern)
            out_comps[(M, N)] = kern
        # T-image: rho^-1 w00(zeta, rho r)
        w00v, w00d = w_at.w00().eval(rho * r_grid, (), with_deriv=True)
        t_kern = out_comps.setdefault(
            (0, 0), Kernel(0, 0, r_grid, freqs, np.zeros(len(r_grid), complex),
                           np.zeros(len(r_grid), complex), zc))
        t_kern.values = t_kern.values + w00v / rho
        t_kern.dvalues = t_kern.dvalues + w00d
        seq = KernelSequence(out_comps, xi, freqs, weights, r_grid,
                             ledger=w_at.ledger + new_ledger, z_tag=zc,
                             max_mn=cfg.m_max)
        new_kernels.append(seq)

    out = ZFamily(nodes=family.nodes, kernels=new_kernels)
    thr = cfg.rho / 8
    ball = ball_report(new_kernels, thr, thr, thr, cfg.zero_linear_tol)
    rec = StepRecord(zeta=np.array(zetas), pair_norms=pair_norms, ball=ball,
                     ledger_increment=ledger_inc,
                     energy_table=energy_map(out, rho),
                     inverse_residuals=inv_res,
                     linear_defect=ball.linear_norm)
    return out, rec


# ---------------------------------------------------------------------------
# iteration


@dataclass
class RGTrace:
    steps: list
    gammas: list
    e0: float = np.nan
    e0_complex: complex = np.nan
    converged: bool = False
    n_steps: int = 0
    chain: list = None
    certificate: dict = None
    families: list = None
    ledger: float = 0.0

    def gamma_ratios(self) -> list:
        g = self.gammas
        return [g[i + 1] / g[i] if g[i] > 0 else np.nan for i in range(len(g) - 1)]


def iterate(family0: ZFamily, cfg: RGConfig, keep_families: bool = True) -> RGTrace:
    """Iterate the transformation and locate the ground-energy parameter by
    nested inversion of the per-step energy maps."""
    thr0 = cfg.epsilon0 / 2
    rep0 = ball_report(family0.kernels, thr0, thr0, thr0, cfg.zero_linear_tol)
    flags = {"initial_in_B0": rep0.in_B0,
             "contraction_guarantee": rep0.in_B0}
    families = [family0]
    fam = family0
    steps = []
    gammas = [rep0.gamma_stored]
    bad_streak = 0
    for n in range(cfg.max_iterations):
        fam, rec = rg_step(fam, cfg)
        steps.append(rec)
        families.append(fam)
        gammas.append(rec.ball.gamma_stored)
        if gammas[-2] > 0 and gammas[-1] > cfg.contraction_slack * gammas[-2] \
                + 10 * rec.ledger_increment:
            bad_streak += 1
            if bad_streak >= 3 and gammas[-1] > cfg.tol_kernel:
                raise ContractionLost("gamma failed to halve for 3 steps",
                                      gammas=gammas[-4:])
        else:
            bad_streak = 0
        vac0 = abs(fam.w00_vacuum(0.0))
        if (n + 1 >= cfg.min_iterations and vac0 <= cfg.tol_energy
                and gammas[-1] <= cfg.tol_kernel):
            break
    else:
        if abs(fam.w00_vacuum(0.0)) > cfg.tol_energy * 100:
            raise MaxIterations("iteration cap reached before convergence",
                                vacuum=abs(fam.w00_vacuum(0.0)))

    # terminal root, then nested inversion down the chain
    z = _newton_root(fam, cfg)
    chain = [complex(z)]
    for k in range(len(steps) - 1, -1, -1):
        z = invert_energy_map(families[k], cfg.rho, z, tol=cfg.newton_tol)
        chain.append(complex(z))
    chain.reverse()               # chain[k] = spectral parameter at level k
    e0 = chain[0]

    ratios = [g2 / g1 for g1, g2 in zip(gammas, gammas[1:]) if g1 > 0]
    certificate = {
        "gamma_ratios": ratios,
        "geometric": bool(all(r <= cfg.contraction_slack + 1e-9 for r in ratios[:10])),
        "final_gamma": gammas[-1],
        "final_vacuum": abs(fam.w00_vacuum(complex(chain[-1]))),
        "interp_decay": fam.interp_decay(),
    }
    trace = RGTrace(steps=steps, gammas=gammas, e0=float(np.real(e0)),
                    e0_complex=complex(e0), converged=True, n_steps=len(steps),
                    chain=chain, certificate=certificate,
                    families=families if keep_families else None,
                    ledger=fam.ledger)
    trace.certificate["flags"] = flags
    return trace


def _newton_root(family: ZFamily, cfg: RGConfig) -> complex:
    """Root of z -> w00(z, 0) near 0 on the final family."""
    z = 0.0 + 0j
    for _ in range(60):
        v = family.w00_vacuum(z)
        if abs(v) <= cfg.tol_energy * 0.01 + 1e-16:
            return z
        d = family.w00_vacuum_deriv(z)
        z = z - v / d
        if abs(z) > 0.5:
            raise OutOfDomain("terminal root left the half-disk", z=str(z))
    return z


# ---------------------------------------------------------------------------
# ground state of a model, end to end


@dataclass
class GroundRun:
    model: object
    g: complex
    energy: complex               # E_at + e0, in the normalized units
    e0: complex
    trace: RGTrace
    effective: object             # EffectiveKernelFamily


def run_ground_state(model, g: complex, cfg: RGConfig,
                     keep_families: bool = True) -> GroundRun:
    eff = initial_mod.initial_kernel(model, g, cfg)
    trace = iterate(eff.family, cfg, keep_families=keep_families)
    energy = model.atomic.ground_energy + trace.e0_complex
    return GroundRun(model=model, g=g, energy=energy, e0=trace.e0_complex,
                     trace=trace, effective=eff)


# ---------------------------------------------------------------------------
# eigenvector unwinding


@dataclass
class EigenvectorResult:
    vector: np.ndarray            # on the full truncated model space
    kernel_vector_norm: float     # norm of the reduced-space unwound vector
    residual: float
    energy: complex
    cauchy_increments: list
    dilation_dropped: float


def eigenvector(run: GroundRun, basis_full, cfg: RGConfig) -> EigenvectorResult:
    """Unwind the kernel-space null vector through the stored chain and map it
    to the full space with the initial auxiliary operator."""
    trace = run.trace
    if trace.families is None:
        raise ValueError("run must keep families to unwind the eigenvector")
    families = trace.families
    chain = trace.chain
    base = families[0].kernels[0]
    freqs = base.freqs
    n_red = int(np.floor(1.0 / np.min(freqs))) + 1
    parent = build_basis(freqs, n_red)
    red = build_reduced(parent)
    red_parent_idx = red.selection
    rho = cfg.rho

    # terminal null vector of H(w(z_N)) on the reduced space
    fam_N = families[-1]
    seq_N = fam_N.at(chain[-1])
    H_N = assemble(seq_N, red)
    _, svals, Vh = np.linalg.svd(H_N)
    psi = Vh.conj().T[:, -1]
    if psi[0].real < 0 or (psi[0].real == 0 and psi[0].imag < 0):
        psi = -psi
    increments = []
    dropped_total = 0.0
    chif = chi1(red.energies / rho)
    chibarf = chibar1(red.energies / rho)
    prev = psi.copy()
    for k in range(len(families) - 2, -1, -1):
        seq = families[k].at(chain[k])
        H = assemble(seq, red)
        T = np.diag(hermite_eval(seq.w00().r_grid, seq.w00().values,
                                 seq.w00().dvalues, red.energies))
        pair = validate_pair(H, T, np.diag(chif), np.diag(chibarf))
        Q = q_operator(pair)
        vec_full = np.zeros(parent.size, dtype=complex)
        vec_full[red_parent_idx] = psi
        vec_full, dropped = dilate_vector(parent, rho, vec_full)
        dropped_total += dropped
        psi = Q @ vec_full[red_parent_idx]
        increments.append(float(np.linalg.norm(psi - prev)))
        prev = psi.copy()

    kernel_norm = float(np.linalg.norm(psi))

    # lift to the full model space through the initial auxiliary operator
    model, g = run.model, run.g
    ip = initial_mod.verify_initial_pair(model, basis_full, g, chain[0])
    Q0 = q_operator(ip.pair)
    d_at = model.atomic.dim
    vec = np.zeros(d_at * basis_full.size, dtype=complex)
    full_red_idx = []
    for pidx in red_parent_idx:
        occ = parent.states[pidx]
        full_red_idx.append(basis_full.index_of(occ))
    vec[np.array(full_red_idx, dtype=int)] = psi   # ground atomic block is first
    psi_full = Q0 @ vec

    E = model.atomic.ground_energy + chain[0]
    H_full = run_hamiltonian(model, basis_full, g)
    resid = float(np.linalg.norm(H_full @ psi_full - E * psi_full)
                  / max(np.linalg.norm(psi_full), 1e-300))
    if resid > cfg.psi_residual_tol + 10 * np.sqrt(max(dropped_total, 0.0)):
        raise ResidualTooLarge("eigenvector residual above tolerance",
                               residual=resid, dropped=dropped_total)
    return EigenvectorResult(vector=psi_full, kernel_vector_norm=kernel_norm,
                             residual=resid, energy=E,
                             cauchy_increments=increments,
                             dilation_dropped=dropped_total)


def run_hamiltonian(model, basis_full, g):
    from .oracle import full_hamiltonian
    return full_hamiltonian(model, basis_full, g)


def projection(psi_g: np.ndarray, psi_gbar: np.ndarray,
               c0: float = 1e-8) -> np.ndarray:
    """Rank-one idempotent |psi(g)><psi(gbar)| / <psi(gbar), psi(g)>."""
    denom = complex(np.vdot(psi_gbar, psi_g))
    if abs(denom) < c0:
        raise DenominatorTooSmall("projection denominator below threshold",
                                  denominator=abs(denom))
    return np.outer(psi_g, psi_gbar.conj()) / denom
