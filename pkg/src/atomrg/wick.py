"""Normal ordering of alternating products F0 W F1 W ... W FL.

The engine turns one such product into a kernel sequence by enumerating all
contraction terms (per-factor leg splits (m_l, p_l, n_l, q_l) with
1 <= m_l+p_l+n_l+q_l <= 2), evaluating the photon-vacuum bracket of the
internal legs as a matrix chain on a small internal Fock basis, applying the
binomial weights, and shifting every factor's argument by the external-leg
frequency bookkeeping

    r_l     = annihilation externals of factors < l + creation externals of factors > l
    rtil_l  = annihilation externals of factors <= l + creation externals of factors > l

with F0 evaluated at r + (all creation externals) and FL at r + (all
annihilation externals).  Radial derivatives propagate through the chain as
dual numbers, so the sharp norm of the output never relies on finite
differences.

The bracket keeps the atomic factor as explicit (d_at x d_at) blocks; scalar
problems run with d_at = 1.  Interaction components are restricted to
m+n in {1, 2}; the sum over tuples with total internal creation != total
internal annihilation vanishes identically and is skipped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import MissingKernelComponent, SeriesDivergence
from .fock import FockBasis, build_basis
from .kernels import Kernel, KernelSequence, apply_support, symmetrize

LEG_CHOICES = [(m, p, n, q)
               for m in range(3) for p in range(3) for n in range(3) for q in range(3)
               if 1 <= m + p + n + q <= 2]


@dataclass(frozen=True)
class ContractionTerm:
    ms: tuple
    ps: tuple
    ns: tuple
    qs: tuple

    @property
    def weight(self) -> float:
        from math import comb
        w = 1.0
        for m, p, n, q in zip(self.ms, self.ps, self.ns, self.qs):
            w *= comb(m + p, p) * comb(n + q, q)
        return w

    @property
    def internal_legs(self) -> int:
        return sum(self.ps) + sum(self.qs)

    @property
    def g_power(self) -> int:
        return sum(self.ms) + sum(self.ps) + sum(self.ns) + sum(self.qs)


ALL_COMPONENTS = frozenset({(1, 0), (0, 1), (1, 1), (2, 0), (0, 2)})

_enum_cache: dict = {}


def enumerate_all(L: int, avail: frozenset = ALL_COMPONENTS, pruned: bool = True,
                  rank_cap: int | None = None) -> dict:
    """Bucketed enumeration: dict (M, N) -> list of ContractionTerm.

    avail restricts the per-factor kernel components; pruned drops terms that
    vanish identically against the vacuum (unbalanced internal legs, internal
    creation in the leftmost factor, internal annihilation in the rightmost);
    rank_cap prunes external ranks M, N above the cap.
    """
    cap = 2 * L if rank_cap is None else rank_cap
    key = (L, avail, pruned, cap)
    if key in _enum_cache:
        return _enum_cache[key]
    choices = tuple(c for c in LEG_CHOICES if (c[0] + c[1], c[2] + c[3]) in avail)
    buckets: dict = {}

    def rec(l, ms, ps, ns, qs, sp, sq):
        if l == L:
            if pruned and sp != sq:
                return
            buckets.setdefault((sum(ms), sum(ns)), []).append(
                ContractionTerm(tuple(ms), tuple(ps), tuple(ns), tuple(qs)))
            return
        rem = L - 1 - l
        for m, p, n, q in choices:
            if sum(ms) + m > cap or sum(ns) + n > cap:
                continue
            if pruned:
                if l == 0 and p > 0:
                    continue
                if l == L - 1 and q > 0:
                    continue
                if abs(sp + p - (sq + q)) > 2 * rem:
                    continue
            rec(l + 1, ms + [m], ps + [p], ns + [n], qs + [q], sp + p, sq + q)

    rec(0, [], [], [], [], 0, 0)
    _enum_cache[key] = buckets
    return buckets


def enumerate_terms(L: int, M: int, N: int, pruned: bool = True,
                    avail: frozenset = ALL_COMPONENTS):
    """All leg splits with sum(m)=M, sum(n)=N, 1 <= legs per factor <= 2."""
    return list(enumerate_all(L, avail, pruned).get((M, N), []))


# ---------------------------------------------------------------------------
# interaction sources


class MatrixInteraction:
    """r-independent atomic-matrix-valued interaction kernels of a model,
    with the coupling powers of g folded in."""

    r_independent = True

    def __init__(self, model, g: complex):
        self.d_at = model.atomic.dim
        lin = model.active_linear()
        cc = model.active_quad_cc()
        ca = model.active_quad_ca()
        adj = np.conj(np.swapaxes(lin, 1, 2))
        self.comps = {
            (1, 0): g * lin,
            (0, 1): g * adj,
            (1, 1): g ** 2 * ca,
            (2, 0): g ** 2 * cc,
            (0, 2): g ** 2 * np.conj(np.swapaxes(cc, 2, 3)),
        }
        self.comps = {k: v for k, v in self.comps.items() if np.any(v)}

    @property
    def avail(self) -> frozenset:
        return frozenset(self.comps)

    def has(self, mm: int, nn: int) -> bool:
        return (mm, nn) in self.comps

    def matrix(self, mm, nn, slot_idx) -> np.ndarray:
        return self.comps[(mm, nn)][tuple(slot_idx)]

    def sup_sharp(self, mm: int, nn: int) -> float:
        if not self.has(mm, nn):
            return 0.0
        return float(np.max(np.abs(self.comps[(mm, nn)])))


class GridInteraction:
    """Grid-sampled scalar kernels (a KernelSequence restricted to one- and
    two-leg components); evaluation interpolates radially and across slots."""

    r_independent = False

    def __init__(self, seq: KernelSequence, zero_floor: float = 1e-18):
        self.d_at = 1
        self.comps = {}
        for k, v in seq.components.items():
            if 1 <= k[0] + k[1] <= 2:
                size = np.max(np.abs(v.values)) + np.max(np.abs(v.dvalues))
                if size > zero_floor:     # below the roundoff floor: treat as absent
                    self.comps[k] = v

    @property
    def avail(self) -> frozenset:
        return frozenset(self.comps)

    def has(self, mm: int, nn: int) -> bool:
        return (mm, nn) in self.comps

    def eval_batch(self, mm, nn, slot_val, args):
        """Kernel values and radial derivatives at an argument array."""
        kern = self.comps[(mm, nn)]
        v, dv = kern.eval(np.ravel(args), tuple(slot_val), with_deriv=True)
        return v.reshape(np.shape(args)), dv.reshape(np.shape(args))

    def sup_sharp(self, mm: int, nn: int) -> float:
        if not self.has(mm, nn):
            return 0.0
        k = self.comps[(mm, nn)]
        return float(np.max(np.abs(k.values)) + np.max(np.abs(k.dvalues)))


@dataclass
class WickProductSpec:
    """One alternating product: L interaction insertions between L+1 diagonal
    factors.  f_ends[i] (i=0, L) are scalar callables x -> (val, dval);
    f_mid is a callable x -> (val, dval) with a trailing atomic-diagonal axis."""
    L: int
    interaction: object
    f_ends: tuple
    f_mid: object


@dataclass
class WickEnv:
    out_r_grid: np.ndarray        # kernel arguments handed to every factor
    out_slot_freqs: np.ndarray    # slot labels of the produced kernels
    ext_freqs: np.ndarray         # evaluation values per slot (scaled by caller)
    int_freqs: np.ndarray
    int_weights: np.ndarray
    d_at: int = 1
    ground: int = 0
    m_max: int = 4
    mask_support: bool = False
    _basis_cache: dict = field(default_factory=dict)

    @property
    def c_leg(self) -> np.ndarray:
        return np.sqrt(self.int_weights * self.int_freqs)

    def internal_basis(self, occ: int) -> FockBasis:
        if occ not in self._basis_cache:
            self._basis_cache[occ] = build_basis(self.int_freqs, occ)
        return self._basis_cache[occ]


def factor_matrix(source, m, p, n, q, ext_c_idx, ext_a_idx, ext_c_val,
                  ext_a_val, shift, env: WickEnv, basis: FockBasis):
    """Matrix of one insertion W_{p,q}^{m,n}[w](shift; K_ext) on the internal
    space, as dual arrays of shape (nr, size, size, d_at, d_at).

    shift is the (nr,) array of radial arguments added to the internal state
    energy after annihilation; external slots are given both as mode indices
    (used by matrix-valued sources) and evaluation frequencies (used by
    grid-sampled sources, where the values may be dilation-scaled).
    """
    mm, nn = m + p, n + q
    if not source.has(mm, nn):
        raise MissingKernelComponent("interaction lacks a required component",
                                     component=[mm, nn])
    nr = len(shift)
    size = basis.size
    dat = env.d_at
    d = len(env.int_freqs)
    c = env.c_leg
    freqs = env.int_freqs
    r_indep = getattr(source, "r_independent", False)
    if r_indep:
        # flattened (internal x atomic) layout; no radial axis needed
        A = np.zeros((size * dat, size * dat), dtype=complex)
    else:
        A = np.zeros((nr, size, size), dtype=complex)
        dA = np.zeros_like(A)
    for X in product(range(d), repeat=p):
        for Y in product(range(d), repeat=q):
            cc = np.prod([c[x] for x in X] + [1.0]) * np.prod([c[y] for y in Y] + [1.0])
            slot_idx = tuple(ext_c_idx) + tuple(X) + tuple(ext_a_idx) + tuple(Y)
            slot_val = (tuple(ext_c_val) + tuple(freqs[i] for i in X)
                        + tuple(ext_a_val) + tuple(freqs[j] for j in Y))
            # vectorized ladder bookkeeping over all columns at once
            occ = basis.states.copy()
            amp = np.ones(size)
            valid = np.ones(size, dtype=bool)
            for y in Y:
                valid &= occ[:, y] >= 1
                amp *= np.sqrt(np.maximum(occ[:, y], 0))
                occ[:, y] -= 1
            e_mid = np.clip(occ, 0, None) @ freqs
            for x in X:
                occ[:, x] += 1
                amp *= np.sqrt(np.maximum(occ[:, x], 0))
            rows = basis.lookup_many(occ)
            valid &= rows >= 0
            cols = np.nonzero(valid)[0]
            if cols.size == 0:
                continue
            rows = rows[valid]
            amp_v = cc * amp[valid]
            if r_indep:
                mat = source.matrix(mm, nn, slot_idx)
                for rr, cl, aa in zip(rows, cols, amp_v):
                    A[rr * dat:(rr + 1) * dat, cl * dat:(cl + 1) * dat] += aa * mat
            else:
                args = e_mid[valid][None, :] + np.asarray(shift)[:, None]
                val, dval = source.eval_batch(mm, nn, slot_val, args)
                A[:, rows, cols] += amp_v * val
                dA[:, rows, cols] += amp_v * dval
    if r_indep:
        return A, None
    return A, dA


def _factor_bounds(spec: WickProductSpec, env: WickEnv, L: int):
    """Cheap sup bounds used both for term pruning and the dropped-mass
    ledger: per-insertion = kernel sup-sharp times the summed internal-leg
    couplings times the worst ladder amplitude."""
    leg_unit = float(np.sum(env.c_leg) * np.sqrt(2 * L + 1))
    probe = np.linspace(0, 1, 9)
    f0v, f0d = spec.f_ends[0](probe)
    fLv, fLd = spec.f_ends[1](probe)
    fmv, fmd = spec.f_mid(probe[:, None])
    bf0 = float(np.max(np.abs(f0v)) + np.max(np.abs(f0d)))
    bfL = float(np.max(np.abs(fLv)) + np.max(np.abs(fLd)))
    bfm = float(np.max(np.abs(fmv)) + np.max(np.abs(fmd)))
    return leg_unit, bf0, bfL, bfm


def _term_bound(spec, term, leg_unit, bf0, bfL, bfm, L):
    fac = term.weight * bf0 * bfL * (bfm ** max(L - 1, 0))
    for m, p, n, q in zip(term.ms, term.ps, term.ns, term.qs):
        fac *= spec.interaction.sup_sharp(m + p, n + q) \
            * (leg_unit ** (p + q) if p + q else 1.0)
    return fac


def normal_order(spec: WickProductSpec, env: WickEnv, xi: float | None = None,
                 term_prune: float | None = None):
    """Normal-order one alternating product into a kernel sequence.

    Returns (components, ledger) where components maps (M, N) to dual arrays
    (values, dvalues) of shape (nr,) + (d_out,)*(M+N) + (d_at, d_at), and
    ledger is the xi-weighted bound on everything not evaluated: components
    beyond m_max plus terms pruned below term_prune (0 when xi is None).
    """
    L = spec.L
    nr = len(env.out_r_grid)
    d_out = len(env.out_slot_freqs)
    results: dict = {}
    max_rank = min(2 * L, env.m_max)
    fmat_cache: dict = {}
    leg_unit, bf0, bfL, bfm = _factor_bounds(spec, env, L)
    pruned_mass = 0.0

    terms_by_MN = {}
    max_internal = 0
    buckets = enumerate_all(L, spec.interaction.avail, pruned=True,
                            rank_cap=max_rank)
    for (M, N), terms in buckets.items():
        if M + N > max_rank or not terms:
            continue
        terms_by_MN[(M, N)] = terms
        for t in terms:
            # peak intermediate occupancy scanning right to left
            running = peak = 0
            for l in range(L - 1, -1, -1):
                running += t.ps[l] - t.qs[l]
                peak = max(peak, running)
            max_internal = max(max_internal, peak)

    basis = env.internal_basis(max_internal)
    vac = basis.index_of((0,) * basis.d)
    ground_vec = np.zeros((basis.size, env.d_at), dtype=complex)
    ground_vec[vac, env.ground] = 1.0
    r = env.out_r_grid.astype(float)

    for (M, N), terms in terms_by_MN.items():
        if term_prune is not None:
            kept = []
            for term in terms:
                b = _term_bound(spec, term, leg_unit, bf0, bfL, bfm, L)
                if b < term_prune:
                    if xi is not None:
                        pruned_mass += xi ** (-(M + N)) * b * d_out ** (M + N)
                else:
                    kept.append(term)
            terms = kept
            if not terms:
                continue
        shape = (nr,) + (d_out,) * (M + N) + (env.d_at, env.d_at)
        vals = np.zeros(shape, dtype=complex)
        dvals = np.zeros(shape, dtype=complex)
        for ext in product(range(d_out), repeat=M + N):
            wc = [env.ext_freqs[i] for i in ext[:M]]
            wa = [env.ext_freqs[j] for j in ext[M:]]
            acc_v = np.zeros((nr, env.d_at, env.d_at), dtype=complex)
            acc_d = np.zeros_like(acc_v)
            for term in terms:
                v, dv = _bracket(spec, env, basis, ground_vec, term,
                                 ext[:M], ext[M:], wc, wa, r, fmat_cache)
                acc_v += term.weight * v
                acc_d += term.weight * dv
            sel = (slice(None),) + ext
            vals[sel] = acc_v
            dvals[sel] = acc_d
        results[(M, N)] = (vals, dvals)

    ledger = pruned_mass
    if xi is not None and max_rank < 2 * L:
        ledger += dropped_bound(spec, env, L, max_rank, xi)
    return results, ledger


def _bracket(spec: WickProductSpec, env: WickEnv, basis: FockBasis,
             ground_vec, term: ContractionTerm, idx_c, idx_a, wc, wa, r, cache):
    """Photon-vacuum bracket of one contraction term, as dual (nr, d_at, d_at)
    arrays: rows index the bra atomic level, columns the ket level.

    For matrix-valued chains the bracket is the atomic operator
    <Omega| F0 prod_l {W_l F_l} |Omega>; we propagate the full atomic block
    so both the sandwiched (ground element) and unsandwiched uses share code.
    """
    L = spec.L
    # split external slots among the factors, positionally
    c_ofs = np.cumsum((0,) + term.ms)
    a_ofs = np.cumsum((0,) + term.ns)
    ext_c = [tuple(wc[c_ofs[l]:c_ofs[l + 1]]) for l in range(L)]
    ext_a = [tuple(wa[a_ofs[l]:a_ofs[l + 1]]) for l in range(L)]
    extidx_c = [tuple(idx_c[c_ofs[l]:c_ofs[l + 1]]) for l in range(L)]
    extidx_a = [tuple(idx_a[a_ofs[l]:a_ofs[l + 1]]) for l in range(L)]
    sum_c = [sum(s) for s in ext_c]
    sum_a = [sum(s) for s in ext_a]

    def r_shift(l):        # kernel argument shift of factor l (0-based)
        return sum(sum_a[:l]) + sum(sum_c[l + 1:])

    def rtil(l):           # diagonal factor F_l argument shift (l = 0..L)
        return sum(sum_a[:l]) + sum(sum_c[l:])

    dat = env.d_at
    size = basis.size
    nr = len(r)
    vac = basis.index_of((0,) * basis.d)
    # start: FL at the scalar argument r + rtil_L, times the vacuum ket;
    # the chain carries the full atomic operator (columns = input level)
    key_L = ("fend", 1, round(float(rtil(L)), 12))
    if key_L not in cache:
        cache[key_L] = spec.f_ends[1](r + rtil(L))
    vL, dL = cache[key_L]
    v = np.zeros((nr, size * dat, dat), dtype=complex)
    dv = np.zeros_like(v)
    for b in range(dat):
        v[:, vac * dat + b, b] = vL
        dv[:, vac * dat + b, b] = dL

    energies = basis.energies
    for l in range(L - 1, -1, -1):
        m, p, n, q = term.ms[l], term.ps[l], term.ns[l], term.qs[l]
        shift = r + r_shift(l)
        key = (m, p, n, q, extidx_c[l], extidx_a[l], round(float(r_shift(l)), 12))
        if key not in cache:
            cache[key] = factor_matrix(spec.interaction, m, p, n, q,
                                       extidx_c[l], extidx_a[l],
                                       ext_c[l], ext_a[l], shift, env, basis)
        A, dA = cache[key]
        if dA is None:
            v, dv = A @ v, A @ dv
        else:
            v, dv = A @ v, dA @ v + A @ dv
        if l > 0:
            fkey = ("fmid", round(float(rtil(l)), 12))
            if fkey not in cache:
                fv, fd = spec.f_mid(energies[None, :] + (r + rtil(l))[:, None])
                cache[fkey] = (fv.reshape(nr, size * dat, 1),
                               fd.reshape(nr, size * dat, 1))
            fv, fd = cache[fkey]
            v, dv = fv * v, fd * v + fv * dv

    key_0 = ("fend", 0, round(float(rtil(0)), 12))
    if key_0 not in cache:
        cache[key_0] = spec.f_ends[0](r + rtil(0))
    f0v, f0d = cache[key_0]
    out = v[:, vac * dat:(vac + 1) * dat, :]
    dout = dv[:, vac * dat:(vac + 1) * dat, :]
    res = f0v[:, None, None] * out
    dres = f0d[:, None, None] * out + f0v[:, None, None] * dout
    return res, dres


def dropped_bound(spec: WickProductSpec, env: WickEnv, L: int, max_rank: int,
                  xi: float) -> float:
    """Crude xi-weighted sharp-norm bound on everything beyond max_rank.

    Bound per term: per-factor kernel sup-sharp times the summed internal leg
    couplings and the worst ladder factor, times the diagonal factors' sup and
    the binomial weight.  Shells beyond max_rank+3 are extrapolated
    geometrically from the last two computed shells.
    """
    cb = env.c_leg
    occ_amp = np.sqrt(np.arange(1, 2 * L + 2))
    leg_unit = float(np.sum(cb) * occ_amp[-1])
    probe = np.linspace(0, 1, 9)
    f0v, f0d = spec.f_ends[0](probe)
    fLv, fLd = spec.f_ends[1](probe)
    fmv, fmd = spec.f_mid(probe[:, None])
    bound_f0 = float(np.max(np.abs(f0v)) + np.max(np.abs(f0d)))
    bound_fL = float(np.max(np.abs(fLv)) + np.max(np.abs(fLd)))
    bound_fm = float(np.max(np.abs(fmv)) + np.max(np.abs(fmd)))
    cap = min(2 * L, max_rank + 3)
    buckets = enumerate_all(L, spec.interaction.avail, pruned=True, rank_cap=cap)
    shells: dict = {}
    for (M, N), terms in buckets.items():
        if M + N <= max_rank:
            continue
        total = 0.0
        for t in terms:
            fac = 1.0
            for m, p, n, q in zip(t.ms, t.ps, t.ns, t.qs):
                fac *= spec.interaction.sup_sharp(m + p, n + q) \
                    * (leg_unit ** (p + q) if p + q else 1.0)
            total += t.weight * fac
        if total:
            weighted = total * bound_f0 * bound_fL * (bound_fm ** max(L - 1, 0))
            shells[M + N] = shells.get(M + N, 0.0) + xi ** (-(M + N)) * weighted
    out = float(sum(shells.values()))
    if cap < 2 * L and len(shells) >= 2:
        top = max(shells)
        if shells.get(top - 1, 0) > 0:
            ratio = min(shells[top] / shells[top - 1], 0.9)
            out += shells[top] * ratio / (1 - ratio)
    return out


def contract_operator(seq_or_source, p: int, q: int, m: int, n: int,
                      K_fixed, basis: FockBasis, env: WickEnv,
                      shift=None):
    """Public single-insertion builder: the operator-valued grid function
    W_{p,q}^{m,n}[w](K_fixed) as dual arrays (nr, size, size, d_at, d_at).

    K_fixed is the external mode multi-index (creation slots first).
    """
    source = seq_or_source
    if isinstance(seq_or_source, KernelSequence):
        source = GridInteraction(seq_or_source)
    if not source.has(m + p, n + q):
        raise MissingKernelComponent("interaction lacks the required component",
                                     component=[m + p, n + q])
    K_fixed = tuple(int(k) for k in K_fixed)
    idx_c, idx_a = K_fixed[:m], K_fixed[m:]
    val_c = tuple(env.int_freqs[i] for i in idx_c)
    val_a = tuple(env.int_freqs[j] for j in idx_a)
    shift = env.out_r_grid if shift is None else shift
    return factor_matrix(source, m, p, n, q, idx_c, idx_a, val_c, val_a,
                         shift, env, basis)


# ---------------------------------------------------------------------------
# signed Neumann series of normal-ordered products


def neumann_normal_order(interaction, f_end, f_mid, env: WickEnv, xi: float,
                         l_max: int = 6, stop_tol: float = 1e-15,
                         first_sign: float = 1.0, term_prune: float | None = 1e-18):
    """Sum over L of (-1)^(L+1) * normal_order(F0 W F1 ... W FL).

    f_end: scalar dual callable used for F0 and FL; f_mid: the interior
    diagonal factor.  Returns (components, per_L_norms, tail_bound, dropped).
    Stops early once a term's xi-weighted contribution falls below stop_tol;
    raises SeriesDivergence if the measured per-L ratio reaches 1.
    """
    acc: dict = {}
    dropped_total = 0.0
    per_L = []
    last = None
    for L in range(1, l_max + 1):
        spec = WickProductSpec(L=L, interaction=interaction,
                               f_ends=(f_end, f_end), f_mid=f_mid)
        comps, dropped = normal_order(spec, env, xi=xi, term_prune=term_prune)
        sign = first_sign * ((-1.0) ** (L + 1))
        size = 0.0
        for key, (v, dv) in comps.items():
            size += xi ** (-(key[0] + key[1])) * (np.max(np.abs(v)) + np.max(np.abs(dv)))
            if key not in acc:
                acc[key] = [np.zeros_like(v), np.zeros_like(dv)]
            acc[key][0] += sign * v
            acc[key][1] += sign * dv
        dropped_total += dropped
        per_L.append(size)
        if last is not None and last > 0 and size > 0:
            ratio = size / last
            if ratio >= 1.0 and size > stop_tol:
                raise SeriesDivergence("insertion series is not contracting",
                                       ratio=ratio, L=L)
        last = size
        if size < stop_tol:
            break
    tail = 0.0
    if len(per_L) >= 2 and per_L[-2] > 0:
        ratio = min(per_L[-1] / per_L[-2], 0.99)
        tail = per_L[-1] * ratio / (1.0 - ratio)
    return acc, per_L, tail, dropped_total


def components_to_sequence(acc: dict, env: WickEnv, xi: float,
                           weights: np.ndarray, r_grid_out: np.ndarray,
                           z_tag, ledger: float, ground_sandwich: bool,
                           max_mn: int) -> KernelSequence:
    """Package raw engine output into a symmetrized, support-masked
    KernelSequence; atomic-valued chains are sandwiched to their ground
    element when ground_sandwich is set."""
    comps = {}
    for (M, N), (v, dv) in acc.items():
        if ground_sandwich:
            vv = v[..., 0, 0]
            dd = dv[..., 0, 0]
        else:
            vv, dd = v, dv
        kern = Kernel(M, N, r_grid_out, env.out_slot_freqs, vv, dd, z_tag)
        kern = symmetrize(kern)
        if env.mask_support:
            kern = apply_support(kern)
        comps[(M, N)] = kern
    return KernelSequence(comps, xi, env.out_slot_freqs, weights, r_grid_out,
                          ledger, z_tag, max_mn)
