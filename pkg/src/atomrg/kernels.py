"""Kernel sequences, their norms, and the operator assembly on the reduced space.

A Kernel holds grid samples of one component w_{m,n}(r, K): axis 0 is the
radial grid on [0, 1] (with exact d/dr samples alongside), the remaining m+n
axes are indexed by the photon modes (creation slots first).  Values are
forced to zero outside the support region r <= 1 - max(sum_c, sum_a); sup
norms are grid maxima and documented as lower bounds on the true sup.

Measure convention: mode weights are radial cell lengths of the normalized
measure, so the weighted L2 norm is sum over ordered mode tuples of
prod(q) * sup_r |w|^2, and the assembled operator carries sqrt(q_i omega_i)
per leg.  The sup over r is taken on [0, 1] throughout (the reduced space's
range); the companion definition with r >= 0 coincides there.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from itertools import permutations, product

import numpy as np

from .errors import InternalInvariantViolation, NotInRange
from .fock import FockBasis
from .interp import bary_eval, bary_weights, cheb_diff_matrix, hermite_eval, linear_weights

SNAPSHOT_VERSION = 1


# ---------------------------------------------------------------------------
# kernels


@dataclass
class Kernel:
    m: int
    n: int
    r_grid: np.ndarray
    freqs: np.ndarray
    values: np.ndarray            # complex, shape (nr,) + (d,)*(m+n)
    dvalues: np.ndarray           # d/dr samples, same shape
    z_tag: complex | None = None

    @property
    def rank(self) -> int:
        return self.m + self.n

    def copy(self) -> "Kernel":
        return Kernel(self.m, self.n, self.r_grid, self.freqs,
                      self.values.copy(), self.dvalues.copy(), self.z_tag)

    def slot_reduce(self, slots) -> tuple[np.ndarray, np.ndarray]:
        """Linear interpolation of all slot axes at the given frequencies,
        leaving the radial axis. Off-grid frequencies interpolate between
        modes; beyond the mode range the nearest sample is used."""
        v, dv = self.values, self.dvalues
        for freq in slots:
            stencil = linear_weights(self.freqs, float(freq))
            v = sum(w * np.take(v, j, axis=1) for j, w in stencil)
            dv = sum(w * np.take(dv, j, axis=1) for j, w in stencil)
        return v, dv

    def eval(self, r, slots=(), with_deriv: bool = False):
        if len(slots) != self.rank:
            raise ValueError("slot count mismatch")
        v, dv = self.slot_reduce(slots)
        return hermite_eval(self.r_grid, v, dv, r, with_deriv)

    def eval_at_modes(self, r, index_tuple, with_deriv: bool = False):
        """Fast path: slots given as exact mode indices."""
        sel = (slice(None),) + tuple(index_tuple)
        return hermite_eval(self.r_grid, self.values[sel], self.dvalues[sel],
                            r, with_deriv)


def support_mask(r_grid: np.ndarray, freqs: np.ndarray, m: int, n: int) -> np.ndarray:
    """Boolean mask of the discrete support region Q_{m,n}."""
    nr = len(r_grid)
    if m + n == 0:
        return np.ones(nr, dtype=bool)
    grids = np.meshgrid(*([freqs] * (m + n)), indexing="ij")
    s_c = sum(grids[:m]) if m else np.zeros_like(grids[0])
    s_a = sum(grids[m:]) if n else np.zeros_like(grids[0])
    lim = 1.0 - np.maximum(s_c, s_a)
    return r_grid.reshape((nr,) + (1,) * (m + n)) <= lim + 1e-12


def apply_support(kernel: Kernel) -> Kernel:
    mask = support_mask(kernel.r_grid, kernel.freqs, kernel.m, kernel.n)
    kernel.values = np.where(mask, kernel.values, 0.0)
    kernel.dvalues = np.where(mask, kernel.dvalues, 0.0)
    return kernel


def symmetrize(kernel: Kernel) -> Kernel:
    """Average over permutations of the creation slots and of the annihilation
    slots separately; contracts the sharp norm (never expands it)."""
    m, n = kernel.m, kernel.n
    if kernel.rank < 2 or (m < 2 and n < 2):
        return kernel.copy()
    acc_v = np.zeros_like(kernel.values)
    acc_d = np.zeros_like(kernel.dvalues)
    count = 0
    for pc in permutations(range(m)):
        for pa in permutations(range(n)):
            axes = (0,) + tuple(1 + i for i in pc) + tuple(1 + m + j for j in pa)
            acc_v += np.transpose(kernel.values, axes)
            acc_d += np.transpose(kernel.dvalues, axes)
            count += 1
    return Kernel(m, n, kernel.r_grid, kernel.freqs, acc_v / count, acc_d / count,
                  kernel.z_tag)


# ---------------------------------------------------------------------------
# norms


def norm_sharp(kernel: Kernel) -> float:
    """Grid sup of |w| plus grid sup of |dw/dr|."""
    return float(np.max(np.abs(kernel.values)) + np.max(np.abs(kernel.dvalues)))


def _weight_product(weights: np.ndarray, rank: int) -> np.ndarray:
    if rank == 0:
        return np.array(1.0)
    out = weights.copy()
    for _ in range(rank - 1):
        out = np.multiply.outer(out, weights)
    return out


def norm_l2(kernel: Kernel, weights: np.ndarray) -> float:
    """Quadrature-weighted l2 of the per-tuple sup over r."""
    sup = np.max(np.abs(kernel.values), axis=0)
    wprod = _weight_product(np.asarray(weights, dtype=float), kernel.rank)
    return float(np.sqrt(np.sum(wprod * sup ** 2)))


def norm_flat(kernel: Kernel, weights: np.ndarray) -> float:
    """Discrete sharp-measure norm that dominates the assembled operator norm:

        sum over tuples prod(q) * sup_r [ |w|^2 * prod_l (r + c_1+..+c_l)
                                                 * prod_l (r + a_1+..+a_l) ]
    """
    m, n = kernel.m, kernel.n
    if kernel.rank == 0:
        return float(np.max(np.abs(kernel.values)))
    grids = np.meshgrid(*([kernel.freqs] * (m + n)), indexing="ij")
    r = kernel.r_grid.reshape((-1,) + (1,) * (m + n))
    factor = np.ones(r.shape[:1] + grids[0].shape)
    cum = np.zeros_like(grids[0])
    for l in range(m):
        cum = cum + grids[l]
        factor = factor * (r + cum)
    cum = np.zeros_like(grids[0])
    for l in range(n):
        cum = cum + grids[m + l]
        factor = factor * (r + cum)
    sup = np.max(np.abs(kernel.values) ** 2 * factor, axis=0)
    wprod = _weight_product(np.asarray(weights, dtype=float), kernel.rank)
    return float(np.sqrt(np.sum(wprod * sup)))


# ---------------------------------------------------------------------------
# sequences


@dataclass
class KernelSequence:
    components: dict
    xi: float
    freqs: np.ndarray
    weights: np.ndarray
    r_grid: np.ndarray
    ledger: float = 0.0
    z_tag: complex | None = None
    max_mn: int = 4
    flags: dict = field(default_factory=dict)

    def component(self, m: int, n: int) -> Kernel | None:
        return self.components.get((m, n))

    def w00(self) -> Kernel:
        return self.components[(0, 0)]

    def vacuum_value(self) -> complex:
        return complex(self.w00().values[0])

    def norm_xi(self, min_rank: int = 0) -> float:
        """Weighted component sum plus the truncation ledger."""
        total = self.ledger
        for (m, n), k in self.components.items():
            if m + n >= min_rank:
                total += self.xi ** (-(m + n)) * norm_sharp(k)
        return float(total)

    def linear_norm(self) -> float:
        return float(sum(self.xi ** (-1) * norm_sharp(k)
                         for (m, n), k in self.components.items() if m + n == 1))

    def stored_norm(self, min_rank: int = 1) -> float:
        return float(sum(self.xi ** (-(m + n)) * norm_sharp(k)
                         for (m, n), k in self.components.items() if m + n >= min_rank))

    def copy(self) -> "KernelSequence":
        return KernelSequence({k: v.copy() for k, v in self.components.items()},
                              self.xi, self.freqs, self.weights, self.r_grid,
                              self.ledger, self.z_tag, self.max_mn, dict(self.flags))


def free_kernel(r_grid, freqs, weights, z: complex, xi: float,
                max_mn: int = 4) -> KernelSequence:
    """The free kernel w_{0,0}(r) = r - z, all higher components absent."""
    r_grid = np.asarray(r_grid, dtype=float)
    w00 = Kernel(0, 0, r_grid, np.asarray(freqs, float),
                 (r_grid - z).astype(complex), np.ones(len(r_grid), complex), z)
    return KernelSequence({(0, 0): w00}, xi, np.asarray(freqs, float),
                          np.asarray(weights, float), r_grid, 0.0, z, max_mn)


# ---------------------------------------------------------------------------
# assembly on the reduced space


@dataclass(frozen=True)
class ReducedBasis:
    parent: FockBasis
    selection: np.ndarray         # parent indices of states with E <= 1

    @property
    def size(self) -> int:
        return len(self.selection)

    @property
    def energies(self) -> np.ndarray:
        return self.parent.energies[self.selection]

    @property
    def states(self) -> np.ndarray:
        return self.parent.states[self.selection]

    def parent_to_red(self) -> dict:
        return {int(p): i for i, p in enumerate(self.selection)}


def build_reduced(parent: FockBasis, cutoff: float = 1.0) -> ReducedBasis:
    sel = np.nonzero(parent.energies <= cutoff + 1e-9)[0]
    return ReducedBasis(parent=parent, selection=sel)


def assemble(seq: KernelSequence, red: ReducedBasis) -> np.ndarray:
    """Dense matrix of H(w) = sum_{m,n} H_{m,n}(w) on the reduced space.

    Each component is the quadrature sum over ordered mode tuples of
    a*(tuple) w(H_f, tuple) a(tuple) with sqrt(q omega) per leg, sandwiched by
    the reduced-space projection (equivalent to the cutoff form by
    pull-through).
    """
    for (m, n) in seq.components:
        if m + n > seq.max_mn:
            raise InternalInvariantViolation("kernel component beyond the configured cap",
                                             component=[m, n], max_mn=seq.max_mn)
    size = red.size
    H = np.zeros((size, size), dtype=complex)
    freqs = seq.freqs
    c_leg = np.sqrt(np.asarray(seq.weights, float) * freqs)
    p2r = red.parent_to_red()
    states = red.states
    d = len(freqs)

    for (m, n), kern in sorted(seq.components.items()):
        if m + n == 0:
            H[np.diag_indices(size)] += hermite_eval(kern.r_grid, kern.values,
                                                     kern.dvalues, red.energies)
            continue
        for I in product(range(d), repeat=m):
            for J in product(range(d), repeat=n):
                coeff = np.prod([c_leg[i] for i in I]) * np.prod([c_leg[j] for j in J])
                vals = kern.values[(slice(None),) + I + J]
                dvals = kern.dvalues[(slice(None),) + I + J]
                if not np.any(vals) and not np.any(dvals):
                    continue
                for col in range(red.size):
                    occ = states[col].copy()
                    amp = 1.0
                    ok = True
                    for j in J:
                        if occ[j] == 0:
                            ok = False
                            break
                        amp *= np.sqrt(occ[j])
                        occ[j] -= 1
                    if not ok:
                        continue
                    e_mid = float(occ @ freqs)
                    for i in I:
                        occ[i] += 1
                        amp *= np.sqrt(occ[i])
                    pidx = red.parent.lookup(occ)
                    if pidx is None or pidx not in p2r:
                        continue
                    val = hermite_eval(kern.r_grid, vals, dvals, e_mid)
                    H[p2r[pidx], col] += coeff * amp * val
    return H


# ---------------------------------------------------------------------------
# ball reports


@dataclass
class BallReport:
    alpha: float
    beta_val: float
    gamma: float
    linear_norm: float
    gamma_stored: float
    in_ball: bool
    in_B0: bool
    thresholds: tuple

    def as_dict(self) -> dict:
        return {
            "alpha": self.alpha, "beta": self.beta_val, "gamma": self.gamma,
            "gamma_stored": self.gamma_stored, "linear_norm": self.linear_norm,
            "in_ball": self.in_ball, "in_B0": self.in_B0,
        }


def ball_report(kernels, alpha_max: float, beta_max: float, gamma_max: float,
                zero_tol: float = 1e-12) -> BallReport:
    """Ball membership of a kernel sequence or a list of per-z instances.

    alpha = sup |d_r w00 - 1|, beta = sup |w00(z, 0) + z| (plain |w00(0)| when
    no spectral tag is attached), gamma = xi-norm of the rank >= 1 part
    including the truncation ledger.  in_B0 additionally requires the
    rank-one components to vanish at the configured zero tolerance.
    """
    seqs = kernels if isinstance(kernels, (list, tuple)) else [kernels]
    alpha = beta = gamma = linear = gamma_stored = 0.0
    for seq in seqs:
        w00 = seq.w00()
        alpha = max(alpha, float(np.max(np.abs(w00.dvalues - 1.0))))
        v0 = seq.vacuum_value()
        beta = max(beta, abs(v0 + seq.z_tag) if seq.z_tag is not None else abs(v0))
        gamma = max(gamma, seq.stored_norm(1) + seq.ledger)
        gamma_stored = max(gamma_stored, seq.stored_norm(1))
        linear = max(linear, seq.linear_norm())
    in_ball = alpha <= alpha_max and beta <= beta_max and gamma <= gamma_max
    return BallReport(alpha=alpha, beta_val=beta, gamma=gamma,
                      linear_norm=linear, gamma_stored=gamma_stored,
                      in_ball=in_ball, in_B0=in_ball and linear <= zero_tol,
                      thresholds=(alpha_max, beta_max, gamma_max, zero_tol))


# ---------------------------------------------------------------------------
# symmetry (kernel <-> adjoint correspondence)


def symmetry_defect(seq: KernelSequence) -> float:
    """Deviation from w_{m,n} = conj(w_{n,m} with slot groups swapped) at a
    real spectral parameter; zero iff H(w(conj z)) = H(w(z))^dagger there."""
    worst = 0.0
    for (m, n), k in seq.components.items():
        other = seq.component(n, m)
        if other is None:
            worst = max(worst, float(np.max(np.abs(k.values))))
            continue
        axes = (0,) + tuple(1 + n + i for i in range(m)) + tuple(1 + j for j in range(n))
        mirrored = np.conj(np.transpose(other.values, axes))
        worst = max(worst, float(np.max(np.abs(k.values - mirrored))))
    return worst


# ---------------------------------------------------------------------------
# reconstruction (injectivity probe)


@dataclass
class ReconstructionResult:
    sequence: KernelSequence
    samples: dict
    residual: float
    rank: int
    unknowns: int

    @property
    def identifiable(self) -> bool:
        return self.rank == self.unknowns


def reconstruct(H: np.ndarray, red: ReducedBasis, template: KernelSequence,
                rtol: float = 1e-8) -> ReconstructionResult:
    """Recover kernel samples from matrix elements between low-occupancy states.

    Solves the linear system generated by the assembly rules for the sample
    values w_{m,n}(E, sorted mode tuple); symmetric kernels make the sorted
    tuple the right unknown.  Raises NotInRange if the least-squares residual
    shows the matrix is not of the assembled form.
    """
    freqs = template.freqs
    d = len(freqs)
    c_leg = np.sqrt(np.asarray(template.weights, float) * freqs)
    p2r = red.parent_to_red()
    states = red.states
    keys: list = []
    key_index: dict = {}
    rows: list[list[tuple[int, float]]] = []
    rhs: list[complex] = []
    comps = [(m, n) for (m, n) in
             sorted({(m, n) for m in range(template.max_mn + 1)
                     for n in range(template.max_mn + 1 - m)})]

    entry_terms: dict = {}
    for (m, n) in comps:
        for I in product(range(d), repeat=m):
            for J in product(range(d), repeat=n):
                coeff = np.prod([c_leg[i] for i in I] + [1.0]) * np.prod([c_leg[j] for j in J] + [1.0])
                for col in range(red.size):
                    occ = states[col].copy()
                    amp = 1.0
                    ok = True
                    for j in J:
                        if occ[j] == 0:
                            ok = False
                            break
                        amp *= np.sqrt(occ[j])
                        occ[j] -= 1
                    if not ok:
                        continue
                    e_mid = float(occ @ freqs)
                    for i in I:
                        occ[i] += 1
                        amp *= np.sqrt(occ[i])
                    pidx = red.parent.lookup(occ)
                    if pidx is None or pidx not in p2r:
                        continue
                    row_col = (p2r[pidx], col)
                    key = (m, n, round(e_mid, 10), tuple(sorted(I)), tuple(sorted(J)))
                    if key not in key_index:
                        key_index[key] = len(keys)
                        keys.append(key)
                    entry_terms.setdefault(row_col, []).append(
                        (key_index[key], coeff * amp))

    n_unknown = len(keys)
    A = np.zeros((red.size * red.size, n_unknown), dtype=complex)
    b = np.zeros(red.size * red.size, dtype=complex)
    for (r, c) in product(range(red.size), repeat=2):
        b[r * red.size + c] = H[r, c]
    for (r, c), terms in entry_terms.items():
        for k_idx, coef in terms:
            A[r * red.size + c, k_idx] += coef
    sol, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    resid = float(np.linalg.norm(A @ sol - b))
    scale = max(float(np.linalg.norm(H)), 1e-30)
    if resid > rtol * scale + 1e-12:
        raise NotInRange("matrix is not in the range of the assembly map",
                         residual=resid, scale=scale)

    samples = {key: complex(sol[i]) for key, i in key_index.items()}
    comps_out: dict = {}
    for (m, n) in sorted({(k[0], k[1]) for k in keys}):
        sub = {k: v for k, v in samples.items() if (k[0], k[1]) == (m, n)}
        energies = sorted({k[2] for k in sub})
        e_grid = np.array(energies, dtype=float)
        shape = (len(e_grid),) + (d,) * (m + n)
        vals = np.zeros(shape, dtype=complex)
        for key, v in sub.items():
            e_idx = energies.index(key[2])
            for I in set(permutations(key[3])):
                for J in set(permutations(key[4])):
                    vals[(e_idx,) + I + J] = v
        if len(e_grid) > 1:
            dvals = np.gradient(vals, e_grid, axis=0)
        else:
            dvals = np.zeros_like(vals)
        comps_out[(m, n)] = Kernel(m, n, e_grid, freqs, vals, dvals, template.z_tag)
    seq = KernelSequence(comps_out, template.xi, freqs, template.weights,
                         template.r_grid, 0.0, template.z_tag, template.max_mn)
    return ReconstructionResult(sequence=seq, samples=samples, residual=resid,
                                rank=int(rank), unknowns=n_unknown)


def reconstruction_error(result: ReconstructionResult, original: KernelSequence) -> float:
    """Max deviation of recovered samples from the original kernel's
    interpolant at the realized sample coordinates."""
    worst = 0.0
    for (m, n, e, I, J), v in result.samples.items():
        kern = original.component(m, n)
        truth = 0.0 if kern is None else kern.eval(
            e, tuple(original.freqs[i] for i in I) + tuple(original.freqs[j] for j in J))
        worst = max(worst, abs(v - complex(truth)))
    return worst


# ---------------------------------------------------------------------------
# z-families


@dataclass
class ZFamily:
    nodes: np.ndarray             # real Chebyshev-Lobatto sample points
    kernels: list                 # KernelSequence per node

    def __post_init__(self):
        self._bw = bary_weights(np.asarray(self.nodes, dtype=float))
        self._diff = cheb_diff_matrix(np.asarray(self.nodes, dtype=float))

    @property
    def xi(self) -> float:
        return self.kernels[0].xi

    @property
    def ledger(self) -> float:
        return max(k.ledger for k in self.kernels)

    def vacuum_values(self) -> np.ndarray:
        return np.array([k.vacuum_value() for k in self.kernels])

    def w00_vacuum(self, z: complex) -> complex:
        return complex(bary_eval(self.nodes, self._bw, self.vacuum_values(), z))

    def w00_vacuum_deriv(self, z: complex) -> complex:
        dv = self._diff @ self.vacuum_values()
        return complex(bary_eval(self.nodes, self._bw, dv, z))

    def at(self, z: complex) -> KernelSequence:
        """Interpolate every component (values and derivatives) at z."""
        base = self.kernels[0]
        comps = {}
        for key in base.components:
            vals = np.stack([k.components[key].values for k in self.kernels])
            dvals = np.stack([k.components[key].dvalues for k in self.kernels])
            comps[key] = Kernel(key[0], key[1], base.r_grid, base.freqs,
                                bary_eval(self.nodes, self._bw, vals, z),
                                bary_eval(self.nodes, self._bw, dvals, z),
                                complex(z))
        return KernelSequence(comps, base.xi, base.freqs, base.weights,
                              base.r_grid, self.ledger, complex(z), base.max_mn)

    def interp_decay(self) -> float:
        """Tail magnitude of the Chebyshev expansion of the vacuum section;
        the a-posteriori analyticity / interpolation-quality certificate."""
        from .interp import cheb_coeff_decay
        coef = cheb_coeff_decay(np.asarray(self.nodes, float), self.vacuum_values())
        return float(np.max(coef[-2:]) / max(np.max(coef), 1e-300))


def family_symmetry_defect(family: ZFamily) -> float:
    return max(symmetry_defect(seq) for seq in family.kernels)


# ---------------------------------------------------------------------------
# snapshots


def save_snapshot(path: str, family: ZFamily, meta: dict | None = None):
    arrays = {"nodes": np.asarray(family.nodes)}
    header = {
        "version": SNAPSHOT_VERSION,
        "xi": family.xi,
        "meta": meta or {},
        "nodes": len(family.kernels),
        "components": [],
        "ledgers": [k.ledger for k in family.kernels],
    }
    base = family.kernels[0]
    arrays["r_grid"] = base.r_grid
    arrays["freqs"] = base.freqs
    arrays["weights"] = base.weights
    for (m, n) in sorted(base.components):
        header["components"].append([m, n])
        arrays[f"values_{m}_{n}"] = np.stack(
            [k.components[(m, n)].values for k in family.kernels])
        arrays[f"dvalues_{m}_{n}"] = np.stack(
            [k.components[(m, n)].dvalues for k in family.kernels])
    arrays["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    np.savez_compressed(path, **arrays)


def load_snapshot(path: str) -> ZFamily:
    data = np.load(path)
    header = json.loads(bytes(data["header"]).decode())
    if header["version"] != SNAPSHOT_VERSION:
        raise InternalInvariantViolation("snapshot version mismatch",
                                         version=header["version"])
    nodes = data["nodes"]
    seqs = []
    for j in range(header["nodes"]):
        comps = {}
        for (m, n) in map(tuple, header["components"]):
            comps[(m, n)] = Kernel(m, n, data["r_grid"], data["freqs"],
                                   data[f"values_{m}_{n}"][j],
                                   data[f"dvalues_{m}_{n}"][j],
                                   complex(nodes[j]))
        seqs.append(KernelSequence(comps, header["xi"], data["freqs"],
                                   data["weights"], data["r_grid"],
                                   header["ledgers"][j], complex(nodes[j])))
    return ZFamily(nodes=np.asarray(nodes, dtype=float), kernels=seqs)
