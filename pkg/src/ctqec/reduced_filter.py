"""Reduced filters: the Wonham syndrome filter and feedback-coefficient bases.

The reduced state tracks expectations ``x_B = Tr[B rho]`` of operators
``B = omega * Q * Pi_s`` with ``omega`` in {1, i}, ``Q`` a Pauli string and
``Pi_s`` a syndrome projector.  Every product of Paulis and projectors met by
the filter dynamics reduces to this form:

* ``Pi_s R = R Pi_{s ^ m(R)}`` where ``m(R)`` marks the generators that
  anticommute with ``R``;
* ``S_k Pi_s = v_k(s) Pi_s`` for a stabilizer element ``S_k``, so ``Q`` is only
  needed modulo the stabilizer group.  We keep the coset representative of
  least weight.

Syndromes are bit masks over the generators: bit ``i`` set means outcome -1
for generator ``i``.  Evolution of ``x`` is linear except for the
normalization term ``-2 Tr[g rho] x`` of the measurement innovation, and
``Tr[g rho]`` is a linear function of the syndrome probabilities.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import sde
from .codes import CodeSpec, build_syndrome_space, five_qubit_code
from .full_filter import ModelParams
from .pauli import PauliString, letters_commute, multiply_letters, realize

log = logging.getLogger(__name__)

_IPOW = np.array([1, 1j, -1, -1j])
DEFAULT_OPERATOR_BUDGET = 200_000
DENSE_LIMIT = 256


class ClosureError(RuntimeError):
    """Closure grew past the operator budget."""


class CombinerError(RuntimeError):
    """The real-coordinate map failed a consistency check."""


def first_level_dimension(n: int) -> int:
    """Coordinates of the first-level filter of an ``n``-qubit perfect code."""
    return (2 + 9 * n * (n + 1)) // 2


# --------------------------------------------------------------------------
# symbolic algebra


class _Algebra:
    """Canonical forms of ``phase * P * Pi_s`` for one code."""

    def __init__(self, code: CodeSpec):
        self.code = code
        self.n = code.n
        self.l = code.l
        self._gen_letters = [g.letters for g in code.generators]
        # stabilizer element k = product of generators whose bit is set in k
        self.stab = []
        for k in range(2 ** self.l):
            ph, letters = 0, (0,) * self.n
            for i in range(self.l):
                if k >> i & 1:
                    g = code.generators[i]
                    dk, letters = multiply_letters(letters, g.letters)
                    ph += dk + g.phase
            self.stab.append((ph % 4, letters))
        self._canon = {}
        self._mask = {}

    def mask(self, letters) -> int:
        m = self._mask.get(letters)
        if m is None:
            m = sum(1 << i for i, g in enumerate(self._gen_letters) if not letters_commute(g, letters))
            self._mask[letters] = m
        return m

    def canonical_letters(self, letters):
        """``(psi, Q, k)`` with ``letters * S_k = i**psi * Q`` and ``Q`` minimal."""
        hit = self._canon.get(letters)
        if hit is None:
            best = None
            for k, (sph, sl) in enumerate(self.stab):
                dk, q = multiply_letters(letters, sl)
                key = (sum(1 for c in q if c), q)
                if best is None or key < best[0]:
                    best = (key, (dk + sph) % 4, q, k)
            hit = best[1:]
            self._canon[letters] = hit
        return hit

    def reduce(self, phase, letters, s):
        """Canonical ``(phase, Q, s)`` equal to ``i**phase * letters * Pi_s``."""
        psi, q, k = self.canonical_letters(letters)
        sign = 2 * (bin(k & s).count("1") % 2)
        return (phase + psi + sign) % 4, q, s

    def left(self, pauli_letters, phase, q, s):
        dk, out = multiply_letters(pauli_letters, q)
        return phase + dk, out, s

    def right(self, pauli_letters, phase, q, s):
        dk, out = multiply_letters(q, pauli_letters)
        return phase + dk, out, s ^ self.mask(pauli_letters)


def _syndrome_masks(code: CodeSpec, space):
    """All ``2**l`` masks, syndrome-space order first."""
    masks = []
    for outcome in space.outcomes:
        masks.append(sum(1 << i for i, h in enumerate(outcome) if h < 0))
    rest = [m for m in range(2 ** code.l) if m not in masks]
    return masks + rest


def _projector(code: CodeSpec, mask: int) -> np.ndarray:
    d = 2 ** code.n
    proj = np.eye(d, dtype=complex)
    for i, g in enumerate(code.generators):
        sign = -1 if mask >> i & 1 else 1
        proj = proj @ (np.eye(d) + sign * realize(g)) / 2
    return proj


@dataclass(frozen=True)
class CoefficientOperator:
    """``i**prefactor * left * Pi_core * right`` with prefactor 0 (1) or 1 (i)."""

    prefactor: int
    left: PauliString
    core: int
    right: PauliString
    core_label: str = ""

    def __post_init__(self):
        if self.prefactor not in (0, 1):
            raise ValueError("prefactor must be 0 (for 1) or 1 (for i)")

    def text(self) -> str:
        parts = []
        if self.left.weight or self.left.phase:
            parts.append(self.left.label())
        parts.append(f"P[{self.core_label or self.core}]")
        if self.right.weight or self.right.phase:
            parts.append(self.right.label())
        return ("i" if self.prefactor else "") + "*".join(parts)

    def __str__(self):
        return self.text()

    def realize(self, code: CodeSpec) -> np.ndarray:
        return _IPOW[self.prefactor] * realize(self.left) @ _projector(code, self.core) @ realize(self.right)


# --------------------------------------------------------------------------
# closure


@dataclass
class Closure:
    """Operators reached from the syndrome projectors and their generator matrices.

    ``keys[j] = (Q, s)`` stands for ``i**prefactor[j] * Q * Pi_s``.  Matrices
    act on the vector ``x`` of expectations: ``dx_j = sum_k M[j, k] x_k``.
    Columns may reference keys beyond the expanded set; those are listed in
    ``keys`` as well but have ``expanded[j] = False``.
    """

    code: CodeSpec
    keys: list
    prefactor: np.ndarray
    level: np.ndarray
    expanded: np.ndarray
    noise: sp.csr_matrix
    meas_drift: sp.csr_matrix
    meas: list
    fb: list
    channels: tuple
    n_syndromes: int
    masks: list
    core_labels: dict
    raw_first_level: int
    max_level: int | None

    def __len__(self):
        return len(self.keys)

    def operator(self, j) -> CoefficientOperator:
        q, s = self.keys[j]
        return CoefficientOperator(int(self.prefactor[j]), PauliString(0, q), s,
                                   PauliString.identity(self.code.n), self.core_labels[s])

    def index(self, q, s):
        return self._index[(q, s)]


def build_closure(code: CodeSpec, max_level: int | None = None, channels=None, space=None,
                  budget: int = DEFAULT_OPERATOR_BUDGET) -> Closure:
    """Close the syndrome projectors under the adjoint filter generators.

    Noise and measurement keep the feedback level; each feedback channel adds
    one.  Operators above ``max_level`` are recorded but not expanded.
    """
    space = build_syndrome_space(code) if space is None else space
    channels = tuple(code.error_set if channels is None else channels)
    alg = _Algebra(code)
    masks = _syndrome_masks(code, space)
    labels = {m: (space.labels[a] if a < len(space.labels) else f"s{m}") for a, m in enumerate(masks)}
    ident = (0,) * code.n
    noise_l = [e.letters for e in code.error_set]
    gen_l = [g.letters for g in code.generators]
    ch_l = [c.letters for c in channels]

    index = {}
    keys, pref, level = [], [], []
    inf = float("inf")

    def key_of(phase, q, s):
        """Register a canonical term; return (index, coefficient exponent)."""
        k = index.get((q, s))
        if k is None:
            k = len(keys)
            if k >= budget:
                raise ClosureError(f"closure exceeded the operator budget of {budget} "
                                   f"({len(keys)} operators so far)")
            index[(q, s)] = k
            keys.append((q, s))
            pref.append(phase % 2)
            level.append(inf)
        return k, (phase - pref[k]) % 4

    for m in masks:
        key_of(0, ident, m)
    for j in range(len(masks)):
        level[j] = 0

    rows = {"noise": [], "md": [], **{f"g{i}": [] for i in range(code.l)},
            **{f"f{c}": [] for c in range(len(channels))}}

    def add(name, j, terms):
        out = []
        for coef, (phase, q, s) in terms:
            k, e = key_of(*alg.reduce(phase, q, s))
            rows[name].append((j, k, coef * _IPOW[e]))
            out.append(k)
        return out

    raw_first = set()
    expanded = set()
    queue = deque(range(len(masks)))
    while queue:
        j = queue.popleft()
        if j in expanded or (max_level is not None and level[j] > max_level):
            continue
        expanded.add(j)
        q, s = keys[j]
        w = pref[j]
        # noise: sum_sigma sigma B sigma - B
        terms = [(-float(len(noise_l)), (w, q, s))]
        terms += [(1.0, alg.right(e, *alg.left(e, w, q, s))) for e in noise_l]
        same = add("noise", j, terms)
        # measurement dissipator g B g - B and linear part g B + B g
        terms = [(-float(len(gen_l)), (w, q, s))]
        terms += [(1.0, alg.right(g, *alg.left(g, w, q, s))) for g in gen_l]
        same += add("md", j, terms)
        for i, g in enumerate(gen_l):
            same += add(f"g{i}", j, [(1.0, alg.left(g, w, q, s)), (1.0, alg.right(g, w, q, s))])
        # feedback: i (sigma B - B sigma)
        deeper = []
        for c, sig in enumerate(ch_l):
            deeper += add(f"f{c}", j, [(1.0, alg.left(sig, w + 1, q, s)),
                                       (1.0, alg.right(sig, w + 3, q, s))])
            if level[j] == 0:
                raw_first.add((1, sig, s, ident))
                raw_first.add((1, ident, s, sig))
        # 0-1 BFS relaxation
        for k in same:
            if level[j] < level[k]:
                level[k] = level[j]
                queue.appendleft(k)
        for k in deeper:
            if level[j] + 1 < level[k]:
                level[k] = level[j] + 1
                queue.append(k)
    _check_levels(level, rows)

    n = len(keys)

    def mat(name):
        entries = rows[name]
        if not entries:
            return sp.csr_matrix((n, n), dtype=complex)
        r, c, v = zip(*entries)
        m = sp.csr_matrix((np.array(v, dtype=complex), (r, c)), shape=(n, n))
        m.sum_duplicates()
        m.eliminate_zeros()
        return m

    exp_mask = np.zeros(n, dtype=bool)
    exp_mask[sorted(expanded)] = True
    out = Closure(
        code=code,
        keys=keys,
        prefactor=np.array(pref),
        level=np.array(level),
        expanded=exp_mask,
        noise=mat("noise"),
        meas_drift=mat("md"),
        meas=[mat(f"g{i}") for i in range(code.l)],
        fb=[mat(f"f{c}") for c in range(len(channels))],
        channels=channels,
        n_syndromes=len(masks),
        masks=masks,
        core_labels=labels,
        raw_first_level=len(raw_first),
        max_level=max_level,
    )
    out._index = index
    return out


def _check_levels(level, rows):
    # noise and measurement keep the level; feedback moves it by at most one
    for name, entries in rows.items():
        gap = 1 if name.startswith("f") else 0
        for j, k, _ in entries:
            if abs(level[j] - level[k]) > gap:
                raise CombinerError(f"{name} couples levels {level[j]} and {level[k]}")


# --------------------------------------------------------------------------
# real coordinates


def _triplets(m) -> list:
    m = sp.coo_matrix(m)
    return [[int(r), int(c), float(v)] for r, c, v in zip(m.row, m.col, m.data)]


@dataclass
class CoefficientBasis:
    """A reduced filter's real coordinates ``y = combiner @ x`` and their dynamics.

    The first ``n_syndromes`` coordinates are the syndrome probabilities in
    syndrome-space order.  Column ``a`` of ``combiner`` is closure operator
    ``key_ids[a]``.  ``noise`` and ``meas_drift`` are the adjoint
    generators of ``sum D[sigma]`` and ``sum D[g]``; ``meas[l]`` is that of
    ``B -> g_l B + B g_l``; ``fb[c]`` that of ``B -> i (sigma_c B - B sigma_c)``.
    ``control_index[c] = (j, a)`` means the channel-c feedback observable equals
    ``a * y[j]``.
    """

    kind: str
    code: CodeSpec
    closure: Closure
    channels: tuple
    labels: list
    levels: np.ndarray
    n_syndromes: int
    combiner: sp.csr_matrix
    key_ids: np.ndarray
    noise: sp.csr_matrix
    meas_drift: sp.csr_matrix
    meas: list
    fb: list
    h: np.ndarray
    control_index: dict

    def __len__(self):
        return len(self.labels)

    def initial_state(self, rho0=None) -> np.ndarray:
        """Projection of ``rho0`` (default: encoded zero, or the codespace state)."""
        if rho0 is None:
            p0 = _projector(self.code, self.closure.masks[0])
            if self.code.k == 1:
                rho0 = p0 @ (np.eye(len(p0)) + realize(self.code.logical_z)) / 2
            else:
                rho0 = p0
            rho0 = rho0 / np.trace(rho0).real
        return self.project(rho0)

    def project(self, rho) -> np.ndarray:
        """Coordinates of the density matrix ``rho``."""
        rows = getattr(self, "_proj_rows", None)
        if rows is None:
            cl = self.closure
            ops = np.zeros((len(self.key_ids), 4 ** self.code.n), dtype=complex)
            for a in np.unique(self.combiner.indices):
                # Tr[B rho] = sum_ij B_ij rho_ji
                ops[a] = cl.operator(self.key_ids[a]).realize(self.code).T.ravel()
            rows = self.combiner @ ops
            self._proj_rows = rows
        return (rows @ np.asarray(rho).ravel()).real

    def level_indices(self, level: int) -> np.ndarray:
        return np.flatnonzero(self.levels == level)

    def to_dict(self) -> dict:
        cl = self.closure
        used = [int(self.key_ids[a]) for a in np.unique(self.combiner.indices)]
        comb = sp.coo_matrix(self.combiner)
        return {
            "format": "coefficient-basis/1",
            "kind": self.kind,
            "code": self.code.to_dict(),
            "channels": [c.label() for c in self.channels],
            "coordinates": [{"label": lab, "level": int(lv)} for lab, lv in zip(self.labels, self.levels)],
            "operators": [{"index": k, "text": cl.operator(k).text(), "level": int(cl.level[k])}
                          for k in used],
            "combiner": [[int(r), int(self.key_ids[c]), float(v.real), float(v.imag)]
                         for r, c, v in zip(comb.row, comb.col, comb.data)],
            "outcomes": self.h.astype(int).tolist(),
            "noise": _triplets(self.noise),
            "meas_drift": _triplets(self.meas_drift),
            "meas": [_triplets(m) for m in self.meas],
            "fb": {c.label(): _triplets(m) for c, m in zip(self.channels, self.fb)},
            "control_index": {self.channels[c].label(): [int(j), float(a)]
                              for c, (j, a) in sorted(self.control_index.items())},
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")


def _realify(cl: Closure, keep):
    """Real combinations of the kept keys.

    ``B_k^dagger = mu B_m`` pairs key k with key m.  For ``m != k`` the pair
    gives ``x_k + mu x_m`` and ``i x_k - i mu x_m``; a self-adjoint key gives
    ``x_k`` (``mu = 1``) or ``i x_k`` (``mu = -1``).  Returns the forward map
    ``T``, its inverse, labels and levels over the kept keys.
    """
    alg = _Algebra(cl.code)
    pos = {k: a for a, k in enumerate(keep)}
    rows, inv = [], []  # (row, col, value) of T and of T^-1 (in kept-key space)
    labels, levels = [], []
    seen = set()
    for k in keep:
        if k in seen:
            continue
        q, s = cl.keys[k]
        w = int(cl.prefactor[k])
        m = cl.index(q, s ^ alg.mask(q))
        mu = _IPOW[(-w - int(cl.prefactor[m])) % 4]
        if m not in pos:
            raise CombinerError(f"adjoint partner of {cl.operator(k)} was truncated")
        seen.update((k, m))
        text = cl.operator(k).text()
        r = len(labels)
        if m == k:
            if abs(mu - 1) < 1e-12:
                rows.append((r, pos[k], 1.0))
                inv.append((pos[k], r, 1.0))
                labels.append(text)
            else:
                rows.append((r, pos[k], 1j))
                inv.append((pos[k], r, -1j))
                labels.append(f"i({text})")
            levels.append(cl.level[k])
            continue
        rows += [(r, pos[k], 1.0), (r, pos[m], mu), (r + 1, pos[k], 1j), (r + 1, pos[m], -1j * mu)]
        inv += [(pos[k], r, 0.5), (pos[k], r + 1, -0.5j),
                (pos[m], r, 0.5 * np.conj(mu)), (pos[m], r + 1, 0.5j * np.conj(mu))]
        labels += [f"re {text}", f"im {text}"]
        levels += [cl.level[k], cl.level[k]]
    n = len(keep)

    def build(entries):
        r, c, v = zip(*entries)
        return sp.csr_matrix((np.array(v, dtype=complex), (r, c)), shape=(n, n))

    return build(rows), build(inv), labels, np.array(levels)


def _restrict(m, keep):
    return m[keep][:, keep]


def _real(m, what):
    m = sp.csr_matrix(m)
    m.sum_duplicates()
    if m.nnz and np.abs(m.data.imag).max() > 1e-9:
        raise CombinerError(f"{what} has imaginary entries in real coordinates")
    out = sp.csr_matrix(m.real)
    out.eliminate_zeros()
    return out


def _control_functionals(cl: Closure, keep, channels):
    """Rows over kept keys of ``Tr[-i[Pi_0, sigma] rho] = Tr[(i sigma Pi_0 - i Pi_0 sigma) rho]``."""
    alg = _Algebra(cl.code)
    pos = {k: a for a, k in enumerate(keep)}
    ident = (0,) * cl.code.n
    s0 = cl.masks[0]
    out = np.zeros((len(channels), len(keep)), dtype=complex)
    for c, sig in enumerate(channels):
        for phase, q, s in (alg.left(sig.letters, 1, ident, s0), alg.right(sig.letters, 3, ident, s0)):
            ph, q, s = alg.reduce(phase, q, s)
            k = cl.index(q, s)
            if k not in pos:
                raise CombinerError(f"control observable for {sig.label()} needs a truncated operator")
            out[c, pos[k]] += _IPOW[(ph - int(cl.prefactor[k])) % 4]
    return out


def _make_basis(kind, cl: Closure, keep, reduce_fn=None, closed=True) -> CoefficientBasis:
    keep = list(keep)
    t, tinv, labels, levels = _realify(cl, keep)
    mats = {"noise": cl.noise, "meas_drift": cl.meas_drift}
    mats.update({f"g{i}": m for i, m in enumerate(cl.meas)})
    mats.update({f"f{c}": m for c, m in enumerate(cl.fb)})
    real = {name: _real(t @ _restrict(m, keep) @ tinv, name) for name, m in mats.items()}
    ns = cl.n_syndromes
    coords = np.arange(len(labels))
    if reduce_fn is not None:
        coords = reduce_fn(real, ns, levels)
    sel = list(coords)
    t_sel = t[sel]
    # kept coordinates must not read from dropped ones, unless dropping is the point
    for name, m in (mats.items() if closed else ()):
        lhs = t_sel @ _restrict(m, keep)
        rhs = real[name][sel][:, sel] @ t_sel
        err = abs(lhs - rhs).max() if (lhs - rhs).nnz else 0.0
        if err > 1e-9:
            raise CombinerError(f"coordinates are not closed under {name} (residual {err:.3g})")
    functionals = _control_functionals(cl, keep, cl.channels) @ tinv
    control_index = {}
    for c in range(len(cl.channels)):
        nz = np.flatnonzero(np.abs(functionals[c]) > 1e-12)
        if len(nz) != 1 or nz[0] not in set(sel) or abs(functionals[c, nz[0]].imag) > 1e-12:
            raise CombinerError(f"control observable for {cl.channels[c].label()} is not a "
                                f"single real coordinate")
        control_index[c] = (sel.index(nz[0]), float(functionals[c, nz[0]].real))
    if np.linalg.matrix_rank(t_sel.toarray()) != len(sel):
        raise CombinerError("combiner rows are linearly dependent")
    h = np.array([[-1.0 if m >> i & 1 else 1.0 for m in cl.masks] for i in range(cl.code.l)])
    pick = lambda name: sp.csr_matrix(real[name][sel][:, sel])
    return CoefficientBasis(
        kind=kind,
        code=cl.code,
        closure=cl,
        channels=cl.channels,
        labels=[labels[j] for j in sel],
        levels=levels[sel],
        n_syndromes=ns,
        combiner=sp.csr_matrix(t_sel),
        key_ids=np.array(keep),
        noise=pick("noise"),
        meas_drift=pick("meas_drift"),
        meas=[pick(f"g{i}") for i in range(cl.code.l)],
        fb=[pick(f"f{c}") for c in range(len(cl.channels))],
        h=h,
        control_index=control_index,
    )


def _observable_closure(real, ns, levels):
    """Coordinates reachable from the syndrome block by reading matrix rows."""
    mats = [sp.csr_matrix(m) for m in real.values()]
    keep = set(range(ns))
    todo = list(range(ns))
    while todo:
        j = todo.pop()
        for m in mats:
            for k in m.indices[m.indptr[j]:m.indptr[j + 1]]:
                if k not in keep:
                    keep.add(int(k))
                    todo.append(int(k))
    return sorted(keep)


def untruncated_basis(code: CodeSpec, closure: Closure | None = None) -> CoefficientBasis:
    """Every operator of the full closure, in real coordinates (4**n for a perfect code)."""
    cl = build_closure(code) if closure is None else closure
    if cl.max_level is not None:
        raise ValueError("untruncated basis needs an unbounded closure")
    return _make_basis("untruncated", cl, range(len(cl)))


def truncate_first_level(code_or_closure) -> CoefficientBasis:
    """Syndrome block plus first-level feedback coefficients, couplings to deeper levels dropped.

    The real coordinates are then reduced to those the syndrome probabilities
    actually depend on.
    """
    cl = code_or_closure
    if isinstance(cl, CodeSpec):
        cl = build_closure(cl, max_level=1)
    if cl.max_level is not None and cl.max_level < 1:
        raise ValueError("first-level truncation needs a closure with max_level >= 1")
    keep = [k for k in range(len(cl)) if cl.level[k] <= 1]
    return _make_basis("first_level", cl, keep, _observable_closure)


def truncate_minimal(code_or_closure) -> CoefficientBasis:
    """Syndrome block plus the first-level coordinates the codespace feeds back into."""
    cl = code_or_closure
    if isinstance(cl, CodeSpec):
        cl = build_closure(cl, max_level=1)
    ref = five_qubit_code()
    if cl.code.generators != ref.generators or cl.code.error_set != ref.error_set:
        raise ValueError("the minimal filter is defined for the five-qubit code only")

    def select(real, ns, levels):
        touched = set(range(ns))
        for c in range(len(cl.channels)):
            m = real[f"f{c}"]
            touched.update(int(k) for k in m.indices[m.indptr[0]:m.indptr[1]])
        return sorted(touched)

    keep = [k for k in range(len(cl)) if cl.level[k] <= 1]
    return _make_basis("minimal", cl, keep, select, closed=False)


# --------------------------------------------------------------------------
# Wonham filter


def wonham_generator(code: CodeSpec, gamma: float, space=None) -> np.ndarray:
    """Syndrome-block generator ``gamma * sum_sigma (P_sigma - I)``.

    ``P_sigma`` moves probability from syndrome ``s`` to ``s ^ m(sigma)``.
    Only syndromes in the syndrome space are kept, in its order.
    """
    space = build_syndrome_space(code) if space is None else space
    table = space.outcome_table
    n_syn = table.shape[1]
    lam = np.zeros((n_syn, n_syn))
    for e in code.error_set:
        flip = np.array([1 if commutes_ else -1 for commutes_ in
                         (letters_commute(g.letters, e.letters) for g in code.generators)])
        for b in range(n_syn):
            target = tuple(int(v) for v in table[:, b] * flip)
            if target not in space.outcomes:
                raise ValueError(f"error {e.label()} leaves the listed syndrome spaces")
            a = space.outcomes.index(target)
            lam[a, b] += gamma
            lam[b, b] -= gamma
    return lam


class WonhamFilter:
    """Syndrome probabilities without feedback."""

    def __init__(self, code: CodeSpec, params: ModelParams, scheme="predictor_corrector", space=None):
        self.code = code
        self.params = params
        self.scheme = scheme
        self.space = build_syndrome_space(code) if space is None else space
        self.generator = wonham_generator(code, params.gamma, self.space)
        self.h = np.array(self.space.outcome_table, dtype=float)
        self.dt = params.dt
        self._sqk = np.sqrt(params.kappa)

    def initial_state(self) -> np.ndarray:
        p = np.zeros(len(self.generator))
        p[0] = 1.0
        return p

    def drift(self, p):
        return self.generator @ p

    def diffusion(self, p):
        hp = self.h @ p
        return 2 * self._sqk * (self.h - hp[:, None]) * p[None, :]

    def step(self, p, dq) -> np.ndarray:
        innov = dq - 2 * self._sqk * (self.h @ p) * self.dt
        new = sde.step(p, self.drift, self.diffusion, innov, self.dt, self.scheme)
        return _normalize(new, len(new))


def wonham_step(p, code: CodeSpec, params: ModelParams, dq, scheme="predictor_corrector"):
    return WonhamFilter(code, params, scheme).step(p, dq)


def _normalize(y, n_syn, clip=False):
    """Rescale so the syndrome block sums to one.

    With ``clip`` the negative syndrome probabilities are first set to zero,
    which puts the block back on the simplex.
    """
    # a single sum is non-finite whenever any entry is
    if not np.isfinite(y.sum()):
        raise sde.IntegrationError("non-finite entries in reduced filter state")
    if clip and y[:n_syn].min() < 0:
        y = y.copy()
        np.maximum(y[:n_syn], 0.0, out=y[:n_syn])
    tot = y[:n_syn].sum()
    if not tot > 0:
        raise sde.IntegrationError(f"syndrome probabilities sum to {tot}")
    return y / tot


# --------------------------------------------------------------------------
# reduced filter with feedback


class ReducedFilter:
    """Integrates a :class:`CoefficientBasis` driven by measurement increments.

    ``clip_syndromes`` zeroes negative syndrome probabilities before each
    renormalization.  A truncated basis is not exact, and once its state
    leaves the physical region the measurement update can amplify the
    negative entries without bound; clipping keeps the block on the simplex.
    """

    def __init__(self, basis: CoefficientBasis, params: ModelParams, scheme="predictor_corrector",
                 clip_syndromes: bool = False):
        self.basis = basis
        self.clip_syndromes = clip_syndromes
        self.clip_events = 0
        self.params = params
        self.scheme = scheme
        self.dt = params.dt
        self.dim = len(basis)
        self.n_syn = basis.n_syndromes
        self.n_controls = len(basis.channels)
        self._sqk = np.sqrt(params.kappa)
        lin = params.gamma * basis.noise + params.kappa * basis.meas_drift
        self._lin = sp.csr_matrix(lin)
        self._meas = sp.csr_matrix(sp.vstack(basis.meas))
        self._h = basis.h
        # lin + sum_c u_c F_c shares one sparsity pattern for every u; entries of
        # the stacked blocks are scattered into it with per-block weights
        blocks = [sp.coo_matrix(m) for m in (lin, *basis.fb)]
        rows = np.concatenate([b.row for b in blocks])
        cols = np.concatenate([b.col for b in blocks])
        self._entry_data = np.concatenate([b.data for b in blocks])
        self._entry_block = np.concatenate([np.full(b.nnz, i) for i, b in enumerate(blocks)])
        pattern = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.dim, self.dim))
        pattern.sum_duplicates()
        pattern.sort_indices()
        self._pattern = pattern
        slot = sp.csr_matrix((np.arange(pattern.nnz) + 1.0, pattern.indices, pattern.indptr),
                             shape=pattern.shape)
        self._entry_slot = np.asarray(slot[rows, cols]).ravel().astype(np.intp) - 1
        self._cache = {}
        self.cache_size = 64
        # lin and every fb block stacked, then the measurement blocks: one
        # product gives every term the step needs at the start point
        self._n_blocks = 1 + self.n_controls
        self._drift_stack = sp.csr_matrix(sp.vstack(blocks))
        # followed by the rows of <g_l> as functions of the full state
        h_rows = sp.hstack([sp.csr_matrix(self._h), sp.csr_matrix((len(self._h), self.dim - self.n_syn))])
        self._stack = sp.csr_matrix(sp.vstack([self._drift_stack, self._meas, h_rows]))
        self._n_meas = len(self._h)
        # small bases multiply faster with dense arrays than through scipy
        self._dense = self.dim <= DENSE_LIMIT
        if self._dense:
            self._lin = self._lin.toarray()

    def drift_matrix(self, controls) -> sp.csr_matrix:
        """``lin + sum_c controls[c] fb[c]``, cached per control vector.

        Returned as a dense array for bases up to ``DENSE_LIMIT`` coordinates.
        """
        key = controls.tobytes()
        m = self._cache.get(key)
        if m is None:
            weights = np.concatenate([[1.0], controls])[self._entry_block] * self._entry_data
            data = np.bincount(self._entry_slot, weights=weights, minlength=self._pattern.nnz)
            m = sp.csr_matrix((data, self._pattern.indices, self._pattern.indptr),
                              shape=self._pattern.shape)
            if self._dense:
                m = m.toarray()
            if len(self._cache) >= self.cache_size:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = m
        return m

    def _weights(self, controls):
        w = np.zeros(self._n_blocks)
        w[0] = 1.0
        if controls is not None:
            w[1:] = controls
        return w

    def drift(self, y, controls=None):
        w = self._weights(controls)
        return w @ (self._drift_stack @ y).reshape(self._n_blocks, self.dim)

    def diffusion(self, y):
        hp = self._h @ y[: self.n_syn]
        z = (self._meas @ y).reshape(-1, self.dim)
        return self._sqk * (z - 2 * hp[:, None] * y[None, :])

    def noise_term(self, y, innov, hp=None):
        """``sum_l diffusion(y)[l] * innov[l]`` without forming the stack."""
        if hp is None:
            hp = self._h @ y[: self.n_syn]
        z = innov @ (self._meas @ y).reshape(-1, self.dim)
        return self._sqk * (z - 2 * (innov @ hp) * y)

    def step(self, y, dq, controls) -> np.ndarray:
        nb, dim, nm = self._n_blocks, self.dim, self._n_meas
        w = self._weights(controls)
        flat = self._stack @ y
        hp = flat[-nm:]
        ky = flat[:-nm].reshape(-1, dim)
        innov = dq - (2 * self._sqk * self.dt) * hp
        a0 = w @ ky[:nb]
        noise = innov @ ky[nb:]
        noise -= (2 * (innov @ hp)) * y
        noise *= self._sqk

        def drift(v):
            return a0 if v is y else w @ (self._drift_stack @ v).reshape(nb, dim)

        new = sde.step(y, drift, None, innov, self.dt, self.scheme, noise_term=lambda v, dw: noise)
        clip = self.clip_syndromes and bool(new[: self.n_syn].min() < 0)
        if clip:
            self.clip_events += 1
        return _normalize(new, self.n_syn, clip)


def truncated_step(y, basis: CoefficientBasis, params: ModelParams, dq, controls,
                   scheme="predictor_corrector", clip_syndromes=False):
    return ReducedFilter(basis, params, scheme, clip_syndromes).step(y, dq, controls)


class ReducedController:
    """Feedback controller whose model is a reduced filter."""

    def __init__(self, filt: ReducedFilter, policy):
        self.filter = filt
        self.policy_fn = policy
        self.n_controls = filt.n_controls
        self._leak = filt.basis.level_indices(2)
        self.tracks_leakage = len(self._leak) > 0

    def initial_state(self):
        return self.filter.basis.initial_state()

    def policy(self, y):
        return self.policy_fn(y)

    def step(self, y, dq, controls):
        return self.filter.step(y, dq, controls)

    @property
    def clip_events(self) -> int:
        """Steps at which the filter had to clip negative syndrome probabilities."""
        return self.filter.clip_events

    def leakage(self, y) -> float:
        """Largest level-2 coordinate magnitude (0 when the basis has none)."""
        return float(np.abs(y[self._leak]).max()) if len(self._leak) else 0.0


class WonhamController:
    """Runs the Wonham filter alongside the plant and never actuates."""

    tracks_leakage = False

    def __init__(self, filt: WonhamFilter, n_controls: int):
        self.filter = filt
        self.n_controls = n_controls
        self._zero = np.zeros(n_controls)

    def initial_state(self):
        return self.filter.initial_state()

    def policy(self, p):
        return self._zero

    def step(self, p, dq, controls):
        return self.filter.step(p, dq)


class NullController:
    """No filter and no feedback."""

    tracks_leakage = False

    def __init__(self, n_controls: int):
        self.n_controls = n_controls
        self._zero = np.zeros(n_controls)

    def initial_state(self):
        return None

    def policy(self, state):
        return self._zero

    def step(self, state, dq, controls):
        return None
