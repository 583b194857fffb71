"""Stabilizer codes, syndrome-space projectors and recovery tables."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pauli import (
    PauliString,
    commutes,
    multiply,
    realize,
    single_qubit_paulis,
)


class CodeError(ValueError):
    """Raised for an inconsistent code definition."""


def _sort_key(p: PauliString):
    # (qubit ascending, then X, Y, Z) for weight-one errors; weight first otherwise
    support = [(q, c) for q, c in enumerate(p.letters) if c]
    return (p.weight, support)


@dataclass(frozen=True)
class CodeSpec:
    """An ``[[n, k]]`` stabilizer code together with its error model.

    ``recovery`` maps a syndrome (tuple of +/-1, one per generator) to the
    Pauli applied to undo the error that produced it.  It is derived from the
    error set rather than tabulated by hand.
    """

    name: str
    n: int
    k: int
    generators: tuple[PauliString, ...]
    logical_z: PauliString
    error_set: tuple[PauliString, ...]
    recovery: dict = field(compare=False, repr=False)

    @property
    def l(self) -> int:
        return len(self.generators)

    def syndrome(self, p: PauliString) -> tuple[int, ...]:
        """Outcome pattern of the generators on ``p`` applied to the codespace."""
        return tuple(1 if commutes(g, p) else -1 for g in self.generators)

    def recover(self, syndrome) -> PauliString:
        return self.recovery[tuple(int(s) for s in syndrome)]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "k": self.k,
            "generators": [str(g) for g in self.generators],
            "logical_z": str(self.logical_z),
            "error_set": [str(e) for e in self.error_set],
        }


def make_code(name, generators, logical_z, error_set, k=None) -> CodeSpec:
    """Validate a stabilizer code and derive its recovery table."""
    gens = tuple(PauliString.from_text(g) if isinstance(g, str) else g for g in generators)
    lz = PauliString.from_text(logical_z) if isinstance(logical_z, str) else logical_z
    errs = tuple(PauliString.from_text(e) if isinstance(e, str) else e for e in error_set)
    if not gens:
        raise CodeError("a code needs at least one stabilizer generator")
    n = len(gens[0])
    if any(len(p) != n for p in (*gens, lz, *errs)):
        raise CodeError("all Pauli strings of a code must act on the same number of qubits")
    l = len(gens)
    k = n - l if k is None else k
    if k != n - l:
        raise CodeError(f"k={k} inconsistent with n={n} and {l} generators")
    for g in gens:
        if not g.is_hermitian:
            raise CodeError(f"generator {g} is not Hermitian")
    for a, b in itertools.combinations(gens, 2):
        if not commutes(a, b):
            raise CodeError(f"generators {a} and {b} anticommute")
    for r in range(1, l + 1):
        for subset in itertools.combinations(gens, r):
            prod = subset[0]
            for g in subset[1:]:
                prod = multiply(prod, g)
            if prod.weight == 0:
                raise CodeError(f"generators are dependent: {[str(g) for g in subset]}")
    for g in gens:
        if not commutes(g, lz):
            raise CodeError(f"logical Z {lz} anticommutes with generator {g}")
    errs = tuple(sorted((e.unsigned() for e in errs), key=_sort_key))

    recovery = {(1,) * l: PauliString.identity(n)}
    for e in errs:
        s = tuple(1 if commutes(g, e) else -1 for g in gens)
        recovery.setdefault(s, e)
    return CodeSpec(name, n, k, gens, lz, errs, recovery)


def five_qubit_code() -> CodeSpec:
    n = 5
    return make_code(
        "five-qubit",
        ["XZZXI", "IXZZX", "XIXZZ", "ZXIXZ"],
        "ZZZZZ",
        single_qubit_paulis(n),
    )


def bit_flip_code() -> CodeSpec:
    return make_code(
        "bitflip",
        ["ZZI", "IZZ"],
        "ZZZ",
        [PauliString.single("X", q, 3) for q in range(3)],
    )


BUILTIN_CODES = {"five-qubit": five_qubit_code, "bitflip": bit_flip_code}


def code_from_dict(data: dict) -> CodeSpec:
    code = make_code(
        data.get("name", "custom"),
        data["generators"],
        data["logical_z"],
        data["error_set"],
        k=data.get("k"),
    )
    if "n" in data and int(data["n"]) != code.n:
        raise CodeError(f"declared n={data['n']} but generators act on {code.n} qubits")
    return code


def save_code(code: CodeSpec, path) -> None:
    Path(path).write_text(json.dumps(code.to_dict(), indent=2) + "\n")


def load_code(name_or_path: str) -> CodeSpec:
    """Built-in code by name (``bitflip``, ``five-qubit``) or a JSON code file."""
    if name_or_path in BUILTIN_CODES:
        return BUILTIN_CODES[name_or_path]()
    path = Path(name_or_path)
    if not path.exists():
        raise CodeError(f"unknown code {name_or_path!r}; built-ins are {sorted(BUILTIN_CODES)}")
    return code_from_dict(json.loads(path.read_text()))


@dataclass(frozen=True)
class SyndromeSpace:
    """Projectors onto the syndrome spaces reachable by the code's error set.

    Index 0 is the codespace; index ``a > 0`` belongs to ``errors[a]``, in the
    order of ``code.error_set``.
    """

    projectors: np.ndarray  # (n_syn, d, d)
    errors: tuple[PauliString, ...]
    labels: tuple[str, ...]
    outcome_table: np.ndarray  # (l, n_syn), entries +/-1
    outcomes: tuple[tuple[int, ...], ...]

    def __len__(self):
        return len(self.errors)

    def index_of(self, outcome) -> int:
        return self.outcomes.index(tuple(int(s) for s in outcome))


def codespace_projector(code: CodeSpec) -> np.ndarray:
    d = 2 ** code.n
    proj = np.eye(d, dtype=complex)
    for g in code.generators:
        proj = proj @ (np.eye(d) + realize(g)) / 2
    return proj


def build_syndrome_space(code: CodeSpec) -> SyndromeSpace:
    p0 = codespace_projector(code)
    errors = [PauliString.identity(code.n)]
    seen = {(1,) * code.l}
    for e in code.error_set:
        s = code.syndrome(e)
        if s not in seen:
            seen.add(s)
            errors.append(e)
    projs = []
    for e in errors:
        m = realize(e)
        projs.append(m @ p0 @ m.conj().T)
    projs = np.array(projs)
    gmats = [realize(g) for g in code.generators]
    table = np.zeros((code.l, len(errors)))
    for a, proj in enumerate(projs):
        tr = np.trace(proj).real
        for i, g in enumerate(gmats):
            h = np.trace(g @ proj).real / tr
            if abs(abs(h) - 1) > 1e-9:
                raise CodeError(
                    f"generator {code.generators[i]} has outcome {h:.3g} on syndrome space "
                    f"of {errors[a]}; expected +/-1"
                )
            table[i, a] = round(h)
    labels = ["0"] + [e.label() for e in errors[1:]]
    outcomes = tuple(tuple(int(v) for v in table[:, a]) for a in range(len(errors)))
    return SyndromeSpace(projs, tuple(errors), tuple(labels), table, outcomes)


def encoded_zero(code: CodeSpec) -> np.ndarray:
    """Density matrix of the encoded |0>, i.e. normalized ``Pi_0 (I + Z_L) / 2``."""
    if code.k != 1:
        raise CodeError("encoded_zero needs a single logical qubit")
    d = 2 ** code.n
    rho = codespace_projector(code) @ (np.eye(d) + realize(code.logical_z)) / 2
    tr = np.trace(rho).real
    if tr < 1e-12:
        raise CodeError("codespace projector and logical Z projector have no overlap")
    return rho / tr
