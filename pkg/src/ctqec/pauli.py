"""Phased n-qubit Pauli strings.

A :class:`PauliString` is ``i**phase`` times a tensor product of single-qubit
letters I, X, Y, Z.  Phases are kept as an integer power of ``i`` so every
symbolic product is exact.  Qubits are 0-based internally; qubit 0 is the
leftmost tensor factor (the "qubit 1" of the usual X_1 ... X_n notation).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

LETTERS = "IXYZ"
MAX_DENSE_QUBITS = 12

_MATS = (
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)
_PHASE_VALUES = (1, 1j, -1, -1j)
_PREFIXES = {"": 0, "+": 0, "+i": 1, "i": 1, "-": 2, "-i": 3}
_PREFIX_OUT = ("", "+i", "-", "-i")


def _single_table():
    # table[a][b] = (power of i, letter c) with sigma_a sigma_b = i**k sigma_c
    table = [[None] * 4 for _ in range(4)]
    for a in range(4):
        for b in range(4):
            m = _MATS[a] @ _MATS[b]
            for c in range(4):
                for k in range(4):
                    if np.allclose(m, _PHASE_VALUES[k] * _MATS[c]):
                        table[a][b] = (k, c)
    return tuple(tuple(row) for row in table)


_TABLE = _single_table()


@dataclass(frozen=True)
class PauliString:
    """``i**phase`` times the tensor product of ``letters`` (ints 0..3 for I,X,Y,Z)."""

    phase: int
    letters: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "phase", self.phase % 4)
        object.__setattr__(self, "letters", tuple(int(c) for c in self.letters))
        if any(c < 0 or c > 3 for c in self.letters):
            raise ValueError(f"invalid Pauli letters {self.letters}")

    @classmethod
    def from_text(cls, text: str) -> PauliString:
        text = text.strip()
        body = text.lstrip("+-i")
        prefix = text[: len(text) - len(body)]
        if prefix not in _PREFIXES:
            raise ValueError(f"bad phase prefix {prefix!r} in {text!r}")
        try:
            letters = tuple(LETTERS.index(c) for c in body.upper())
        except ValueError:
            raise ValueError(f"bad Pauli letters in {text!r}") from None
        if not letters:
            raise ValueError("empty Pauli string")
        return cls(_PREFIXES[prefix], letters)

    @classmethod
    def identity(cls, n: int) -> PauliString:
        return cls(0, (0,) * n)

    @classmethod
    def single(cls, letter: str | int, qubit: int, n: int) -> PauliString:
        """Pauli ``letter`` on 0-based ``qubit`` of an ``n``-qubit register."""
        if isinstance(letter, str):
            letter = LETTERS.index(letter.upper())
        letters = [0] * n
        letters[qubit] = letter
        return cls(0, tuple(letters))

    def __str__(self):
        return _PREFIX_OUT[self.phase] + "".join(LETTERS[c] for c in self.letters)

    def __repr__(self):
        return f"PauliString({str(self)!r})"

    def __len__(self):
        return len(self.letters)

    def __mul__(self, other: PauliString) -> PauliString:
        return multiply(self, other)

    def __neg__(self):
        return PauliString(self.phase + 2, self.letters)

    @property
    def n(self) -> int:
        return len(self.letters)

    @property
    def weight(self) -> int:
        return sum(1 for c in self.letters if c)

    @property
    def coefficient(self) -> complex:
        return _PHASE_VALUES[self.phase]

    @property
    def is_hermitian(self) -> bool:
        return self.phase % 2 == 0

    def unsigned(self) -> PauliString:
        return PauliString(0, self.letters)

    def label(self) -> str:
        """Compact 1-based label such as ``X1`` or ``Z3Y5``; ``I`` for identity."""
        parts = [f"{LETTERS[c]}{q + 1}" for q, c in enumerate(self.letters) if c]
        return _PREFIX_OUT[self.phase] + ("".join(parts) or "I")


def pauli_weight(p: PauliString) -> int:
    return p.weight


def _check_lengths(a: PauliString, b: PauliString):
    if len(a.letters) != len(b.letters):
        raise ValueError(f"length mismatch: {a} has {len(a)} qubits, {b} has {len(b)}")


def multiply_letters(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, tuple[int, ...]]:
    """Product of two unphased letter tuples as ``(power of i, letters)``."""
    k = 0
    out = []
    for x, y in zip(a, b):
        dk, c = _TABLE[x][y]
        k += dk
        out.append(c)
    return k % 4, tuple(out)


def multiply(a: PauliString, b: PauliString) -> PauliString:
    _check_lengths(a, b)
    k, letters = multiply_letters(a.letters, b.letters)
    return PauliString(a.phase + b.phase + k, letters)


def letters_commute(a: tuple[int, ...], b: tuple[int, ...]) -> bool:
    anti = sum(1 for x, y in zip(a, b) if x and y and x != y)
    return anti % 2 == 0


def commutes(a: PauliString, b: PauliString) -> bool:
    _check_lengths(a, b)
    return letters_commute(a.letters, b.letters)


def realize(p: PauliString, n: int | None = None) -> np.ndarray:
    """Dense ``2**n x 2**n`` matrix of ``p``; qubit 0 is the leftmost factor."""
    n = len(p) if n is None else n
    if len(p) != n:
        raise ValueError(f"{p} does not act on {n} qubits")
    if n > MAX_DENSE_QUBITS:
        raise ValueError(f"dense realization limited to {MAX_DENSE_QUBITS} qubits, got {n}")
    mat = reduce(np.kron, (_MATS[c] for c in p.letters), np.ones((1, 1), dtype=complex))
    return p.coefficient * mat


def signed_permutation(p: PauliString) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(perm, phases)`` with ``(P @ v)[i] == phases[i] * v[perm[i]]``.

    Every Pauli matrix has exactly one nonzero per row, so applying it is a
    gather plus an elementwise phase.
    """
    n = len(p)
    dim = 2 ** n
    idx = np.arange(dim)
    perm = np.zeros(dim, dtype=np.intp)
    phases = np.full(dim, p.coefficient, dtype=complex)
    for q, c in enumerate(p.letters):
        bit = (idx >> (n - 1 - q)) & 1
        if c in (1, 2):
            perm ^= (1 << (n - 1 - q))
        if c == 2:
            # rows with bit 0 read -i * v[flipped], rows with bit 1 read +i * v[flipped]
            phases *= np.where(bit == 0, -1j, 1j)
        elif c == 3:
            phases *= np.where(bit == 0, 1, -1)
    perm = idx ^ perm
    return perm, phases


def single_qubit_paulis(n: int) -> list[PauliString]:
    """All ``3n`` weight-one Paulis ordered by qubit, then X, Y, Z."""
    return [PauliString.single(c, q, n) for q in range(n) for c in (1, 2, 3)]
