"""Weighted Pauli-string sums and the real-matrix <-> Pauli conversion.

Qubit 0 is the leftmost tensor factor, i.e. the most significant bit of a
basis-state index. ``PauliString("XZ")`` is ``X (x) Z``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache, reduce

import numpy as np

PRUNE_TOL = 1e-14

_SINGLE = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


@dataclass(frozen=True)
class PauliString:
    ops: str

    def __post_init__(self):
        if not self.ops or set(self.ops) - set("IXYZ"):
            raise ValueError(f"invalid Pauli string {self.ops!r}")

    @property
    def n_qubits(self) -> int:
        return len(self.ops)

    @property
    def n_y(self) -> int:
        return self.ops.count("Y")

    def matrix(self) -> np.ndarray:
        return _string_matrix(self.ops)

    def __str__(self) -> str:
        return self.ops


@lru_cache(maxsize=4096)
def _string_matrix(ops: str) -> np.ndarray:
    m = reduce(np.kron, (_SINGLE[o] for o in ops))
    m.flags.writeable = False
    return m


def all_strings(n: int):
    for ops in itertools.product("IXYZ", repeat=n):
        yield PauliString("".join(ops))


@dataclass(frozen=True)
class PauliDecomposition:
    """``sum_l c_l P_l`` with real coefficients and distinct strings."""

    terms: tuple[tuple[float, PauliString], ...]
    n_qubits: int

    def __post_init__(self):
        seen = set()
        for _, s in self.terms:
            if s.n_qubits != self.n_qubits:
                raise ValueError(f"string {s} does not act on {self.n_qubits} qubits")
            if s.ops in seen:
                raise ValueError(f"duplicate Pauli string {s}")
            seen.add(s.ops)

    @classmethod
    def from_dict(cls, terms: dict[str, float]) -> "PauliDecomposition":
        items = tuple((float(c), PauliString(s)) for s, c in terms.items())
        n = items[0][1].n_qubits if items else 0
        return cls(items, n)

    def as_dict(self) -> dict[str, float]:
        return {s.ops: c for c, s in self.terms}

    @property
    def dim(self) -> int:
        return 2 ** self.n_qubits

    def __len__(self) -> int:
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def matrix(self) -> np.ndarray:
        return reconstruct(self)


def _check_power_of_two(dim: int) -> int:
    n = dim.bit_length() - 1
    if dim < 1 or 2 ** n != dim:
        raise ValueError(f"matrix dimension {dim} is not a power of two; pad it first")
    return n


def decompose_matrix(m, n: int | None = None) -> PauliDecomposition:
    """Expand a Hermitian (in practice real symmetric) matrix over all ``4**n``
    Pauli strings.

    Coefficients are ``Tr(P_l M) / 2**n``; terms with ``|c| < 1e-14`` are
    dropped.
    """
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    n_dim = _check_power_of_two(m.shape[0])
    if n is None:
        n = n_dim
    elif n != n_dim:
        raise ValueError(f"matrix of size {m.shape[0]} does not match {n} qubits")
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    if np.abs(m - m.conj().T).max(initial=0.0) > 1e-12 * scale:
        raise ValueError("matrix is not symmetric/Hermitian; Pauli coefficients would be complex")
    d = 2 ** n
    terms = []
    for s in all_strings(n):
        # Tr(P M) without forming the product
        c = np.sum(s.matrix().T * m).real / d
        if abs(c) >= PRUNE_TOL:
            terms.append((float(c), s))
    return PauliDecomposition(tuple(terms), n)


def reconstruct(decomp: PauliDecomposition) -> np.ndarray:
    """Sum the weighted Pauli matrices back into a dense matrix.

    The result is real whenever the source matrix was real symmetric.
    """
    d = decomp.dim
    out = np.zeros((d, d), dtype=complex)
    for c, s in decomp.terms:
        out += c * s.matrix()
    if np.abs(out.imag).max(initial=0.0) < 1e-12:
        return out.real
    return out


def pad_to_power_of_two(m, rhs):
    """Embed ``m`` in the top-left block of the next power-of-two size.

    Added diagonal entries are 1 and added rhs entries are 0, so the padded
    solution restricted to the original indices is unchanged.
    Returns ``(padded_matrix, padded_rhs, original_dim)``.
    """
    m = np.asarray(m, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    dim = m.shape[0]
    if rhs.shape != (dim,):
        raise ValueError(f"rhs length {rhs.shape} does not match matrix size {dim}")
    # a 1x1 system still needs one qubit
    size = max(2, 1 << (dim - 1).bit_length())
    if size == dim:
        return m.copy(), rhs.copy(), dim
    pm = np.eye(size)
    pm[:dim, :dim] = m
    pb = np.zeros(size)
    pb[:dim] = rhs
    return pm, pb, dim
