"""Dense symmetric linear algebra and monomial basis machinery.

Everything here is pure: inputs are never mutated, outputs are fresh
arrays, so values can be shared freely across threads or processes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MonomialBasis",
    "monomial_vector",
    "eval_quadratic_form",
    "symmetric_eigenvalues",
    "nearest_psd",
    "psd_check",
    "sym_from_upper",
    "sym_from_lower",
    "symmetrize",
    "gram_from_coefficients",
    "basis_length",
]


def basis_length(n: int, d: int) -> int:
    """Number of monomials in n variables of total degree <= d."""
    return math.comb(n + d, n)


def _degree_exponents(n, total):
    """All exponent tuples of length n summing to `total`, lex-descending."""
    if n == 1:
        yield (total,)
        return
    for e in range(total, -1, -1):
        for rest in _degree_exponents(n - 1, total - e):
            yield (e,) + rest


@dataclass(frozen=True)
class MonomialBasis:
    """Ordered monomial basis of degree <= d in n variables.

    Ordering is graded lexicographic: degree 0 first (the constant
    monomial), then within each total degree the exponent tuples in
    lexicographic-descending order. The ordering is part of the
    serialized descriptor because Gram matrices are only meaningful
    relative to a fixed ordering.
    """

    n: int
    d: int
    exponents: tuple[tuple[int, ...], ...] = field(init=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"state dimension must be >= 1, got {self.n}")
        if self.d < 0:
            raise ValueError(f"degree must be >= 0, got {self.d}")
        exps = tuple(
            e for t in range(self.d + 1) for e in _degree_exponents(self.n, t)
        )
        object.__setattr__(self, "exponents", exps)

    def __len__(self) -> int:
        return len(self.exponents)

    @property
    def exponent_array(self) -> np.ndarray:
        return np.asarray(self.exponents, dtype=np.int64)

    def vector(self, x) -> np.ndarray:
        """Evaluate all basis monomials at a single state."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"state has shape {x.shape}, expected ({self.n},)")
        return np.prod(x[None, :] ** self.exponent_array, axis=1)

    def matrix(self, X) -> np.ndarray:
        """Evaluate the basis at many states; rows follow rows of X."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n:
            raise ValueError(f"states have shape {X.shape}, expected (*, {self.n})")
        return np.prod(X[:, None, :] ** self.exponent_array[None, :, :], axis=2)

    def vector_at(self, x, shift) -> np.ndarray:
        """Basis vector at x - shift (monomial bases act on shifted states)."""
        return self.vector(np.asarray(x, dtype=float) - np.asarray(shift, dtype=float))

    def matrix_at(self, X, shift) -> np.ndarray:
        return self.matrix(np.asarray(X, dtype=float) - np.asarray(shift, dtype=float)[None, :])

    def to_json_dict(self) -> dict:
        return {"kind": "monomial", "n": self.n, "d": self.d,
                "exponents": [list(e) for e in self.exponents]}

    @classmethod
    def from_json_dict(cls, data: dict) -> "MonomialBasis":
        basis = cls(n=int(data["n"]), d=int(data["d"]))
        stored = tuple(tuple(int(v) for v in e) for e in data["exponents"])
        if stored != basis.exponents:
            raise ValueError("stored exponent table does not match canonical ordering")
        return basis

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())


def monomial_vector(basis: MonomialBasis, x) -> np.ndarray:
    """Z(x): all monomials of degree <= basis.d evaluated at x."""
    return basis.vector(x)


def symmetrize(a) -> np.ndarray:
    """(A + A^T)/2 as a fresh array; exact for already-symmetric input."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    return (a + a.T) / 2.0


def sym_from_upper(a) -> np.ndarray:
    """Symmetric matrix from the upper triangle of `a` (lower ignored)."""
    a = np.asarray(a, dtype=float)
    u = np.triu(a)
    return u + np.triu(a, 1).T


def sym_from_lower(a) -> np.ndarray:
    """Symmetric matrix from the lower triangle of `a` (upper ignored)."""
    return sym_from_upper(np.asarray(a, dtype=float).T)


def eval_quadratic_form(P, z) -> float:
    """z^T P z for symmetric P."""
    P = np.asarray(P, dtype=float)
    z = np.asarray(z, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {P.shape}")
    if z.shape != (P.shape[0],):
        raise ValueError(f"vector length {z.shape} does not match matrix dim {P.shape[0]}")
    return float(z @ P @ z)


def symmetric_eigenvalues(P) -> np.ndarray:
    """All eigenvalues of symmetric P, ascending."""
    P = symmetrize(P)
    if not np.all(np.isfinite(P)):
        raise ValueError("matrix has non-finite entries")
    return np.linalg.eigvalsh(P)


def nearest_psd(P) -> np.ndarray:
    """Frobenius-nearest positive semidefinite matrix to symmetric P.

    Eigenvalue clipping: negative eigenvalues are set to zero and the
    eigenvectors retained, which is the analytical projection onto the
    PSD cone for symmetric input. Idempotent up to roundoff.
    """
    P = symmetrize(P)
    if not np.all(np.isfinite(P)):
        raise ValueError("matrix has non-finite entries")
    w, v = np.linalg.eigh(P)
    if w[0] >= 0.0:
        return P
    wc = np.clip(w, 0.0, None)
    return symmetrize((v * wc) @ v.T)


def psd_check(eigenvalues, tol: float = 0.0) -> tuple[bool, float]:
    """PSD diagnostic on an eigenvalue list.

    Returns (is_psd, worst_violation) where worst_violation is the
    magnitude of the most negative eigenvalue (0.0 when none).
    """
    w = np.asarray(eigenvalues, dtype=float)
    worst = float(max(0.0, -w.min())) if w.size else 0.0
    return worst <= tol, worst


def gram_from_coefficients(terms, basis: MonomialBasis) -> np.ndarray:
    """A symmetric Gram matrix P with z^T P z equal to a given polynomial.

    `terms` is an iterable of (exponent_tuple, coefficient) pairs with
    total degree <= 2*basis.d. The Gram representation is not unique;
    each monomial is assigned to the first basis pair (i <= j) whose
    exponents sum to it, scanned in basis order, which makes the result
    deterministic.
    """
    q = len(basis)
    exps = basis.exponents
    pair_of = {}
    for i in range(q):
        for j in range(i, q):
            key = tuple(a + b for a, b in zip(exps[i], exps[j]))
            pair_of.setdefault(key, (i, j))
    P = np.zeros((q, q))
    for exponent, coeff in terms:
        key = tuple(int(e) for e in exponent)
        if len(key) != basis.n:
            raise ValueError(f"exponent tuple {key} has wrong length for n={basis.n}")
        if key not in pair_of:
            raise ValueError(f"monomial {key} has degree > {2 * basis.d}, not representable")
        i, j = pair_of[key]
        if i == j:
            P[i, i] += float(coeff)
        else:
            P[i, j] += float(coeff) / 2.0
            P[j, i] += float(coeff) / 2.0
    return P
