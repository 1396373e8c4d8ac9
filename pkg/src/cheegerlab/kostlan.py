"""Homogeneous polynomials in three complex variables and the Kostlan ensemble.

A degree ``d`` polynomial is stored as a dense vector of monomial
coefficients, indexed by the multi-indices ``(i, j, k)`` with
``i + j + k = d`` in the fixed order produced by :func:`multi_indices`.
Coefficients are the monomial-basis coefficients, i.e. the Kostlan
weight is already multiplied in for sampled polynomials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


class MultiIndex(NamedTuple):
    i: int
    j: int
    k: int

    @property
    def degree(self) -> int:
        return self.i + self.j + self.k


@dataclass(frozen=True)
class EnsembleSeed:
    """Key of an independent random stream: ``(seed, stream)``."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        for v in (self.seed, self.stream):
            if not 0 <= int(v) < 2**64:
                raise DomainError("seed and stream must be 64-bit unsigned integers")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence([int(self.seed), int(self.stream)])
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *keys: int) -> "EnsembleSeed":
        """Derive a new stream id deterministically from extra integer keys."""
        ss = np.random.SeedSequence([int(self.seed), int(self.stream), *map(int, keys)])
        return EnsembleSeed(self.seed, int(ss.generate_state(1, np.uint64)[0]))


@lru_cache(maxsize=None)
def multi_indices(d: int) -> tuple[MultiIndex, ...]:
    """All exponent triples of total degree ``d``, in storage order."""
    if d < 0:
        raise DomainError(f"degree must be non-negative, got {d}")
    return tuple(MultiIndex(i, j, d - i - j) for i in range(d, -1, -1) for j in range(d - i, -1, -1))


@lru_cache(maxsize=None)
def _exponents(d: int) -> np.ndarray:
    return np.array(multi_indices(d), dtype=np.int64).reshape(-1, 3)


def n_coefficients(d: int) -> int:
    return (d + 1) * (d + 2) // 2


def kostlan_weight(d: int, idx) -> float:
    """sqrt((d+2)! / (2 i! j! k!)), evaluated through log-gamma."""
    i, j, k = (int(v) for v in idx)
    if min(i, j, k) < 0 or i + j + k != d:
        raise DomainError(f"multi-index {idx} does not sum to degree {d}")
    log_w2 = gammaln(d + 3) - math.log(2.0) - gammaln(i + 1) - gammaln(j + 1) - gammaln(k + 1)
    return math.exp(0.5 * log_w2)


def kostlan_weights(d: int) -> np.ndarray:
    return np.array([kostlan_weight(d, m) for m in multi_indices(d)])


@dataclass(frozen=True, eq=False)
class HomogeneousPoly3:
    """Degree ``d`` form in X0, X1, X2 with complex monomial coefficients."""

    degree: int
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.degree < 0:
            raise DomainError("degree must be non-negative")
        c = np.array(self.coeffs, dtype=np.complex128).reshape(-1)
        if c.size != n_coefficients(self.degree):
            raise DomainError(
                f"degree {self.degree} needs {n_coefficients(self.degree)} coefficients, got {c.size}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_dict(cls, degree: int, terms: dict) -> "HomogeneousPoly3":
        c = np.zeros(n_coefficients(degree), dtype=np.complex128)
        pos = {m: n for n, m in enumerate(multi_indices(degree))}
        for idx, val in terms.items():
            idx = MultiIndex(*idx)
            if idx.degree != degree or min(idx) < 0:
                raise DomainError(f"monomial {tuple(idx)} is not of degree {degree}")
            c[pos[idx]] += val
        return cls(degree, c)

    @classmethod
    def monomial(cls, i: int, j: int, k: int, coeff: complex = 1.0) -> "HomogeneousPoly3":
        return cls.from_dict(i + j + k, {(i, j, k): coeff})

    def as_dict(self) -> dict[MultiIndex, complex]:
        return {m: complex(c) for m, c in zip(multi_indices(self.degree), self.coeffs)}

    def coefficient(self, i: int, j: int, k: int) -> complex:
        return self.as_dict()[MultiIndex(i, j, k)]

    @property
    def scale(self) -> float:
        """Coefficient scale used for relative residual tests."""
        return float(np.linalg.norm(self.coeffs)) or 1.0

    def __eq__(self, other):
        if not isinstance(other, HomogeneousPoly3):
            return NotImplemented
        return self.degree == other.degree and np.array_equal(self.coeffs, other.coeffs)

    def __hash__(self):
        return hash((self.degree, self.coeffs.tobytes()))

    def __add__(self, other: "HomogeneousPoly3") -> "HomogeneousPoly3":
        if other.degree != self.degree:
            raise DomainError("cannot add forms of different degree")
        return HomogeneousPoly3(self.degree, self.coeffs + other.coeffs)

    def __mul__(self, other):
        if isinstance(other, HomogeneousPoly3):
            return multiply(self, other)
        return HomogeneousPoly3(self.degree, self.coeffs * complex(other))

    __rmul__ = __mul__

    def __call__(self, x):
        return evaluate(self, x)


def sample_kostlan(d: int, seed: EnsembleSeed) -> HomogeneousPoly3:
    """Draw a Kostlan polynomial: weights times i.i.d. N_C(0, 1) variables."""
    if d < 1:
        raise DomainError(f"degree must be >= 1, got {d}")
    rng = seed.generator()
    n = n_coefficients(d)
    # E|a|^2 = 1: real and imaginary parts each have variance 1/2
    a = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * math.sqrt(0.5)
    return HomogeneousPoly3(d, a * kostlan_weights(d))


def _powers(x: np.ndarray, d: int) -> np.ndarray:
    # x: (..., 3) -> (..., 3, d+1) with x[..., m]**e
    pw = np.ones(x.shape + (d + 1,), dtype=np.complex128)
    for e in range(1, d + 1):
        pw[..., e] = pw[..., e - 1] * x
    return pw


def evaluate(P: HomogeneousPoly3, x) -> np.ndarray | complex:
    """Value of ``P`` at ``x`` (shape ``(3,)`` or ``(..., 3)``)."""
    x = np.asarray(x, dtype=np.complex128)
    e = _exponents(P.degree)
    pw = _powers(x, P.degree)
    mono = pw[..., 0, e[:, 0]] * pw[..., 1, e[:, 1]] * pw[..., 2, e[:, 2]]
    val = mono @ P.coeffs
    return complex(val) if val.ndim == 0 else val


def _derivative_coeffs(P: HomogeneousPoly3, axis: int) -> HomogeneousPoly3:
    d = P.degree
    if d == 0:
        return HomogeneousPoly3(0, [0.0])
    terms: dict = {}
    for m, c in zip(multi_indices(d), P.coeffs):
        if m[axis] == 0:
            continue
        new = list(m)
        new[axis] -= 1
        terms[tuple(new)] = terms.get(tuple(new), 0) + c * m[axis]
    return HomogeneousPoly3.from_dict(d - 1, terms)


@lru_cache(maxsize=512)
def partial(P: HomogeneousPoly3, axis: int) -> HomogeneousPoly3:
    """Partial derivative with respect to X_axis."""
    return _derivative_coeffs(P, axis)


def gradient(P: HomogeneousPoly3, x) -> np.ndarray:
    """Triple of partial derivatives at ``x``; shape ``(..., 3)``."""
    x = np.asarray(x, dtype=np.complex128)
    return np.stack([np.asarray(evaluate(partial(P, a), x)) for a in range(3)], axis=-1)


def hessian(P: HomogeneousPoly3, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    grads = [partial(P, a) for a in range(3)]
    rows = [np.stack([np.asarray(evaluate(partial(g, b), x)) for b in range(3)], axis=-1) for g in grads]
    return np.stack(rows, axis=-2)


def multiply(P1: HomogeneousPoly3, P2: HomogeneousPoly3) -> HomogeneousPoly3:
    """Exact product by multi-index convolution."""
    d = P1.degree + P2.degree
    out = np.zeros(n_coefficients(d), dtype=np.complex128)
    pos = {m: n for n, m in enumerate(multi_indices(d))}
    for m1, c1 in zip(multi_indices(P1.degree), P1.coeffs):
        if c1 == 0:
            continue
        for m2, c2 in zip(multi_indices(P2.degree), P2.coeffs):
            if c2 == 0:
                continue
            out[pos[(m1[0] + m2[0], m1[1] + m2[1], m1[2] + m2[2])]] += c1 * c2
    return HomogeneousPoly3(d, out)


def degenerate_family(P1: HomogeneousPoly3, P2: HomogeneousPoly3, Q: HomogeneousPoly3, eps: float) -> HomogeneousPoly3:
    """The perturbed reducible curve P1*P2 + eps*Q."""
    if Q.degree != P1.degree + P2.degree:
        raise DomainError(
            f"deg Q = {Q.degree} but deg P1 + deg P2 = {P1.degree + P2.degree}"
        )
    prod = multiply(P1, P2)
    if eps == 0:
        return prod
    return HomogeneousPoly3(prod.degree, prod.coeffs + eps * Q.coeffs)


def compose_linear(P: HomogeneousPoly3, U: np.ndarray) -> HomogeneousPoly3:
    """The form y -> P(U y), by exact expansion of the linear substitution."""
    U = np.asarray(U, dtype=np.complex128)
    d = P.degree
    # dense tensor of coefficients indexed [i, j] (k = d - i - j), built by repeated products
    lin = [HomogeneousPoly3(1, [U[r, 0], U[r, 1], U[r, 2]]) for r in range(3)]
    pows = [[HomogeneousPoly3(0, [1.0])] for _ in range(3)]
    for r in range(3):
        for _ in range(d):
            pows[r].append(multiply(pows[r][-1], lin[r]))
    out = np.zeros(n_coefficients(d), dtype=np.complex128)
    for m, c in zip(multi_indices(d), P.coeffs):
        if c == 0:
            continue
        term = multiply(multiply(pows[0][m[0]], pows[1][m[1]]), pows[2][m[2]])
        out += c * term.coeffs
    return HomogeneousPoly3(d, out)


# -- serialization ----------------------------------------------------------

def dumps(P: HomogeneousPoly3) -> str:
    lines = [f"degree {P.degree}"]
    for m, c in zip(multi_indices(P.degree), P.coeffs):
        lines.append(f"{m[0]} {m[1]} {m[2]} {c.real:.17g} {c.imag:.17g}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> HomogeneousPoly3:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or not lines[0].startswith("degree"):
        raise DomainError("polynomial file must start with a 'degree d' header")
    d = int(lines[0].split()[1])
    terms = {}
    for ln in lines[1:]:
        i, j, k, re, im = ln.split()
        terms[(int(i), int(j), int(k))] = complex(float(re), float(im))
    return HomogeneousPoly3.from_dict(d, terms)


def save(P: HomogeneousPoly3, path) -> None:
    Path(path).write_text(dumps(P))


def load(path) -> HomogeneousPoly3:
    return loads(Path(path).read_text())
