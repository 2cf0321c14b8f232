"""
Monomial dictionaries
=====================

Multivariate monomial bases in graded lexicographic order, and the small amount
of coefficient-vector algebra needed by the EDMD and identification stages.

For ``dim=2, max_degree=3`` the ordering is::

    1, x, y, x^2, xy, y^2, x^3, x^2y, xy^2, y^3
"""
from dataclasses import dataclass
from functools import cached_property
from math import comb

import numpy as np

_VAR_NAMES = "xyz"


@dataclass(frozen=True)
class MonomialBasis:
    """Graded-lex ordered monomials in ``dim`` variables up to ``max_degree``.

    Parameters
    ----------
    dim : int
        Number of state variables.
    max_degree : int
        Highest total degree included.
    """
    dim: int
    max_degree: int

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValueError(f"basis dimension must be >= 1, got {self.dim}")
        if int(self.max_degree) < 0:
            raise ValueError(f"max_degree must be >= 0, got {self.max_degree}")

    @cached_property
    def exponents(self):
        """Tuple of exponent tuples, one per basis function."""
        return tuple(_graded_lex(self.dim, self.max_degree))

    @cached_property
    def exponent_array(self):
        return np.array(self.exponents, dtype=np.int64).reshape(len(self), self.dim)

    @cached_property
    def _index(self):
        return {e: k for k, e in enumerate(self.exponents)}

    def __len__(self):
        return comb(self.dim + self.max_degree, self.max_degree)

    @property
    def size(self):
        return len(self)

    def index_of(self, exponent):
        """Position of a monomial given by its exponent tuple; ``KeyError`` if absent."""
        return self._index[tuple(int(e) for e in exponent)]

    def contains(self, exponent):
        return tuple(int(e) for e in exponent) in self._index

    def labels(self):
        return [monomial_label(e) for e in self.exponents]

    def evaluate(self, points):
        """Evaluate every basis function at each row of ``points``.

        Parameters
        ----------
        points : array_like, shape (P, dim) or (dim,)

        Returns
        -------
        ndarray, shape (P, N_K) (or (N_K,) for a single point)
        """
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        if single:
            pts = pts[None, :]
        if pts.ndim != 2 or pts.shape[1] != self.dim:
            raise ValueError(f"expected points with {self.dim} columns, got shape {np.shape(points)}")
        out = np.empty((pts.shape[0], len(self)))
        # powers[i][p] = x_i ** p, reused across monomials
        powers = [[np.ones(pts.shape[0])] for _ in range(self.dim)]
        for i in range(self.dim):
            for _ in range(self.max_degree):
                powers[i].append(powers[i][-1] * pts[:, i])
        for k, exps in enumerate(self.exponents):
            col = powers[0][exps[0]]
            for i in range(1, self.dim):
                col = col * powers[i][exps[i]]
            out[:, k] = col
        return out[0] if single else out


def _graded_lex(dim, max_degree):
    for degree in range(max_degree + 1):
        yield from _exponents_of_degree(dim, degree)


def _exponents_of_degree(dim, degree):
    # lexicographic: larger power on earlier variables first
    if dim == 1:
        yield (degree,)
        return
    for first in range(degree, -1, -1):
        for rest in _exponents_of_degree(dim - 1, degree - first):
            yield (first,) + rest


def variable_name(i, dim):
    if dim <= len(_VAR_NAMES):
        return _VAR_NAMES[i]
    return f"x{i + 1}"


def monomial_label(exponent):
    """Human-readable label, e.g. ``(2, 1) -> 'x^2y'``, ``(0, 0) -> '1'``."""
    dim = len(exponent)
    parts = []
    for i, p in enumerate(exponent):
        if p == 0:
            continue
        name = variable_name(i, dim)
        parts.append(name if p == 1 else f"{name}^{p}")
    if not parts:
        return "1"
    sep = "*" if dim > len(_VAR_NAMES) else ""
    return sep.join(parts)


def build_basis(dim, max_degree):
    """Construct the graded-lex monomial basis of the given dimension and degree."""
    return MonomialBasis(int(dim), int(max_degree))


def evaluate_row(basis, point):
    """Dictionary row ``Psi(x)`` at a single point."""
    point = np.asarray(point, dtype=float)
    if point.shape != (basis.dim,):
        raise ValueError(f"point must have length {basis.dim}, got shape {point.shape}")
    return basis.evaluate(point)


@dataclass(frozen=True)
class PolyCoeffs:
    """Coefficients of a polynomial ``f = values . Psi`` in a given basis."""
    basis: MonomialBasis
    values: np.ndarray
    truncated: bool = False

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(-1)
        if vals.shape[0] != len(self.basis):
            raise ValueError(f"coefficient vector has length {vals.shape[0]}, basis has {len(self.basis)}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __call__(self, points):
        return self.basis.evaluate(points) @ self.values

    def __add__(self, other):
        _check_same_basis(self, other)
        return PolyCoeffs(self.basis, self.values + other.values, self.truncated or other.truncated)

    def __sub__(self, other):
        _check_same_basis(self, other)
        return PolyCoeffs(self.basis, self.values - other.values, self.truncated or other.truncated)

    def __mul__(self, scalar):
        return PolyCoeffs(self.basis, self.values * float(scalar), self.truncated)

    __rmul__ = __mul__

    def terms(self, tol=0.0):
        """``{label: coefficient}`` for entries with magnitude above ``tol``."""
        return {lab: float(v) for lab, v in zip(self.basis.labels(), self.values) if abs(v) > tol}

    def degree(self, tol=0.0):
        nz = np.flatnonzero(np.abs(self.values) > tol)
        if nz.size == 0:
            return -1
        return int(self.basis.exponent_array[nz].sum(axis=1).max())


def _check_same_basis(a, b):
    if a.basis != b.basis:
        raise ValueError("polynomials live in different bases")


def zeros(basis):
    return PolyCoeffs(basis, np.zeros(len(basis)))


def from_terms(basis, terms):
    """Build coefficients from ``{label or exponent tuple: value}``.

    Labels are those produced by :func:`monomial_label` (``'1'``, ``'x'``,
    ``'x^2y'``, ...). Unknown monomials raise ``KeyError``.
    """
    lookup = dict(zip(basis.labels(), range(len(basis))))
    vals = np.zeros(len(basis))
    for key, value in dict(terms).items():
        if isinstance(key, str):
            k = key.replace(" ", "")
            if k not in lookup:
                raise KeyError(f"monomial {key!r} is not in the degree-{basis.max_degree} basis")
            vals[lookup[k]] += float(value)
        else:
            vals[basis.index_of(key)] += float(value)
    return PolyCoeffs(basis, vals)


def coordinate_selector(basis, i, power=1):
    """Unit coefficient vector selecting ``x_i ** power`` (``i`` is 0-based)."""
    if not 0 <= i < basis.dim:
        raise IndexError(f"coordinate {i} out of range for dim {basis.dim}")
    if power not in (1, 2):
        raise ValueError("power must be 1 or 2")
    exp = [0] * basis.dim
    exp[i] = power
    if not basis.contains(exp):
        raise ValueError(f"monomial {monomial_label(exp)} is absent from the degree-{basis.max_degree} basis")
    vals = np.zeros(len(basis))
    vals[basis.index_of(exp)] = 1.0
    return PolyCoeffs(basis, vals)


def multiply_by_coordinate(basis, coeffs, i):
    """Coefficients of ``x_i * f``.

    Monomials pushed past ``max_degree`` are dropped; the result's ``truncated``
    flag is set when any dropped coefficient was nonzero. In one dimension this
    is the shift ``[v0, ..., v_n] -> [0, v0, ..., v_{n-1}]``.
    """
    vals = coeffs.values if isinstance(coeffs, PolyCoeffs) else np.asarray(coeffs, dtype=float)
    if vals.shape[0] != len(basis):
        raise ValueError("coefficient length does not match basis")
    out = np.zeros(len(basis))
    truncated = bool(getattr(coeffs, "truncated", False))
    for k, exps in enumerate(basis.exponents):
        if vals[k] == 0.0:
            continue
        shifted = list(exps)
        shifted[i] += 1
        if basis.contains(shifted):
            out[basis.index_of(shifted)] += vals[k]
        else:
            truncated = True
    return PolyCoeffs(basis, out, truncated)


def aligned_indices(basis, i):
    """Indices of the monomials ``1, x_i, x_i^2, ...`` (pure powers of coordinate ``i``)."""
    idx = []
    for p in range(basis.max_degree + 1):
        exp = [0] * basis.dim
        exp[i] = p
        idx.append(basis.index_of(exp))
    return np.array(idx, dtype=int)
