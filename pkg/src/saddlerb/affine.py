"""Parameter domains and affine parameter decompositions.

A parametrized operator is stored as ``sum_q theta_q(mu) * term_q`` where
every ``theta_q`` is a small rational expression tree over the parameter
coordinates.  Trees (rather than callables) keep the decomposition
serializable next to the offline data.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import OutOfDomain

_DOMAIN_SLACK = 1e-12


@dataclass(frozen=True)
class ParameterDomain:
    """Compact box ``[lower, upper]`` in ``R^n``."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(x) for x in self.lower)
        hi = tuple(float(x) for x in self.upper)
        if len(lo) != len(hi) or not lo:
            raise ValueError("lower and upper must be nonempty and of equal length")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValueError("lower < upper required componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def n(self) -> int:
        return len(self.lower)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.array(self.lower) + np.array(self.upper))

    @property
    def width(self) -> np.ndarray:
        return np.array(self.upper) - np.array(self.lower)

    def contains(self, mu) -> bool:
        mu = np.asarray(mu, dtype=float)
        if mu.shape != (self.n,) or not np.all(np.isfinite(mu)):
            return False
        slack = _DOMAIN_SLACK * np.maximum(1.0, np.abs(self.width))
        return bool(np.all(mu >= np.array(self.lower) - slack)
                    and np.all(mu <= np.array(self.upper) + slack))

    def validate(self, mu) -> np.ndarray:
        """Return ``mu`` as a float array or raise :class:`OutOfDomain`."""
        arr = np.asarray(mu, dtype=float).reshape(-1)
        if not self.contains(arr):
            raise OutOfDomain(f"parameter {arr.tolist()} outside {self.lower}..{self.upper}")
        return arr

    def sample(self, size: int, seed: int) -> np.ndarray:
        """Uniform i.i.d. sample of shape ``(size, n)``, reproducible from ``seed``."""
        if size < 1:
            raise ValueError("sample size must be positive")
        rng = np.random.default_rng(seed)
        u = rng.random((size, self.n))
        return np.array(self.lower) + u * self.width

    def to_dict(self):
        return {"lower": list(self.lower), "upper": list(self.upper)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["lower"]), tuple(d["upper"]))


# ---------------------------------------------------------------------------
# theta expression trees

class Expr:
    """Rational expression in the parameter coordinates."""

    def __call__(self, mu) -> float:
        raise NotImplementedError

    def to_json(self):
        raise NotImplementedError

    def source(self) -> str:
        """Python source evaluating the same operations in the same order."""
        raise NotImplementedError

    def key(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return add(self, mul(Const(-1.0), _lift(other)))

    def __rsub__(self, other):
        return add(_lift(other), mul(Const(-1.0), self))

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __repr__(self):
        return self.key()


@dataclass(frozen=True, repr=False)
class Const(Expr):
    value: float

    def __call__(self, mu):
        return float(self.value)

    def to_json(self):
        return ["const", float(self.value)]

    def source(self):
        return repr(float(self.value))


@dataclass(frozen=True, repr=False)
class Coord(Expr):
    index: int

    def __call__(self, mu):
        return float(mu[self.index])

    def to_json(self):
        return ["coord", int(self.index)]

    def source(self):
        return f"mu[{int(self.index)}]"


@dataclass(frozen=True, repr=False)
class Add(Expr):
    left: Expr
    right: Expr

    def __call__(self, mu):
        return self.left(mu) + self.right(mu)

    def to_json(self):
        return ["add", self.left.to_json(), self.right.to_json()]

    def source(self):
        return f"({self.left.source()} + {self.right.source()})"


@dataclass(frozen=True, repr=False)
class Mul(Expr):
    left: Expr
    right: Expr

    def __call__(self, mu):
        return self.left(mu) * self.right(mu)

    def to_json(self):
        return ["mul", self.left.to_json(), self.right.to_json()]

    def source(self):
        return f"({self.left.source()} * {self.right.source()})"


@dataclass(frozen=True, repr=False)
class Div(Expr):
    num: Expr
    den: Expr

    def __call__(self, mu):
        return self.num(mu) / self.den(mu)

    def to_json(self):
        return ["div", self.num.to_json(), self.den.to_json()]

    def source(self):
        return f"({self.num.source()} / {self.den.source()})"


def _lift(x) -> Expr:
    return x if isinstance(x, Expr) else Const(float(x))


# light constant folding so that equal coefficients get equal keys
def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if isinstance(a, Const) and a.value == 0.0:
        return b
    if isinstance(b, Const) and b.value == 0.0:
        return a
    return Add(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if isinstance(a, Const) and a.value == 1.0:
        return b
    if isinstance(b, Const) and b.value == 1.0:
        return a
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    if isinstance(b, Const) and b.value == 0.0:
        raise ZeroDivisionError("constant zero denominator")
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value / b.value)
    if isinstance(b, Const) and b.value == 1.0:
        return a
    return Div(a, b)


def expr_from_json(obj) -> Expr:
    tag = obj[0]
    if tag == "const":
        return Const(float(obj[1]))
    if tag == "coord":
        return Coord(int(obj[1]))
    if tag == "add":
        return Add(expr_from_json(obj[1]), expr_from_json(obj[2]))
    if tag == "mul":
        return Mul(expr_from_json(obj[1]), expr_from_json(obj[2]))
    if tag == "div":
        return Div(expr_from_json(obj[1]), expr_from_json(obj[2]))
    raise ValueError(f"unknown expression tag {tag!r}")


def compile_thetas(exprs):
    """Fast evaluator ``mu -> list of floats`` for a list of expression trees.

    The generated code performs exactly the tree's floating-point
    operations, so results match ``[e(mu) for e in exprs]`` bitwise.
    """
    exprs = [e if isinstance(e, Expr) else expr_from_json(e) for e in exprs]
    body = ", ".join(e.source() for e in exprs)
    return eval(f"lambda mu: [{body}]", {"__builtins__": {}})  # noqa: S307 - generated from trees


# ---------------------------------------------------------------------------

@dataclass
class AffineDecomposition:
    """``sum_q thetas[q](mu) * terms[q]`` for sparse matrices or vectors.

    ``symmetric`` flags decompositions whose every term is symmetric (the
    ``a``-form); assembled operators then stay symmetric for every ``mu``.
    """

    thetas: list
    terms: list
    domain: ParameterDomain | None = None
    symmetric: bool = False
    name: str = ""
    _shape: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.thetas) != len(self.terms) or not self.terms:
            raise ValueError("need Q >= 1 thetas and an equal number of terms")
        self.thetas = [_lift(t) for t in self.thetas]
        shapes = {t.shape for t in self.terms}
        if len(shapes) != 1:
            raise ValueError(f"all terms must share dimensions, got {shapes}")
        self._shape = shapes.pop()
        if self.symmetric:
            for t in self.terms:
                if sp.issparse(t):
                    d = abs(t - t.T)
                    scale = abs(t).max() if t.nnz else 0.0
                    if d.nnz and d.max() > 1e-12 * max(scale, 1e-300):
                        raise ValueError("term flagged symmetric is not symmetric")

    @property
    def Q(self) -> int:
        return len(self.terms)

    @property
    def shape(self) -> tuple:
        return self._shape

    @property
    def is_vector(self) -> bool:
        return not sp.issparse(self.terms[0])

    def eval_thetas(self, mu) -> np.ndarray:
        if self.domain is not None:
            mu = self.domain.validate(mu)
        else:
            mu = np.asarray(mu, dtype=float).reshape(-1)
        vals = np.array([th(mu) for th in self.thetas], dtype=float)
        if not np.all(np.isfinite(vals)):
            raise OutOfDomain(f"non-finite theta at {mu.tolist()}")
        return vals

    def assemble(self, mu):
        return self.combine(self.eval_thetas(mu))

    def combine(self, coeffs: Sequence[float]):
        """Linear combination of the stored terms with given coefficients."""
        if self.is_vector:
            out = np.zeros(self._shape)
            for c, t in zip(coeffs, self.terms):
                out += c * t
            return out
        out = coeffs[0] * self.terms[0]
        for c, t in zip(coeffs[1:], self.terms[1:]):
            out = out + c * t
        out = sp.csr_matrix(out)
        if self.symmetric:
            out = 0.5 * (out + out.T)
        return out

    def __add__(self, other: "AffineDecomposition") -> "AffineDecomposition":
        return AffineDecomposition(self.thetas + other.thetas, self.terms + other.terms,
                                   domain=self.domain or other.domain,
                                   symmetric=self.symmetric and other.symmetric)

    def scaled(self, c: float) -> "AffineDecomposition":
        return AffineDecomposition(list(self.thetas), [c * t for t in self.terms],
                                   self.domain, self.symmetric, self.name)

    def map_terms(self, fn, symmetric=None) -> "AffineDecomposition":
        return AffineDecomposition(list(self.thetas), [fn(t) for t in self.terms], self.domain,
                                   self.symmetric if symmetric is None else symmetric, self.name)

    def merged(self) -> "AffineDecomposition":
        """Combine terms whose thetas are structurally identical; drop zero terms."""
        order, acc = [], {}
        for th, t in zip(self.thetas, self.terms):
            k = th.key()
            if k in acc:
                acc[k] = (th, acc[k][1] + t)
            else:
                order.append(k)
                acc[k] = (th, t)
        thetas, terms = [], []
        for k in order:
            th, t = acc[k]
            if sp.issparse(t):
                t = sp.csr_matrix(t)
                t.eliminate_zeros()
                if t.nnz == 0:
                    continue
            elif not np.any(t):
                continue
            thetas.append(th)
            terms.append(t)
        if not terms:
            thetas, terms = [self.thetas[0]], [0 * self.terms[0]]
        return AffineDecomposition(thetas, terms, self.domain, self.symmetric, self.name)

    def thetas_json(self):
        return [th.to_json() for th in self.thetas]


def eval_thetas(dec: AffineDecomposition, mu) -> np.ndarray:
    return dec.eval_thetas(mu)


def assemble_at(dec: AffineDecomposition, mu):
    return dec.assemble(mu)
