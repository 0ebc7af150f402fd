"""Forward-mode scalar numbers carrying first and second derivatives.

A ``Dual2`` holds a value, a gradient against ``k`` seed directions, and
optionally the full ``k x k`` Hessian.  Environment dynamics and costs are
written as ordinary numpy-flavoured code over these numbers, so exact first
and second derivatives come out of the same code path that produces the
value.  Object-dtype numpy arrays of Dual2 support ``np.dot`` and friends
because numpy falls back to the overloaded scalar operators.
"""

import math

import numpy as np

_SCALARS = (int, float, np.integer, np.floating)


class Dual2:
    """Value plus first (and optionally second) derivative information."""

    __slots__ = ("v", "g", "h")

    def __init__(self, v, g, h=None):
        self.v = float(v)
        self.g = g
        self.h = h

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Dual2):
            h = None if self.h is None else self.h + other.h
            return Dual2(self.v + other.v, self.g + other.g, h)
        if isinstance(other, _SCALARS):
            return Dual2(self.v + float(other), self.g, self.h)
        return NotImplemented

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual2):
            h = None if self.h is None else self.h - other.h
            return Dual2(self.v - other.v, self.g - other.g, h)
        if isinstance(other, _SCALARS):
            return Dual2(self.v - float(other), self.g, self.h)
        return NotImplemented

    def __rsub__(self, other):
        if isinstance(other, _SCALARS):
            h = None if self.h is None else -self.h
            return Dual2(float(other) - self.v, -self.g, h)
        return NotImplemented

    def __mul__(self, other):
        if isinstance(other, Dual2):
            h = None
            if self.h is not None:
                cross = np.outer(self.g, other.g)
                h = self.v * other.h + other.v * self.h + cross + cross.T
            return Dual2(
                self.v * other.v, self.v * other.g + other.v * self.g, h
            )
        if isinstance(other, _SCALARS):
            c = float(other)
            h = None if self.h is None else c * self.h
            return Dual2(c * self.v, c * self.g, h)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual2):
            return self * other._reciprocal()
        if isinstance(other, _SCALARS):
            return self * (1.0 / float(other))
        return NotImplemented

    def __rtruediv__(self, other):
        if isinstance(other, _SCALARS):
            return self._reciprocal() * float(other)
        return NotImplemented

    def __pow__(self, p):
        if isinstance(p, _SCALARS):
            p = float(p)
            f = self.v**p
            d1 = p * self.v ** (p - 1.0)
            d2 = p * (p - 1.0) * self.v ** (p - 2.0) if self.h is not None else 0.0
            return self._chain(f, d1, d2)
        return NotImplemented

    def __neg__(self):
        h = None if self.h is None else -self.h
        return Dual2(-self.v, -self.g, h)

    def __pos__(self):
        return self

    # comparisons act on values only (useful in solver bookkeeping)
    def __lt__(self, other):
        return self.v < _val(other)

    def __le__(self, other):
        return self.v <= _val(other)

    def __gt__(self, other):
        return self.v > _val(other)

    def __ge__(self, other):
        return self.v >= _val(other)

    def __float__(self):
        return self.v

    def __repr__(self):
        order = 1 if self.h is None else 2
        return f"Dual2({self.v!r}, order={order})"

    # -- elementary functions ---------------------------------------------

    def _chain(self, f, d1, d2):
        g = d1 * self.g
        h = None
        if self.h is not None:
            h = d1 * self.h + d2 * np.outer(self.g, self.g)
        return Dual2(f, g, h)

    def _reciprocal(self):
        inv = 1.0 / self.v
        return self._chain(inv, -inv * inv, 2.0 * inv**3)

    def sin(self):
        s, c = math.sin(self.v), math.cos(self.v)
        return self._chain(s, c, -s)

    def cos(self):
        s, c = math.sin(self.v), math.cos(self.v)
        return self._chain(c, -s, -c)

    def tan(self):
        t = math.tan(self.v)
        sec2 = 1.0 + t * t
        return self._chain(t, sec2, 2.0 * t * sec2)

    def exp(self):
        e = math.exp(self.v)
        return self._chain(e, e, e)

    def log(self):
        inv = 1.0 / self.v
        return self._chain(math.log(self.v), inv, -inv * inv)

    def sqrt(self):
        s = math.sqrt(self.v)
        return self._chain(s, 0.5 / s, -0.25 / (s * self.v))

    def tanh(self):
        t = math.tanh(self.v)
        sech2 = 1.0 - t * t
        return self._chain(t, sech2, -2.0 * t * sech2)


def _val(x):
    return x.v if isinstance(x, Dual2) else float(x)


# -- dispatching helpers (work on plain floats, Dual2, and object arrays) --


def _dispatch(name, np_fn):
    def fn(x):
        if isinstance(x, Dual2):
            return getattr(x, name)()
        if isinstance(x, np.ndarray) and x.dtype == object:
            out = np.empty(x.shape, dtype=object)
            flat_in, flat_out = x.ravel(), out.ravel()
            for i, xi in enumerate(flat_in):
                flat_out[i] = fn(xi)
            return out
        return np_fn(x)

    fn.__name__ = name
    return fn


sin = _dispatch("sin", np.sin)
cos = _dispatch("cos", np.cos)
tan = _dispatch("tan", np.tan)
exp = _dispatch("exp", np.exp)
log = _dispatch("log", np.log)
sqrt = _dispatch("sqrt", np.sqrt)
tanh = _dispatch("tanh", np.tanh)


def value(y):
    """Plain float value of a Dual2 or numeric scalar."""
    return y.v if isinstance(y, Dual2) else float(y)


def values(ys):
    """Plain float array from a sequence of Dual2/numeric scalars."""
    return np.array([value(y) for y in np.asarray(ys, dtype=object).ravel()])


def gradient(y, k):
    if isinstance(y, Dual2):
        return np.asarray(y.g, dtype=float)
    return np.zeros(k)


def hessian(y, k):
    if isinstance(y, Dual2) and y.h is not None:
        return np.asarray(y.h, dtype=float)
    return np.zeros((k, k))


def seed(values_, offset, k, order=2):
    """Object array of Dual2 seeded with unit directions ``offset..offset+len``."""
    values_ = np.asarray(values_, dtype=float)
    out = np.empty(values_.shape[0], dtype=object)
    for i, v in enumerate(values_):
        g = np.zeros(k)
        g[offset + i] = 1.0
        h = np.zeros((k, k)) if order == 2 else None
        out[i] = Dual2(v, g, h)
    return out


def constant(values_, k, order=2):
    """Object array of Dual2 with zero derivatives (explicit constants)."""
    values_ = np.asarray(values_, dtype=float)
    out = np.empty(values_.shape[0], dtype=object)
    for i, v in enumerate(values_):
        h = np.zeros((k, k)) if order == 2 else None
        out[i] = Dual2(v, np.zeros(k), h)
    return out
