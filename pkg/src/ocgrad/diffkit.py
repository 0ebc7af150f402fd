"""Derivative-supplying wrappers for dynamics and cost functions.

``DiffVectorFn`` and ``DiffScalarFn`` wrap generic callables ``fn(x, u, theta)``
written in numpy-flavoured code that also accepts object arrays of forward-mode
numbers (see :mod:`ocgrad.ad`).  One evaluation with seeded inputs yields the
value, all first partials, and all pairwise second-partial blocks over
``{x, u, theta}``.  An independent central finite-difference oracle is provided
for verification; it is used only in tests.
"""

from dataclasses import dataclass

import numpy as np

from . import ad


class DimensionError(ValueError):
    """Input vector does not match a declared dimension."""


class FDOracleError(RuntimeError):
    """Finite-difference oracle hit a non-finite function value."""


def _check_dim(name, vec, expected):
    vec = np.asarray(vec, dtype=float)
    if vec.ndim != 1 or vec.shape[0] != expected:
        raise DimensionError(
            f"axis '{name}' has shape {vec.shape}, expected ({expected},)"
        )
    return vec


@dataclass(frozen=True)
class FDConfig:
    """Central finite-difference settings (step must be positive)."""

    step: float = 1e-6
    scheme: str = "central"

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if self.scheme != "central":
            raise ValueError(f"unsupported scheme {self.scheme!r}")


@dataclass(frozen=True)
class HamiltonianBlocks:
    """Second-derivative blocks of the per-step Hamiltonian c + f'lam."""

    hxx: np.ndarray
    hxu: np.ndarray
    huu: np.ndarray
    hxe: np.ndarray
    hue: np.ndarray

    @property
    def hux(self):
        return self.hxu.T


class DiffScalarFn:
    """Scalar function of (x, u, theta) with exact first/second partials."""

    def __init__(self, fn, n, m, r):
        self._fn = fn
        self.n, self.m, self.r = n, m, r

    def _seeded(self, x, u, theta, order):
        x = _check_dim("x", x, self.n)
        u = _check_dim("u", u, self.m)
        theta = _check_dim("theta", theta, self.r)
        k = self.n + self.m + self.r
        xs = ad.seed(x, 0, k, order)
        us = ad.seed(u, self.n, k, order)
        ts = ad.seed(theta, self.n + self.m, k, order)
        return self._fn(xs, us, ts), k

    def value(self, x, u, theta):
        x = _check_dim("x", x, self.n)
        u = _check_dim("u", u, self.m)
        theta = _check_dim("theta", theta, self.r)
        return ad.value(self._fn(x, u, theta))

    def grads(self, x, u, theta):
        """First partials (d/dx, d/du, d/dtheta)."""
        out, k = self._seeded(x, u, theta, order=1)
        g = ad.gradient(out, k)
        n, m = self.n, self.m
        return g[:n], g[n : n + m], g[n + m :]

    def hessian(self, x, u, theta):
        """Full (n+m+r) x (n+m+r) second-derivative matrix."""
        out, k = self._seeded(x, u, theta, order=2)
        return ad.hessian(out, k)

    def full(self, x, u, theta):
        """(value, gradient, hessian) from a single second-order evaluation;
        gradient and hessian are over the stacked (x, u, theta) vector."""
        out, k = self._seeded(x, u, theta, order=2)
        return ad.value(out), ad.gradient(out, k), ad.hessian(out, k)


class DiffVectorFn:
    """Vector function of (x, u, theta) with exact Jacobians and second partials."""

    def __init__(self, fn, n_out, n, m, r):
        self._fn = fn
        self.n_out = n_out
        self.n, self.m, self.r = n, m, r

    def _seeded(self, x, u, theta, order):
        x = _check_dim("x", x, self.n)
        u = _check_dim("u", u, self.m)
        theta = _check_dim("theta", theta, self.r)
        k = self.n + self.m + self.r
        xs = ad.seed(x, 0, k, order)
        us = ad.seed(u, self.n, k, order)
        ts = ad.seed(theta, self.n + self.m, k, order)
        out = np.asarray(self._fn(xs, us, ts), dtype=object)
        if out.shape != (self.n_out,):
            raise DimensionError(
                f"function output has shape {out.shape}, expected ({self.n_out},)"
            )
        return out, k

    def value(self, x, u, theta):
        x = _check_dim("x", x, self.n)
        u = _check_dim("u", u, self.m)
        theta = _check_dim("theta", theta, self.r)
        out = np.asarray(self._fn(x, u, theta))
        return out.astype(float)

    def jacobians(self, x, u, theta):
        """Jacobian blocks (w.r.t. x, u, theta), shapes (n_out,n), (n_out,m), (n_out,r)."""
        out, k = self._seeded(x, u, theta, order=1)
        jac = np.stack([ad.gradient(oi, k) for oi in out])
        n, m = self.n, self.m
        return jac[:, :n], jac[:, n : n + m], jac[:, n + m :]

    def full(self, x, u, theta, w=None):
        """(value, jacobian, hessians) from one second-order pass.

        The jacobian is the stacked (n_out, n+m+r) matrix.  With ``w`` the
        hessian term is the second-derivative matrix of w . f; without it the
        per-output hessians are returned stacked as (n_out, k, k).
        """
        out, k = self._seeded(x, u, theta, order=2)
        vals = np.empty(self.n_out)
        jac = np.empty((self.n_out, k))
        if w is None:
            hess = np.empty((self.n_out, k, k))
            for i, oi in enumerate(out):
                vals[i] = ad.value(oi)
                jac[i] = ad.gradient(oi, k)
                hess[i] = ad.hessian(oi, k)
            return vals, jac, hess
        w = _check_dim("w", w, self.n_out)
        acc = np.zeros((k, k))
        for i, oi in enumerate(out):
            vals[i] = ad.value(oi)
            jac[i] = ad.gradient(oi, k)
            if w[i] != 0.0:
                acc += w[i] * ad.hessian(oi, k)
        return vals, jac, acc

    def weighted_hessian(self, x, u, theta, w):
        """Full second-derivative matrix of w . f (the costate-weighted dynamics)."""
        w = _check_dim("w", w, self.n_out)
        out, k = self._seeded(x, u, theta, order=2)
        acc = np.zeros((k, k))
        for wi, oi in zip(w, out):
            if wi != 0.0:
                acc += wi * ad.hessian(oi, k)
        return acc


def jacobians(f: DiffVectorFn, x, u, theta):
    """Dynamics Jacobians (F, G, E) evaluated at (x, u, theta)."""
    return f.jacobians(x, u, theta)


def hamiltonian_blocks(c: DiffScalarFn, f: DiffVectorFn, lam_next, x, u, theta):
    """All five second-derivative blocks of H = c + f'lam_next.

    The cross block satisfies hux == hxu' exactly: the forward-mode Hessian is
    symmetric by construction.
    """
    lam_next = _check_dim("lam_next", lam_next, f.n_out)
    n, m = c.n, c.m
    full = c.hessian(x, u, theta) + f.weighted_hessian(x, u, theta, lam_next)
    full = 0.5 * (full + full.T)
    return HamiltonianBlocks(
        hxx=full[:n, :n],
        hxu=full[:n, n : n + m],
        huu=full[n : n + m, n : n + m],
        hxe=full[:n, n + m :],
        hue=full[n : n + m, n + m :],
    )


def terminal_blocks(h: DiffScalarFn, x, theta):
    """Terminal-cost blocks (hxx_T, hxe_T); h takes no control argument."""
    n = h.n
    full = h.hessian(x, np.zeros(h.m), theta)
    full = 0.5 * (full + full.T)
    return full[:n, :n], full[:n, n + h.m :]


# -- finite-difference oracle (tests only) --------------------------------


def _probe(func, point):
    y = np.asarray(func(point), dtype=float)
    if not np.all(np.isfinite(y)):
        raise FDOracleError(f"non-finite function value at perturbed point {point}")
    return y


def fd_gradient(func, point, cfg: FDConfig = FDConfig()):
    """Central-difference gradient of a scalar function of one flat vector."""
    point = np.asarray(point, dtype=float)
    h = cfg.step
    grad = np.zeros(point.shape[0])
    for i in range(point.shape[0]):
        e = np.zeros_like(point)
        e[i] = h
        grad[i] = (_probe(func, point + e) - _probe(func, point - e)) / (2 * h)
    return grad


def fd_jacobian(func, point, cfg: FDConfig = FDConfig()):
    """Central-difference Jacobian of a vector function of one flat vector."""
    point = np.asarray(point, dtype=float)
    h = cfg.step
    cols = []
    for i in range(point.shape[0]):
        e = np.zeros_like(point)
        e[i] = h
        cols.append((_probe(func, point + e) - _probe(func, point - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def fd_hessian(func, point, cfg: FDConfig = FDConfig(step=1e-4)):
    """Second-order central differences of a scalar function of one flat vector."""
    point = np.asarray(point, dtype=float)
    h = cfg.step
    k = point.shape[0]
    hess = np.zeros((k, k))
    for i in range(k):
        for j in range(i, k):
            ei = np.zeros(k)
            ej = np.zeros(k)
            ei[i] = h
            ej[j] = h
            val = (
                _probe(func, point + ei + ej)
                - _probe(func, point + ei - ej)
                - _probe(func, point - ei + ej)
                + _probe(func, point - ei - ej)
            ) / (4 * h * h)
            hess[i, j] = hess[j, i] = val
    return hess


def rel_err(a, b):
    """Max-norm relative error, stable near zero: ||a-b||_inf / max(1, ||b||_inf)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = max(1.0, np.max(np.abs(b))) if b.size else 1.0
    diff = np.max(np.abs(a - b)) if a.size else 0.0
    return diff / denom
