"""Control and function parameterizations: interpolating open-loop policies
and small tanh networks.

The Lagrange policy interpolates control pivots at equispaced times with a
polynomial of matching degree; evaluation uses the barycentric form, which
keeps the partition-of-unity property accurate to roundoff even at degree 40
(the naive product form loses 9+ digits there).

The MLP is a plain fully connected tanh network with a linear output layer.
``apply`` runs on forward-mode numbers so the network can serve as a cost or
dynamics term inside diffkit wrappers; ``jacobians`` gives exact input and
parameter Jacobians analytically for the per-step policy derivatives.
"""

import math

import numpy as np

from . import ad


class LagrangePolicy:
    """Open-loop polynomial control: m outputs interpolating N+1 pivots
    placed at t_i = i T / N.  Parameters are the stacked pivots, pivot-major:
    theta = [u_0, u_1, ..., u_N] with each u_i an m-vector."""

    def __init__(self, degree, m, horizon):
        if degree < 1:
            raise ValueError(f"degree must be >= 1, got {degree}")
        if horizon <= 0:
            raise ValueError(f"horizon must be positive, got {horizon}")
        self.N = degree
        self.m = m
        self.T = float(horizon)
        self.nodes = np.linspace(0.0, self.T, degree + 1)
        # barycentric weights for equispaced nodes, up to a common scale
        self.bary = np.array(
            [(-1.0) ** i * math.comb(degree, i) for i in range(degree + 1)]
        )

    @property
    def n_params(self):
        return self.m * (self.N + 1)

    def init_theta(self, rng=None, scale=0.0):
        theta = np.zeros(self.n_params)
        if rng is not None and scale > 0.0:
            theta = scale * rng.standard_normal(self.n_params)
        return theta

    def basis(self, t):
        """Interpolation weights b_i(t); sums to 1, equals a unit vector at
        every pivot.  Rejects t outside [0, T]."""
        t = float(t)
        if t < 0.0 or t > self.T:
            raise ValueError(f"t = {t} outside the policy domain [0, {self.T}]")
        diff = t - self.nodes
        hit = np.nonzero(np.abs(diff) < 1e-12)[0]
        if hit.size:
            b = np.zeros(self.N + 1)
            b[hit[0]] = 1.0
            return b
        terms = self.bary / diff
        b = terms / math.fsum(terms)
        # individual basis values reach ~1e9 at degree 40, so the division
        # roundoff breaks the exact sum; absorb the residual into the entry
        # where it is relatively harmless
        b[np.argmin(np.abs(b))] -= math.fsum(b) - 1.0
        return b

    def controls(self, theta, t, x=None):
        """Control at time t under pivot parameters theta (state is ignored:
        the policy is open loop)."""
        b = self.basis(t)
        pivots = np.asarray(theta, dtype=float).reshape(self.N + 1, self.m)
        return b @ pivots

    def jacobians(self, theta, t, x=None, n_state=0):
        """(u, Ux, Ue): the policy is open-loop, so Ux = 0 (shaped against
        the caller's state dimension) and Ue is the block row
        [b_0 I, ..., b_N I]."""
        b = self.basis(t)
        pivots = np.asarray(theta, dtype=float).reshape(self.N + 1, self.m)
        u = b @ pivots
        Ue = np.kron(b, np.eye(self.m))
        return u, np.zeros((self.m, n_state)), Ue


class MLP:
    """Fully connected tanh network with a linear output layer.

    widths = [in, hidden..., out]; parameters are flattened per layer as the
    row-major weight matrix followed by the bias.
    """

    def __init__(self, widths):
        if len(widths) < 2:
            raise ValueError("need at least an input and an output width")
        self.widths = tuple(int(w) for w in widths)
        self.shapes = [
            (self.widths[i + 1], self.widths[i]) for i in range(len(self.widths) - 1)
        ]

    @property
    def n_in(self):
        return self.widths[0]

    @property
    def n_out(self):
        return self.widths[-1]

    @property
    def n_params(self):
        return sum(rows * (cols + 1) for rows, cols in self.shapes)

    def init_theta(self, seed=0):
        """Uniform in +-1/sqrt(fan_in) per layer; keeps tanh pre-activations
        in the near-linear regime."""
        rng = np.random.default_rng(seed)
        parts = []
        for rows, cols in self.shapes:
            bound = 1.0 / math.sqrt(cols)
            parts.append(rng.uniform(-bound, bound, rows * cols))
            parts.append(rng.uniform(-bound, bound, rows))
        return np.concatenate(parts)

    def _unpack(self, theta):
        layers = []
        idx = 0
        for rows, cols in self.shapes:
            W = np.asarray(theta[idx : idx + rows * cols]).reshape(rows, cols)
            idx += rows * cols
            b = np.asarray(theta[idx : idx + rows])
            idx += rows
            layers.append((W, b))
        if idx != np.shape(theta)[0]:
            raise ValueError(
                f"theta has length {np.shape(theta)[0]}, expected {self.n_params}"
            )
        return layers

    def apply(self, x, theta):
        """Forward pass; works on plain floats and forward-mode numbers for
        both arguments, so diffkit wrappers can differentiate through it."""
        x = np.asarray(x)
        if x.shape[0] != self.n_in:
            raise ValueError(f"input has length {x.shape[0]}, expected {self.n_in}")
        a = x
        layers = self._unpack(theta)
        for li, (W, b) in enumerate(layers):
            z = W @ a + b
            a = ad.tanh(z) if li < len(layers) - 1 else z
        return a

    def jacobians(self, x, theta):
        """(y, dy/dx, dy/dtheta), all exact, by one forward and one backward
        sweep over the layers."""
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        layers = self._unpack(theta)
        acts = [x]
        derivs = []
        a = x
        for li, (W, b) in enumerate(layers):
            z = W @ a + b
            if li < len(layers) - 1:
                a = np.tanh(z)
                derivs.append(1.0 - a * a)
            else:
                a = z
                derivs.append(np.ones_like(z))
            acts.append(a)
        y = acts[-1]
        out = self.n_out
        # G[l] = dy/dz_l, built backward from the linear output layer
        G = [None] * len(layers)
        G[-1] = np.eye(out)
        for li in range(len(layers) - 2, -1, -1):
            W_next = layers[li + 1][0]
            G[li] = (G[li + 1] @ W_next) * derivs[li]
        jx = G[0] @ layers[0][0]
        cols = []
        for li, (W, b) in enumerate(layers):
            a_prev = acts[li]
            jw = np.einsum("oi,j->oij", G[li], a_prev).reshape(out, -1)
            cols.append(jw)
            cols.append(G[li])
        jt = np.concatenate(cols, axis=1)
        return y, jx, jt


class MLPPolicy:
    """State-feedback policy u = net(x); adapts an MLP to the common policy
    interface (controls / jacobians over a flat parameter vector)."""

    def __init__(self, net: MLP):
        self.net = net
        self.m = net.n_out

    @property
    def n_params(self):
        return self.net.n_params

    def init_theta(self, seed=0):
        return self.net.init_theta(seed)

    def controls(self, theta, t, x):
        return self.net.apply(np.asarray(x, dtype=float), theta)

    def jacobians(self, theta, t, x, n_state=0):
        u, jx, jt = self.net.jacobians(np.asarray(x, dtype=float), theta)
        return u, jx, jt


class LinearFeedbackPolicy:
    """Affine state feedback u = K x + k with theta = [vec(K) row-major, k]."""

    def __init__(self, m, n):
        self.m = m
        self.n = n

    @property
    def n_params(self):
        return self.m * (self.n + 1)

    def pack(self, K, k):
        return np.concatenate([np.asarray(K, float).ravel(), np.asarray(k, float)])

    def _unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        K = theta[: self.m * self.n].reshape(self.m, self.n)
        k = theta[self.m * self.n :]
        return K, k

    def controls(self, theta, t, x):
        K, k = self._unpack(theta)
        return K @ np.asarray(x, dtype=float) + k

    def jacobians(self, theta, t, x, n_state=0):
        K, k = self._unpack(theta)
        x = np.asarray(x, dtype=float)
        Ue = np.concatenate([np.kron(np.eye(self.m), x), np.eye(self.m)], axis=1)
        return K @ x + k, K, Ue


class TimeVaryingLinearPolicy:
    """Per-step affine feedback u_t = K_t x + k_t over a fixed horizon;
    theta stacks [vec(K_t), k_t] for t = 0..T-1.  Matches the gain structure
    a finite-horizon LQR solution produces."""

    def __init__(self, m, n, T):
        self.m = m
        self.n = n
        self.horizon = T
        self._per_step = m * (n + 1)

    @property
    def n_params(self):
        return self.horizon * self._per_step

    def pack(self, Ks, ks):
        parts = []
        for t in range(self.horizon):
            parts.append(np.asarray(Ks[t], float).ravel())
            parts.append(np.asarray(ks[t], float))
        return np.concatenate(parts)

    def _unpack(self, theta, t):
        if not 0 <= t < self.horizon:
            raise ValueError(f"t = {t} outside the policy horizon [0, {self.horizon})")
        theta = np.asarray(theta, dtype=float)
        seg = theta[t * self._per_step : (t + 1) * self._per_step]
        K = seg[: self.m * self.n].reshape(self.m, self.n)
        k = seg[self.m * self.n :]
        return K, k

    def controls(self, theta, t, x):
        K, k = self._unpack(theta, t)
        return K @ np.asarray(x, dtype=float) + k

    def jacobians(self, theta, t, x, n_state=0):
        K, k = self._unpack(theta, t)
        x = np.asarray(x, dtype=float)
        block = np.concatenate([np.kron(np.eye(self.m), x), np.eye(self.m)], axis=1)
        Ue = np.zeros((self.m, self.n_params))
        Ue[:, t * self._per_step : (t + 1) * self._per_step] = block
        return K @ x + k, K, Ue


def neural_objective(net: MLP, input_cost=1e-4):
    """Stage/terminal cost callables using a scalar network of the state plus
    a small fixed quadratic control term.  The control curvature is the
    constant 2 * input_cost * I, independent of the network weights."""
    if net.n_out != 1:
        raise ValueError(f"objective network must have one output, got {net.n_out}")

    def stage(x, u, theta):
        v = net.apply(x, theta)[0]
        return v + input_cost * sum(ui * ui for ui in u)

    def terminal(x, u, theta):
        return net.apply(x, theta)[0]

    return stage, terminal
