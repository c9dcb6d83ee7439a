"""Interpolating wavelet filters and connection coefficients.

The basis is the interpolating (Deslauriers-Dubuc) family of order ``p``:
the scaling function is the limit of midpoint Lagrange subdivision over the
``p`` nearest coarse points, the dual scaling function is a unit impulse,
and wavelets sit at the odd points of the next finer lattice.  Everything
downstream (transforms, derivative stencils, grid adaptation) is built from
the small integer-indexed sequences constructed here.

Filter weights are derived as exact rationals and exposed as float views,
so the orthogonality/symmetry identities hold to machine precision by
construction rather than by luck.
"""

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ConfigurationError, ConstructionError

SUPPORTED_ORDERS = (2, 4, 6, 8)

# Conservative admissible derivative orders per basis order.  The p=2 basis
# (piecewise linear) has no collocation derivative; higher orders are capped
# at second derivatives.
MAX_DERIVATIVE_ORDER = {2: 0, 4: 2, 6: 2, 8: 2}


def lagrange_weights(nodes, x, deriv=0):
    """Exact Lagrange interpolation (or derivative) weights at ``x``.

    Returns one Fraction per node such that sum(w_m * f(node_m))
    approximates f^(deriv)(x) exactly for polynomials of degree
    ``len(nodes) - 1``.
    """
    nodes = [Fraction(n) for n in nodes]
    x = Fraction(x)
    n = len(nodes)
    if deriv == 0:
        ws = []
        for m in range(n):
            w = Fraction(1)
            for l in range(n):
                if l != m:
                    w *= (x - nodes[l]) / (nodes[m] - nodes[l])
            ws.append(w)
        return ws
    # Differentiate the Lagrange basis by expanding each basis polynomial
    # into coefficients (exact, small n) and differentiating term-wise.
    ws = []
    for m in range(n):
        coeffs = [Fraction(1)]  # polynomial in t, ascending powers
        denom = Fraction(1)
        for l in range(n):
            if l == m:
                continue
            denom *= nodes[m] - nodes[l]
            new = [Fraction(0)] * (len(coeffs) + 1)
            for q, c in enumerate(coeffs):
                new[q] -= c * nodes[l]
                new[q + 1] += c
            coeffs = new
        for _ in range(deriv):
            coeffs = [c * (q + 1) for q, c in enumerate(coeffs[1:])]
        val = Fraction(0)
        for q in reversed(range(len(coeffs))):
            val = val * x + coeffs[q]
        ws.append(val / denom)
    return ws


class CenteredSeq:
    """A finite sequence indexed over [-radius, radius] with rational entries."""

    def __init__(self, radius, entries=None):
        self.radius = radius
        self._e = dict(entries or {})

    def __getitem__(self, i):
        return self._e.get(i, Fraction(0))

    def __setitem__(self, i, v):
        if abs(i) > self.radius:
            raise IndexError(f"index {i} outside [-{self.radius}, {self.radius}]")
        self._e[i] = Fraction(v)

    def indices(self):
        return range(-self.radius, self.radius + 1)

    def support(self):
        return sorted(i for i, v in self._e.items() if v != 0)

    def to_array(self):
        """Float view, index i stored at position i + radius."""
        out = np.zeros(2 * self.radius + 1)
        for i, v in self._e.items():
            out[i + self.radius] = float(v)
        return out

    def dot(self, other):
        return sum(self[i] * other[i] for i in self.indices())


@dataclass
class FilterBank:
    """The four filter sequences for order ``p`` plus boundary predictions.

    ``h`` is the interpolating refinement filter (h0 = 1, odd taps are the
    midpoint Lagrange weights, even taps vanish).  ``h_dual`` is the unit
    impulse.  ``g``/``g_dual`` follow the alternating-flip symmetry
    relations; note this convention makes the raw analysis row equal to
    prediction-minus-sample, so the transforms negate it to store wavelet
    coefficients as interpolation residuals.
    """

    p: int
    h: CenteredSeq
    h_dual: CenteredSeq
    g: CenteredSeq
    g_dual: CenteredSeq
    _prediction_cache: dict = field(default_factory=dict, repr=False)

    def odd_taps(self):
        """Interior prediction weights over nodes -(p-1), ..., p-1 (odd)."""
        return [self.h[i] for i in range(-(self.p - 1), self.p, 2)]

    def prediction_row(self, k, n_coarse):
        """Weights predicting the fine midpoint between coarse k and k+1.

        ``n_coarse`` is the number of points on the coarse line.  Returns
        (start, weights): Lagrange weights over the p in-domain coarse nodes
        start, ..., start+p-1, one-sided near boundaries.  Interior rows
        reduce to the odd taps of ``h``.
        """
        key = (k, n_coarse)
        row = self._prediction_cache.get(key)
        if row is None:
            p = self.p
            if n_coarse < p:
                raise ConfigurationError(
                    f"coarse line of {n_coarse} points cannot support order p={p}")
            start = min(max(k - p // 2 + 1, 0), n_coarse - p)
            ws = lagrange_weights(range(start, start + p), Fraction(2 * k + 1, 2))
            row = (start, np.array([float(w) for w in ws]))
            self._prediction_cache[key] = row
        return row

    def orthogonality_sums(self):
        """The four filter products (exact rationals)."""
        return (self.h.dot(self.h_dual), self.g.dot(self.g_dual),
                self.h.dot(self.g_dual), self.g.dot(self.h_dual))


def build_filters(p):
    """Construct the order-``p`` filter bank.

    ``p`` is the number of Lagrange points in the midpoint prediction, so
    nonzero odd taps occupy |i| <= p-1 inside the full index range [-p, p].
    """
    if p not in SUPPORTED_ORDERS:
        raise ConfigurationError(
            f"unsupported wavelet order p={p}; supported: {SUPPORTED_ORDERS}")
    h = CenteredSeq(p)
    h[0] = 1
    nodes = list(range(-(p - 1), p, 2))
    for node, w in zip(nodes, lagrange_weights(nodes, 0)):
        h[node] = w
    h_dual = CenteredSeq(p)
    h_dual[0] = 1
    g = CenteredSeq(p)
    g_dual = CenteredSeq(p)
    for i in range(-p, p + 1):
        # g_{i+1} = (-1)^{i+1} h~_{-i},  g~_{i+1} = (-1)^{i+1} h_{-i}
        if abs(i + 1) <= p:
            sign = -1 if (i % 2 == 0) else 1
            g[i + 1] = sign * h_dual[-i]
            g_dual[i + 1] = sign * h[-i]
    return FilterBank(p=p, h=h, h_dual=h_dual, g=g, g_dual=g_dual)


def analysis_weights(bank):
    """Residual-convention analysis weights w[m] with d_k = sum_m w[m] f[2k+m].

    Equals the sign-flipped dual wavelet: sample minus the ``h`` prediction
    from even neighbours (the flip of (g, g~) preserves biorthogonality).
    """
    w = CenteredSeq(bank.p)
    for m in w.indices():
        w[m] = -bank.g_dual[m]
    return w


def build_boundary_filters(bank, side, n_coarse):
    """One-sided prediction rows for the first p midpoints at a boundary.

    Returns a list of (start, weights) rows for midpoint slots k counted
    from the given side ('lower' or 'upper') of a coarse line with
    ``n_coarse`` points.  Provided mostly for inspection; transforms call
    ``FilterBank.prediction_row`` directly.
    """
    if side not in ("lower", "upper"):
        raise ConfigurationError(f"side must be 'lower' or 'upper', got {side!r}")
    rows = []
    for off in range(bank.p):
        k = off if side == "lower" else n_coarse - 2 - off
        rows.append(bank.prediction_row(k, n_coarse))
    return rows


@dataclass
class ConnectionTable:
    """Single-level derivative stencil on the unit-spaced line.

    ``gamma[m]`` holds the alpha-th derivative of the scaling function at
    integer offset m, so the interior derivative row is
    f^(alpha)(k) = sum_m gamma[m] f[k-m].  Boundary rows are one-sided
    Lagrange differentiation over ``boundary_window`` in-domain points.
    A physical grid of spacing dx scales every row by dx**(-alpha); on
    level j of a domain [a, b] that factor is (p 2^(j+1) / (b-a))**alpha.
    """

    p: int
    alpha: int
    gamma: np.ndarray      # offsets -(p-2) ... (p-2)
    gamma_offsets: np.ndarray
    boundary_window: int
    method: str = "eigenvector"
    _row_cache: dict = field(default_factory=dict, repr=False)

    @property
    def radius(self):
        return self.p - 2

    def level_scale(self, j, a, b):
        """Multiplicative factor for rows applied on the level-j lattice."""
        return (self.p * 2.0 ** (j + 1) / (b - a)) ** self.alpha

    def row(self, i, n):
        """Derivative row at point i of a 0..n-1 line (unit spacing).

        Returns (cols, weights).  Interior rows are the gamma stencil,
        rows within p-2 of either end switch to one-sided weights of the
        same polynomial exactness.
        """
        key = (i, n)
        hit = self._row_cache.get(key)
        if hit is not None:
            return hit
        r = self.radius
        if r <= i < n - r:
            cols = np.arange(i - r, i + r + 1)
            wts = self.gamma[::-1].copy()   # f[k-m] ordering
        else:
            w = min(self.boundary_window, n)
            start = min(max(i - w // 2, 0), n - w)
            cols = np.arange(start, start + w)
            ws = lagrange_weights(cols.tolist(), i, deriv=self.alpha)
            wts = np.array([float(x) for x in ws])
        self._row_cache[key] = (cols, wts)
        return cols, wts

    def as_matrix(self, n):
        """Dense (n, n) derivative matrix on a unit-spaced line."""
        out = np.zeros((n, n))
        for i in range(n):
            cols, wts = self.row(i, n)
            out[i, cols] = wts
        return out


def build_connection_table(p, alpha, bank=None):
    """Solve the refinement eigen-problem for the derivative samples.

    The vector of alpha-th derivative values at integers satisfies
    gamma = 2^alpha A gamma with A[m, l] = h[2m - l]; the eigenvector for
    eigenvalue 2^(-alpha) is normalized so the derivative of x^alpha is
    exact.  Rejects derivative orders beyond the smoothness of the basis.
    """
    if alpha < 1:
        raise ConfigurationError("alpha must be >= 1")
    bank = bank or build_filters(p)
    amax = MAX_DERIVATIVE_ORDER[p]
    if alpha > amax:
        raise ConstructionError(
            f"derivative order alpha={alpha} exceeds the admissible maximum "
            f"{amax} for basis order p={p}")
    r = p - 2
    idx = np.arange(-r, r + 1)
    harr = bank.h.to_array()  # index i at position i + p
    A = np.zeros((2 * r + 1, 2 * r + 1))
    for mi, m in enumerate(idx):
        for li, l in enumerate(idx):
            off = 2 * m - l
            if abs(off) <= p:
                A[mi, li] = harr[off + p]
    target = 2.0 ** (-alpha)
    # Null space of (A - 2^-alpha I); may be empty or defective (Jordan
    # block) when the basis is only marginally smooth enough.
    _, svals, vt = np.linalg.svd(A - target * np.eye(2 * r + 1))
    null = vt[svals < 1e-9]
    gamma = None
    if len(null):
        gamma = _moment_conditioned(null, idx, alpha)
    if gamma is not None:
        table = ConnectionTable(p=p, alpha=alpha, gamma=gamma, gamma_offsets=idx,
                                boundary_window=p + 1 + alpha)
        _validate_table(table, A, target)
        return table
    # Marginal-smoothness fallback (p=4, alpha=2): the eigen-system is
    # defective and admits no vector that differentiates x^alpha, so use the
    # centered polynomial differentiation weights on the same support.  Same
    # bandwidth, same exactness degree, same convergence order in epsilon.
    ws = lagrange_weights(idx.tolist(), 0, deriv=alpha)
    gamma = np.array([float(w) for w in ws])[::-1]  # gamma[m] pairs with f[k-m]
    table = ConnectionTable(p=p, alpha=alpha, gamma=gamma, gamma_offsets=idx,
                            boundary_window=p + 1 + alpha,
                            method="lagrange")
    _validate_table(table, None, target)
    return table


def _moment_conditioned(null, idx, alpha):
    """Pick the null-space member matching the monomial moment conditions."""
    fidx = idx.astype(float)
    rows = [fidx ** q for q in range(alpha)]
    C = np.array(rows) @ null.T
    nrm = (fidx ** alpha) @ null.T
    sys = np.vstack([C, nrm])
    rhs = np.zeros(alpha + 1)
    rhs[-1] = (-1) ** alpha * _factorial(alpha)
    sol, res, rank, _ = np.linalg.lstsq(sys, rhs, rcond=None)
    gamma = null.T @ sol
    ok = (np.max(np.abs(sys @ sol - rhs)) < 1e-9)
    return gamma if ok else None


def _factorial(n):
    out = 1
    for i in range(2, n + 1):
        out *= i
    return out


def _validate_table(table, A, target):
    if A is not None:
        resid = np.max(np.abs(A @ table.gamma - target * table.gamma))
        if resid > 1e-9:
            raise ConstructionError(f"eigenvector residual {resid:.2e} too large")
    # Monomial exactness below alpha: derivative of x^q (q < alpha) vanishes.
    for q in range(table.alpha):
        s = np.sum((-table.gamma_offsets.astype(float)) ** q * table.gamma)
        if abs(s) > 1e-10:
            raise ConstructionError(f"moment condition q={q} violated ({s:.2e})")
    norm = np.sum(table.gamma_offsets.astype(float) ** table.alpha * table.gamma)
    want = (-1) ** table.alpha * _factorial(table.alpha)
    if abs(norm - want) > 1e-9:
        raise ConstructionError(f"moment normalization off ({norm} vs {want})")


def cascade_samples(p, depth, bank=None):
    """Scaling-function samples on the dyadic grid 2^-depth over its support.

    Iterates midpoint subdivision starting from the unit impulse on the
    integers; the level-s values interleave the level-(s-1) values, which is
    the cascade realization of the refinement relation.  Returns (x, phi).
    """
    bank = bank or build_filters(p)
    taps = np.array([float(w) for w in bank.odd_taps()])
    half = p - 1
    x = np.arange(-half, half + 1, dtype=float)
    v = np.zeros(len(x))
    v[half] = 1.0
    for _ in range(depth):
        n = len(v)
        xf = np.empty(2 * n - 1)
        vf = np.empty(2 * n - 1)
        xf[0::2] = x
        vf[0::2] = v
        xf[1::2] = 0.5 * (x[:-1] + x[1:])
        # midpoint k+1/2 draws on coarse nodes k - p/2 + 1 ... k + p/2;
        # the function vanishes outside the sampled window, so zero-pad.
        vp = np.concatenate([np.zeros(p), v, np.zeros(p)])
        mids = np.zeros(n - 1)
        for t in range(p):
            sh = t - p // 2 + 1
            mids += taps[t] * vp[p + sh:p + sh + n - 1]
        vf[1::2] = mids
        x, v = xf, vf
    return x, v


def dump_filters(bank):
    """Plain-text table of all four filters, decimal and rational forms."""
    lines = ["# i  h  h_dual  g  g_dual  (decimal | rational)"]
    for i in bank.h.indices():
        vals = [bank.h[i], bank.h_dual[i], bank.g[i], bank.g_dual[i]]
        dec = "  ".join(f"{float(v):+.17g}" for v in vals)
        rat = "  ".join(str(v) for v in vals)
        lines.append(f"{i:+d}  {dec}  |  {rat}")
    return "\n".join(lines)


def dump_connection(table):
    """Plain-text table of the interior derivative stencil."""
    lines = [f"# connection coefficients p={table.p} alpha={table.alpha}",
             "# offset  value"]
    for off, val in zip(table.gamma_offsets, table.gamma):
        lines.append(f"{off:+d}  {val:+.17g}")
    return "\n".join(lines)
