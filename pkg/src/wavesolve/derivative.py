"""Multiresolution derivative operators on sparse coefficient sets.

The derivative of a multiresolution interpolant is projected back onto the
basis, so the operator maps coefficients to coefficients.  On a complete
lattice it equals (forward transform) o (single-level connection stencil at
the finest lattice) o (backward transform); expanding that composition per
level pair gives banded one-dimensional blocks

    entry = analysis_row(level j) . subsample . derivative . refine(level r)

whose tensor products over directions are the operator's matrix elements.
Blocks depend only on (p, level pair, component types, per-direction order),
are built once from small sparse matrix products, and are cached; binding an
operator to a concrete point set enumerates the nonzero tensor entries
against the sorted key array and yields a CSR gather that is reused for
every application until the grid changes.

Sources at levels above a target are truncated at the current finest active
level; sources at or below a target's level are exactly the stencil-support
sets the grid construction must materialize.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .basis import build_filters, build_connection_table
from .errors import ConfigurationError, StencilIncompleteError
from .geometry import LatticeSpec, WaveletIndex

__all__ = ["DerivativeOperator", "BoundOperator", "compile_operator",
           "apply_operator", "stencil_support", "dense_operator_matrix"]

_BLOCK_CACHE = {}
_LADDER_CACHE = {}


def _line_size(p, q):
    return p * 2 ** q + 1


def _refine_matrix(bank, q):
    """R_q: values on the level-q line -> values on the level-(q+1) line."""
    key = ("R", bank.p, q)
    hit = _LADDER_CACHE.get(key)
    if hit is not None:
        return hit
    n_c = _line_size(bank.p, q)
    n_f = _line_size(bank.p, q + 1)
    rows, cols, data = [], [], []
    for n in range(n_c):
        rows.append(2 * n)
        cols.append(n)
        data.append(1.0)
    for k in range(n_c - 1):
        start, w = bank.prediction_row(k, n_c)
        for t in range(bank.p):
            rows.append(2 * k + 1)
            cols.append(start + t)
            data.append(w[t])
    M = sp.csr_matrix((data, (rows, cols)), shape=(n_f, n_c))
    _LADDER_CACHE[key] = M
    return M


def _deriv_matrix(table, q):
    """X_q: unit-spacing connection stencil on the level-q line."""
    key = ("X", table.p, table.alpha, q)
    hit = _LADDER_CACHE.get(key)
    if hit is not None:
        return hit
    n = _line_size(table.p, q)
    rows, cols, data = [], [], []
    for i in range(n):
        cc, ww = table.row(i, n)
        rows.extend([i] * len(cc))
        cols.extend(cc.tolist())
        data.extend(ww.tolist())
    M = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    _LADDER_CACHE[key] = M
    return M


def _prune(M, rel=1e-13):
    M = M.tocsr()
    if M.nnz == 0:
        return M
    cut = rel * max(1.0, np.max(np.abs(M.data)))
    M.data[np.abs(M.data) < cut] = 0.0
    M.eliminate_zeros()
    return M


def block_1d(p, j, t, r, s, a, bank=None, table=None):
    """One-direction factor matrix for (target level j, bit t) from
    (source level r, bit s) at derivative order ``a`` (0 = plain).

    Rows index targets (k on level j), columns index sources (l on level r).
    Unit spacing; physical scaling is applied at bind time.
    """
    key = (p, j, t, r, s, a)
    hit = _BLOCK_CACHE.get(key)
    if hit is not None:
        return hit
    bank = bank or build_filters(p)
    qs = max(j, r) + 1
    # V: source coefficients -> values on the level-qs line
    if s == 0:
        V = sp.identity(_line_size(p, r), format="csr")
        lo = r
    else:
        n_f = _line_size(p, r + 1)
        n_w = p * 2 ** r
        V = sp.csr_matrix(
            (np.ones(n_w), (2 * np.arange(n_w) + 1, np.arange(n_w))),
            shape=(n_f, n_w))
        lo = r + 1
    for q in range(lo, qs):
        V = _refine_matrix(bank, q) @ V
    M = V
    if a:
        table = table or build_connection_table(p, a, bank)
        M = _deriv_matrix(table, qs) @ M
    if qs > j + 1:
        M = M[::2 ** (qs - j - 1)]
    # analysis at level j on the level-(j+1) line
    even = M.tocsr()[0::2]
    if t == 0:
        B = even
    else:
        odd = M.tocsr()[1::2]
        n_c = _line_size(p, j)
        rows, cols, data = [], [], []
        for k in range(n_c - 1):
            start, w = bank.prediction_row(k, n_c)
            rows.extend([k] * p)
            cols.extend(range(start, start + p))
            data.extend(w.tolist())
        P = sp.csr_matrix((data, (rows, cols)), shape=(n_c - 1, n_c))
        B = odd - P @ even
    B = _prune(B)
    _BLOCK_CACHE[key] = B
    return B


@dataclass
class DerivativeOperator:
    """Compiled multiresolution derivative; immutable after construction."""

    p: int
    J: int
    spec: LatticeSpec
    orders: tuple          # per-direction derivative order
    bank: object
    tables: dict           # per-direction ConnectionTable (order >= 1 only)

    @property
    def alpha(self):
        return sum(self.orders)

    @property
    def direction(self):
        live = [i for i, a in enumerate(self.orders) if a]
        return live[0] if len(live) == 1 else tuple(live)

    def block(self, axis, j, t, r, s):
        return block_1d(self.p, j, t, r, s, self.orders[axis],
                        bank=self.bank, table=self.tables.get(axis))

    def axis_scale(self, axis, qs):
        a = self.orders[axis]
        if not a:
            return 1.0
        length = self.spec.dom.b[axis] - self.spec.dom.a[axis]
        return (self.p * 2.0 ** qs / length) ** a


def compile_operator(p, alpha, direction, J, dom):
    """Compile the order-``alpha`` derivative along ``direction``.

    ``direction`` may be an axis index (pure derivative) or a tuple of
    per-direction orders summing to ``alpha`` (mixed derivative, compiled as
    a single operator rather than composed first derivatives).
    """
    spec = LatticeSpec(dom, p, J)
    if isinstance(direction, (tuple, list)):
        orders = tuple(int(v) for v in direction)
        if len(orders) != dom.ndim or sum(orders) != alpha:
            raise ConfigurationError("per-direction orders must sum to alpha")
    else:
        if not 0 <= direction < dom.ndim:
            raise ConfigurationError(f"direction {direction} outside domain")
        orders = tuple(alpha if i == direction else 0 for i in range(dom.ndim))
    bank = build_filters(p)
    tables = {i: build_connection_table(p, a, bank)
              for i, a in enumerate(orders) if a}
    return DerivativeOperator(p=p, J=J, spec=spec, orders=orders,
                              bank=bank, tables=tables)


# ---------------------------------------------------------------------------
# binding an operator to a point set
# ---------------------------------------------------------------------------

def _group_targets(spec, keys):
    """Split slots of a sorted key array by (level, lambda)."""
    q = spec.decode(keys)
    lv = spec.levels(q)
    lam, k = spec.lam_k(q, lv)
    groups = {}
    order = np.lexsort((lam, lv))
    lv_s, lam_s = lv[order], lam[order]
    cuts = np.flatnonzero(np.diff(lv_s) | np.diff(lam_s)) + 1
    for chunk in np.split(order, cuts):
        if len(chunk):
            groups[(int(lv[chunk[0]]), int(lam[chunk[0]]))] = chunk
    return groups, q, lv, lam, k


def _padded_rows(B, rows):
    """CSR row slices as padded (cols, wts) arrays with -1 sentinels."""
    indptr, indices, data = B.indptr, B.indices, B.data
    starts, ends = indptr[rows], indptr[rows + 1]
    counts = ends - starts
    width = int(counts.max()) if len(counts) else 0
    if width == 0:
        return (np.full((len(rows), 0), -1, dtype=np.int64),
                np.zeros((len(rows), 0)))
    offs = np.arange(width)[None, :]
    gather = starts[:, None] + np.minimum(offs, (counts - 1)[:, None])
    valid = offs < counts[:, None]
    cols = np.where(valid, indices[gather], -1).astype(np.int64)
    wts = np.where(valid, data[gather], 0.0)
    return cols, wts


@dataclass
class BoundOperator:
    """A derivative operator frozen against one workspace key array."""

    op: DerivativeOperator
    ws_keys: np.ndarray
    matrix: object           # scipy CSR, ws -> ws
    missing_required: np.ndarray = None

    def apply_ws(self, ws_coeffs):
        return self.matrix @ ws_coeffs


def bind_operator(op, ws_keys, jtop=None, collect_missing=False):
    """Enumerate the operator's nonzero entries over ``ws_keys``.

    Targets are all workspace points; sources outside the workspace are
    treated as zero coefficients except that sources at levels <= the
    target's level are recorded as missing when ``collect_missing`` is set
    (they are exactly the stencil-support points the grid must contain).
    """
    spec = op.spec
    ws_keys = np.asarray(ws_keys, dtype=np.int64)
    groups, q, lv, lam, k = _group_targets(spec, ws_keys)
    if jtop is None:
        jtop = int(lv.max()) if len(lv) else 1
    ndim = spec.ndim
    rows_acc, cols_acc, data_acc = [], [], []
    missing = []
    for (j, lamv), slots in groups.items():
        tbits = [(lamv >> i) & 1 for i in range(ndim)]
        kmat = k[slots]
        for r in range(1, jtop + 1):
            qs = max(j, r) + 1
            scale = 1.0
            for i in range(ndim):
                scale *= op.axis_scale(i, qs)
            betas = range(2 ** ndim) if r == 1 else range(1, 2 ** ndim)
            for beta in betas:
                sbits = [(beta >> i) & 1 for i in range(ndim)]
                per_axis = []
                dead = False
                for i in range(ndim):
                    B = op.block(i, j, tbits[i], r, sbits[i])
                    if B.nnz == 0:
                        dead = True
                        break
                    cc, ww = _padded_rows(B, kmat[:, i])
                    if cc.shape[1] == 0:
                        dead = True
                        break
                    per_axis.append((cc, ww))
                if dead:
                    continue
                rr, cc, dd = _tensor_entries(spec, slots, per_axis, r, sbits,
                                             ws_keys, scale)
                if rr is None:
                    continue
                rows_acc.append(rr)
                cols_acc.append(cc)
                data_acc.append(dd)
                if collect_missing and r <= j:
                    miss = _tensor_missing(spec, per_axis, r, sbits, ws_keys)
                    if len(miss):
                        missing.append(miss)
    n = len(ws_keys)
    if rows_acc:
        rows = np.concatenate(rows_acc)
        cols = np.concatenate(cols_acc)
        data = np.concatenate(data_acc)
        M = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
        M.sum_duplicates()
    else:
        M = sp.csr_matrix((n, n))
    miss_keys = (np.unique(np.concatenate(missing))
                 if missing else np.zeros(0, dtype=np.int64))
    return BoundOperator(op=op, ws_keys=ws_keys, matrix=M,
                         missing_required=miss_keys)


def _source_keys_from_cols(spec, cols_list, r, sbits):
    """Tensor per-axis source columns into lattice keys (−1 cols masked)."""
    ndim = spec.ndim
    T = cols_list[0].shape[0]
    shape = [T] + [c.shape[1] for c in cols_list]
    qsrc = np.empty([len(shape) - 1] + shape, dtype=np.int64)
    for i, c in enumerate(cols_list):
        view = c.reshape([T] + [c.shape[1] if ax == i else 1 for ax in range(ndim)])
        qi = np.where(c >= 0,
                      (2 * c + sbits[i]) << (spec.J - r), -1)
        qi = qi.reshape(view.shape)
        qsrc[i] = np.broadcast_to(qi, shape)
    flat = qsrc.reshape(ndim, -1).T
    ok = np.all(flat >= 0, axis=1)
    keys = np.full(len(flat), -1, dtype=np.int64)
    keys[ok] = spec.encode(flat[ok])
    return keys.reshape(shape), ok.reshape(shape)


def _tensor_entries(spec, slots, per_axis, r, sbits, ws_keys, scale):
    cols_list = [pa[0] for pa in per_axis]
    wts_list = [pa[1] for pa in per_axis]
    keys, ok = _source_keys_from_cols(spec, cols_list, r, sbits)
    T = keys.shape[0]
    w = wts_list[0].reshape([T] + [keys.shape[1] if ax == 0 else 1
                                   for ax in range(spec.ndim)])
    w = np.broadcast_to(w, keys.shape).copy()
    for i in range(1, spec.ndim):
        wi = wts_list[i].reshape([T] + [keys.shape[1 + ax] if ax == i else 1
                                        for ax in range(spec.ndim)])
        w = w * np.broadcast_to(wi, keys.shape)
    w = w * scale
    live = ok & (w != 0.0)
    if not np.any(live):
        return None, None, None
    flat_keys = keys[live]
    pos = np.searchsorted(ws_keys, flat_keys)
    pos = np.minimum(pos, len(ws_keys) - 1)
    hit = ws_keys[pos] == flat_keys
    if not np.any(hit):
        return None, None, None
    tgt = np.broadcast_to(np.asarray(slots).reshape([T] + [1] * spec.ndim),
                          keys.shape)[live]
    return tgt[hit], pos[hit], w[live][hit]


def _tensor_missing(spec, per_axis, r, sbits, ws_keys):
    cols_list = [pa[0] for pa in per_axis]
    wts_list = [pa[1] for pa in per_axis]
    keys, ok = _source_keys_from_cols(spec, cols_list, r, sbits)
    T = keys.shape[0]
    w = wts_list[0].reshape([T] + [keys.shape[1] if ax == 0 else 1
                                   for ax in range(spec.ndim)])
    w = np.broadcast_to(w, keys.shape).copy()
    for i in range(1, spec.ndim):
        wi = wts_list[i].reshape([T] + [keys.shape[1 + ax] if ax == i else 1
                                        for ax in range(spec.ndim)])
        w = w * np.broadcast_to(wi, keys.shape)
    live = ok & (w != 0.0)
    flat = keys[live]
    pos = np.searchsorted(ws_keys, flat)
    pos = np.minimum(pos, len(ws_keys) - 1)
    return flat[ws_keys[pos] != flat]


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def apply_operator(op, fld, check_complete=True):
    """Derivative coefficients of a sparse field (projected onto its set).

    Standalone entry point: binds against the field's own points, verifies
    stencil completeness (sources at levels <= each target's level must be
    present) and returns a SparseField of derivative coefficients.
    """
    from .transforms import SparseField
    bound = bind_operator(op, fld.pts.keys, collect_missing=check_complete)
    if check_complete and len(bound.missing_required):
        idxs = [op.spec.index_of_q(qv)
                for qv in op.spec.decode(bound.missing_required[:20])]
        raise StencilIncompleteError(
            f"{len(bound.missing_required)} stencil sources missing "
            f"(first: {idxs[:5]})", missing=bound.missing_required)
    dcoef = bound.apply_ws(fld.coeffs)
    out = fld.copy()
    out.coeffs = dcoef
    return out


def stencil_support(op, idx, jtop=None):
    """Source indices with nonzero weight for one target, levels <= level(idx).

    Exactly the set the adaptive grid must materialize for this target.
    """
    spec = op.spec
    if isinstance(idx, WaveletIndex):
        qv = spec.q_of_index(idx)
        j = idx.j
    else:
        qv = np.asarray(idx, dtype=np.int64)
        j = int(spec.levels(qv[None, :])[0])
    keys = support_keys_batch(op, np.asarray([spec.encode(qv[None, :])[0]]))
    return [spec.index_of_q(row) for row in spec.decode(keys)]


def support_keys_batch(ops, target_keys):
    """Union of stencil-support keys (levels <= target level) for many targets."""
    if isinstance(ops, DerivativeOperator):
        ops = [ops]
    spec = ops[0].spec
    target_keys = np.asarray(target_keys, dtype=np.int64)
    groups, q, lv, lam, k = _group_targets(spec, target_keys)
    ndim = spec.ndim
    out = []
    for (j, lamv), slots in groups.items():
        tbits = [(lamv >> i) & 1 for i in range(ndim)]
        kmat = k[slots]
        for op in ops:
            for r in range(1, j + 1):
                betas = range(2 ** ndim) if r == 1 else range(1, 2 ** ndim)
                for beta in betas:
                    sbits = [(beta >> i) & 1 for i in range(ndim)]
                    per_axis = []
                    dead = False
                    for i in range(ndim):
                        B = op.block(i, j, tbits[i], r, sbits[i])
                        if B.nnz == 0:
                            dead = True
                            break
                        cc, ww = _padded_rows(B, kmat[:, i])
                        if cc.shape[1] == 0:
                            dead = True
                            break
                        per_axis.append((cc, ww))
                    if dead:
                        continue
                    cols_list = [pa[0] for pa in per_axis]
                    wts_list = [pa[1] for pa in per_axis]
                    keys, ok = _source_keys_from_cols(spec, cols_list, r, sbits)
                    T = keys.shape[0]
                    w = wts_list[0].reshape([T] + [keys.shape[1] if ax == 0 else 1
                                                   for ax in range(ndim)])
                    w = np.broadcast_to(w, keys.shape).copy()
                    for i in range(1, ndim):
                        wi = wts_list[i].reshape(
                            [T] + [keys.shape[1 + ax] if ax == i else 1
                                   for ax in range(ndim)])
                        w = w * np.broadcast_to(wi, keys.shape)
                    live = ok & (w != 0.0)
                    if np.any(live):
                        out.append(np.unique(keys[live]))
    if not out:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.concatenate(out))


def dense_operator_matrix(op, jmax):
    """Dense matrix of the bound operator on the complete level-jmax lattice.

    Small-grid oracle helper: rows/columns ordered like the sorted key
    array of the full lattice.
    """
    from .geometry import full_lattice
    full = full_lattice(op.spec, jmax)
    bound = bind_operator(op, full.keys, jtop=jmax)
    return bound.matrix.toarray(), full
