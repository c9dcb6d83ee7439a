"""Forward and backward wavelet transforms, thresholding, pointwise ops.

Transforms are realized matrix-free as per-level, per-direction lifting
passes: a wavelet coefficient is the sample minus the order-p interpolation
from the next-coarser lattice (one-sided near boundaries), which makes the
forward/backward pair exactly inverse for any prediction weights.

Two executions of the same passes exist: a dense path on complete-lattice
ndarrays (verification oracles, initial projection on small grids) and a
sparse path driven by a TransformPlan over a sorted point set.  The sparse
plan augments the active points with the transitive closure of prediction
stencils ("ghost" slots, zero coefficients), so reconstruction at any active
point equals the thresholded-field value exactly.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, PhysicsEvaluationError, StencilIncompleteError
from .geometry import SparsePointSet

__all__ = [
    "SparseField", "dense_fwt", "dense_bwt", "TransformPlan",
    "sparse_fwt", "sparse_bwt", "threshold", "pointwise_nonlinear",
    "field_sup_norm",
]


@dataclass
class SparseField:
    """One scalar unknown: coefficients over a sparse point set."""

    name: str
    pts: SparsePointSet
    coeffs: np.ndarray
    epsilon: float
    epsilon_mode: str = "absolute"

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if len(self.coeffs) != len(self.pts):
            raise ConfigurationError("coefficient array does not match point set")

    def copy(self):
        return replace(self, coeffs=self.coeffs.copy(), pts=self.pts.copy())

    def effective_epsilon(self, plan=None):
        if self.epsilon_mode == "absolute":
            return self.epsilon
        return self.epsilon * field_sup_norm(self, plan)


# ---------------------------------------------------------------------------
# dense transforms on complete lattices
# ---------------------------------------------------------------------------

def _dense_jmax(shape, p):
    n = shape[0]
    if any(s != n for s in shape):
        raise ConfigurationError("dense transforms require equal extents")
    q = (n - 1) // (2 * p)
    jmax = int(round(np.log2(q))) if q >= 1 else -1
    if jmax < 0 or n != p * 2 ** (jmax + 2) // 2 + 1:
        raise ConfigurationError(
            f"extent {n} is not p*2^(j+1)+1 for p={p}")
    return jmax


def _pred_gather(bank, n_coarse):
    """(src, w): index matrix and weights predicting all midpoints of a line."""
    src = np.empty((n_coarse - 1, bank.p), dtype=np.int64)
    wts = np.empty((n_coarse - 1, bank.p))
    for k in range(n_coarse - 1):
        start, w = bank.prediction_row(k, n_coarse)
        src[k] = np.arange(start, start + bank.p)
        wts[k] = w
    return src, wts


def _lift_axis_dense(arr, axis, stride, bank, forward):
    """One lifting pass along ``axis`` of the level cube (all axes strided)."""
    cube = arr[tuple(slice(None, None, stride) for _ in range(arr.ndim))]
    view = np.moveaxis(cube, axis, 0)
    even = view[0::2]
    odd = view[1::2]
    src, wts = _pred_gather(bank, even.shape[0])
    shape = (wts.shape[0],) + (1,) * (arr.ndim - 1)
    pred = np.zeros_like(odd)
    for t in range(bank.p):
        pred += wts[:, t].reshape(shape) * even[src[:, t]]
    if forward:
        odd -= pred
    else:
        odd += pred


def dense_fwt(values, bank):
    """Forward transform of a complete lattice; coefficients stay in place.

    The input spans every point of level <= jmax; each slot ends up holding
    the coefficient of its own (j, lambda, k) index.
    """
    out = np.array(values, dtype=float, copy=True)
    jmax = _dense_jmax(out.shape, bank.p)
    for j in range(jmax, 0, -1):
        stride = 2 ** (jmax - j)
        for axis in range(out.ndim):
            _lift_axis_dense(out, axis, stride, bank, forward=True)
    return out


def dense_bwt(coeffs, bank):
    """Backward transform: exact inverse of :func:`dense_fwt`."""
    out = np.array(coeffs, dtype=float, copy=True)
    jmax = _dense_jmax(out.shape, bank.p)
    for j in range(1, jmax + 1):
        stride = 2 ** (jmax - j)
        for axis in reversed(range(out.ndim)):
            _lift_axis_dense(out, axis, stride, bank, forward=False)
    return out


# ---------------------------------------------------------------------------
# sparse transforms over point sets
# ---------------------------------------------------------------------------

class TransformPlan:
    """Compiled lifting schedule for one point set.

    Holds the workspace keys (active points plus prediction-closure ghosts)
    and, per (level, direction), the target slots, source slot matrix and
    weight matrix of the lifting pass.  Building the plan is the only place
    the closure is computed; transforms are then pure vectorized gathers.
    """

    def __init__(self, spec, keys, bank):
        self.spec = spec
        self.bank = bank
        self.ws_keys, self.passes = _build_passes(spec, np.asarray(keys, np.int64), bank)
        self.n_ws = len(self.ws_keys)

    def slots_of(self, keys):
        pos = np.searchsorted(self.ws_keys, keys)
        if np.any(pos >= self.n_ws) or np.any(self.ws_keys[np.minimum(pos, self.n_ws - 1)] != keys):
            raise StencilIncompleteError("keys missing from transform workspace")
        return pos

    def scatter(self, pts, values, nfields=None):
        """Spread per-point arrays onto the workspace (ghosts get zero)."""
        values = np.asarray(values, dtype=float)
        cols = values.shape[1] if values.ndim == 2 else None
        out = np.zeros((self.n_ws,) + ((cols,) if cols else ()), dtype=float)
        out[self.slots_of(pts.keys)] = values
        return out


def _build_passes(spec, keys, bank):
    p, J, ndim = spec.p, spec.J, spec.ndim
    keys = np.unique(keys)
    q = spec.decode(keys)
    lv = spec.levels(q)
    jtop = int(lv.max()) if len(lv) else 1
    # closure sweep: per level high->low, per direction, add missing sources
    for j in range(jtop, 0, -1):
        scale = 2 ** (J - j)
        changed = True
        while changed:
            changed = False
            q = spec.decode(keys)
            lv = spec.levels(q)
            at_level = q[lv == j]
            if not len(at_level):
                break
            for axis in range(ndim):
                odd = (at_level[:, axis] >> (J - j)) & 1 == 1
                tq = at_level[odd]
                if not len(tq):
                    continue
                src_keys = _pass_source_keys(spec, tq, axis, j, bank)
                pos = np.searchsorted(keys, src_keys)
                pos = np.minimum(pos, len(keys) - 1)
                missing = src_keys[keys[pos] != src_keys]
                if len(missing):
                    keys = np.unique(np.concatenate([keys, missing]))
                    changed = True
    # compile pass tables against the frozen workspace
    q = spec.decode(keys)
    lv = spec.levels(q)
    passes = {}
    for j in range(1, int(lv.max()) + 1 if len(lv) else 2):
        sel = lv == j
        at_level = q[sel]
        slot_of_level = np.where(sel)[0]
        for axis in range(ndim):
            odd = (at_level[:, axis] >> (J - j)) & 1 == 1
            tq = at_level[odd]
            if not len(tq):
                continue
            tgt = slot_of_level[odd]
            src_keys, wts = _pass_source_keys(spec, tq, axis, j, bank, with_weights=True)
            src = np.searchsorted(keys, src_keys)
            if np.any(keys[np.minimum(src, len(keys) - 1)] != src_keys):
                raise StencilIncompleteError("closure construction incomplete")
            passes[(j, axis)] = (tgt.astype(np.int64), src.astype(np.int64), wts)
    return keys, passes


def _pass_source_keys(spec, tq, axis, j, bank, with_weights=False):
    """Keys (and weights) of the p prediction sources per target point."""
    J, p = spec.J, spec.p
    n_coarse = p * 2 ** j + 1
    kpos = (tq[:, axis] >> (J - j + 1))
    starts = np.empty(len(tq), dtype=np.int64)
    wts = np.empty((len(tq), p))
    for n, kk in enumerate(kpos):
        s, w = bank.prediction_row(int(kk), n_coarse)
        starts[n] = s
        wts[n] = w
    nodes = starts[:, None] + np.arange(p)[None, :]
    src_q = np.repeat(tq[:, None, :], p, axis=1)
    src_q[:, :, axis] = nodes << (J - j + 1)
    flat = src_q.reshape(-1, spec.ndim)
    keyz = spec.encode(flat).reshape(len(tq), p)
    if with_weights:
        return keyz.ravel(), wts
    return keyz.ravel()


def _run_passes(plan, buf, forward):
    levels = sorted({j for j, _ in plan.passes}, reverse=forward)
    ndim = plan.spec.ndim
    for j in levels:
        axes = range(ndim) if forward else reversed(range(ndim))
        for axis in axes:
            entry = plan.passes.get((j, axis))
            if entry is None:
                continue
            tgt, src, wts = entry
            if buf.ndim == 2:
                pred = np.einsum("tp,tpf->tf", wts, buf[src.reshape(wts.shape)])
            else:
                pred = np.einsum("tp,tp->t", wts, buf[src.reshape(wts.shape)])
            if forward:
                buf[tgt] -= pred
            else:
                buf[tgt] += pred
    return buf


def sparse_bwt(plan, ws_coeffs):
    """Coefficients (workspace layout) -> field values at workspace points."""
    return _run_passes(plan, np.array(ws_coeffs, dtype=float, copy=True), forward=False)


def sparse_fwt(plan, ws_values):
    """Field values at workspace points -> coefficients (workspace layout)."""
    return _run_passes(plan, np.array(ws_values, dtype=float, copy=True), forward=True)


def field_values(field, plan=None, bank=None):
    """Values of the (thresholded) field at its own collocation points."""
    plan = plan or TransformPlan(field.pts.spec, field.pts.keys, bank or _bank_of(field))
    ws = plan.scatter(field.pts, field.coeffs)
    vals = sparse_bwt(plan, ws)
    return vals[plan.slots_of(field.pts.keys)]


def field_sup_norm(field, plan=None):
    plan = plan or TransformPlan(field.pts.spec, field.pts.keys, _bank_of(field))
    ws = plan.scatter(field.pts, field.coeffs)
    return float(np.max(np.abs(sparse_bwt(plan, ws)))) if plan.n_ws else 0.0


_BANKS = {}


def _bank_of(field):
    from .basis import build_filters
    p = field.pts.spec.p
    if p not in _BANKS:
        _BANKS[p] = build_filters(p)
    return _BANKS[p]


# ---------------------------------------------------------------------------
# thresholding and pointwise nonlinearities
# ---------------------------------------------------------------------------

def threshold(field, plan=None):
    """Drop wavelet coefficients below the field's threshold.

    Level-1 scaling coefficients are always retained; in relative mode the
    cutoff scales with the current sup-norm of the reconstructed field.
    """
    eps = field.effective_epsilon(plan)
    spec = field.pts.spec
    q = spec.decode(field.pts.keys)
    lv = spec.levels(q)
    lam, _ = spec.lam_k(q, lv)
    keep = (lam == 0) | (np.abs(field.coeffs) >= eps)
    pts = SparsePointSet(spec, field.pts.keys[keep])
    return replace(field, pts=pts, coeffs=field.coeffs[keep])


def pointwise_nonlinear(fields, fn, out_name=None, plan=None, bank=None):
    """Evaluate ``fn`` on collocation values and re-project.

    All fields must share one point set; the function receives one value
    array per field (workspace layout) and must return one array.  Values
    are reconstructed, combined point-wise, and the result transformed
    forward, the standard collocation treatment of nonlinear terms.
    """
    fields = list(fields)
    base = fields[0].pts
    for f in fields[1:]:
        if len(f.pts) != len(base) or not np.array_equal(f.pts.keys, base.keys):
            raise ConfigurationError("pointwise operation requires a shared point set")
    plan = plan or TransformPlan(base.spec, base.keys, bank or _bank_of(fields[0]))
    vals = [sparse_bwt(plan, plan.scatter(f.pts, f.coeffs)) for f in fields]
    out = np.asarray(fn(*vals), dtype=float)
    bad = ~np.isfinite(out)
    if np.any(bad):
        xy = base.spec.coords_of_q(base.spec.decode(plan.ws_keys[bad]))[0]
        raise PhysicsEvaluationError(f"non-finite value at {xy}")
    coeffs = sparse_fwt(plan, out)[plan.slots_of(base.keys)]
    return SparseField(name=out_name or fields[0].name, pts=base.copy(),
                       coeffs=coeffs, epsilon=fields[0].epsilon,
                       epsilon_mode=fields[0].epsilon_mode)
