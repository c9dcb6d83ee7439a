"""Index algebra and sorted sparse point sets.

Every collocation point is identified by a triple (level j, type lambda,
translation k) and equivalently by integer coordinates on the finest dyadic
lattice of a run: with maximum depth J, direction i of the domain carries
p * 2**(J+1) + 1 lattice positions and a level-j point of type bit b sits at
q_i = (2 k_i + b) * 2**(J-j).  All level / type / translation bookkeeping is
exact integer arithmetic on these q coordinates; physical coordinates are
derived views.

Point sets are stored as sorted int64 keys (lexicographic in the physical
coordinate tuple), which makes membership a binary search, iteration
deterministic, and bulk insertion a merge.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, LatticeError


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box [a_i, b_i]^N, N in {1, 2, 3}."""

    a: tuple
    b: tuple

    def __post_init__(self):
        if len(self.a) != len(self.b) or not 1 <= len(self.a) <= 3:
            raise ConfigurationError("domain must have 1, 2, or 3 directions")
        if not all(lo < hi for lo, hi in zip(self.a, self.b)):
            raise ConfigurationError("domain requires a_i < b_i")

    @property
    def ndim(self):
        return len(self.a)

    def lengths(self):
        return np.array(self.b) - np.array(self.a)


@dataclass(frozen=True)
class WaveletIndex:
    """(level, type, translation) triple; lam bit i flags a wavelet factor."""

    j: int
    lam: int
    k: tuple

    def bits(self, ndim):
        return tuple((self.lam >> i) & 1 for i in range(ndim))


class LatticeSpec:
    """Shared integer-lattice context: domain, order p, and depth cap J."""

    def __init__(self, dom, p, J):
        if J < 1:
            raise ConfigurationError("J must be >= 1")
        self.dom = dom
        self.p = p
        self.J = J
        self.ndim = dom.ndim
        self.size = p * 2 ** (J + 1) + 1          # positions per direction
        self.step = np.asarray(dom.lengths(), dtype=float) / (self.size - 1)

    # -- key packing -------------------------------------------------------
    def encode(self, q):
        """Pack integer coordinates (n, N) into lexicographic int64 keys."""
        q = np.asarray(q, dtype=np.int64)
        if q.ndim == 1:
            q = q[None, :]
        key = q[:, 0].copy()
        for i in range(1, self.ndim):
            key = key * self.size + q[:, i]
        return key

    def decode(self, keys):
        """Unpack keys into integer coordinates of shape (n, N)."""
        keys = np.asarray(keys, dtype=np.int64)
        out = np.empty((len(keys), self.ndim), dtype=np.int64)
        rem = keys.copy()
        for i in reversed(range(1, self.ndim)):
            out[:, i] = rem % self.size
            rem //= self.size
        out[:, 0] = rem
        return out

    # -- level / type / translation ----------------------------------------
    def component_levels(self, q):
        """Per-direction minimal levels j_i (Eq-style: smallest dividing scale)."""
        q = np.asarray(q, dtype=np.int64)
        low = q & -q
        tz = np.full(q.shape, self.J + 1, dtype=np.int64)
        nz = q != 0
        tz[nz] = np.log2(low[nz]).astype(np.int64)
        return np.maximum(1, self.J - tz)

    def levels(self, q):
        """Point level j = max over directions of the per-direction levels."""
        return self.component_levels(q).max(axis=1)

    def lam_k(self, q, j=None):
        """Type bits and translations at the point's own level."""
        q = np.asarray(q, dtype=np.int64)
        if j is None:
            j = self.levels(q)
        shift = (self.J - j).astype(np.int64)
        scaled = q >> shift[:, None]
        bits = scaled & 1
        k = scaled >> 1
        lam = np.zeros(len(q), dtype=np.int64)
        for i in range(self.ndim):
            lam |= bits[:, i] << i
        return lam, k

    def q_of_index(self, idx):
        """Integer coordinates of a WaveletIndex."""
        self.validate_index(idx)
        bits = idx.bits(self.ndim)
        return np.array([(2 * k + b) * 2 ** (self.J - idx.j)
                         for k, b in zip(idx.k, bits)], dtype=np.int64)

    def index_of_q(self, q):
        """WaveletIndex of a single integer coordinate vector."""
        q = np.asarray(q, dtype=np.int64)[None, :]
        j = int(self.levels(q)[0])
        lam, k = self.lam_k(q, np.array([j]))
        return WaveletIndex(j=j, lam=int(lam[0]), k=tuple(int(v) for v in k[0]))

    def validate_index(self, idx):
        if not 1 <= idx.j <= self.J:
            raise ConfigurationError(f"level {idx.j} outside [1, {self.J}]")
        if idx.lam == 0 and idx.j != 1:
            raise ConfigurationError("lambda = 0 exists only on level 1")
        if not 0 <= idx.lam < 2 ** self.ndim:
            raise ConfigurationError(f"lambda {idx.lam} outside [0, {2**self.ndim - 1}]")
        for k, b in zip(idx.k, idx.bits(self.ndim)):
            hi = self.p * 2 ** idx.j - (1 if b else 0)
            if not 0 <= k <= hi:
                raise ConfigurationError(
                    f"translation {k} outside [0, {hi}] for level {idx.j}")

    # -- physical coordinates ------------------------------------------------
    def coords_of_q(self, q):
        q = np.asarray(q, dtype=np.int64)
        return np.asarray(self.dom.a) + q * self.step

    def q_of_coords(self, x, tol=1e-8):
        """Integer coordinates of physical points; LatticeError off-lattice."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        qf = (x - np.asarray(self.dom.a)) / self.step
        q = np.rint(qf).astype(np.int64)
        err = np.max(np.abs(qf - q))
        if err > tol * (self.size - 1):
            bad = np.unravel_index(np.argmax(np.abs(qf - q)), qf.shape)[0]
            nearest = self.coords_of_q(np.clip(q[bad], 0, self.size - 1))
            raise LatticeError(
                f"coordinate {x[bad]} is off the level-{self.J} lattice; "
                f"nearest lattice point {nearest}", nearest=nearest)
        if np.any(q < 0) or np.any(q > self.size - 1):
            raise LatticeError(f"coordinate outside the domain: {x[np.argmax(np.any((q < 0) | (q > self.size - 1), axis=1))]}")
        return q


def index_to_coord(idx, dom, p, J=None):
    """Physical coordinates of a wavelet index (exact lattice placement)."""
    spec = LatticeSpec(dom, p, J if J is not None else max(idx.j, 1))
    return spec.coords_of_q(spec.q_of_index(idx))

def coord_to_index(x, dom, p, j_max):
    """Inverse mapping: level first (minimal dividing scale), then type, then k."""
    spec = LatticeSpec(dom, p, j_max)
    q = spec.q_of_coords(np.asarray(x, dtype=float))[0]
    return spec.index_of_q(q)

def index_to_global(idx, p):
    """Per-direction global index m_i = k_i + bit_i * (p 2^j + 1)."""
    ndim = len(idx.k)
    return tuple(k + b * (p * 2 ** idx.j + 1)
                 for k, b in zip(idx.k, idx.bits(ndim)))


class SparsePointSet:
    """Sorted, duplicate-free collection of lattice points.

    Thin wrapper over a sorted int64 key array; all bulk operations are
    merges / binary searches, so iteration order is deterministic
    (lexicographic in physical coordinates).
    """

    def __init__(self, spec, keys=None):
        self.spec = spec
        self.keys = np.asarray(keys if keys is not None else [], dtype=np.int64)

    def __len__(self):
        return len(self.keys)

    def __iter__(self):
        q = self.spec.decode(self.keys)
        for row in q:
            yield self.spec.index_of_q(row)

    def copy(self):
        return SparsePointSet(self.spec, self.keys.copy())

    def contains(self, keys):
        keys = np.asarray(keys, dtype=np.int64)
        pos = np.searchsorted(self.keys, keys)
        pos = np.clip(pos, 0, len(self.keys) - 1) if len(self.keys) else pos
        if not len(self.keys):
            return np.zeros(keys.shape, dtype=bool)
        return self.keys[pos] == keys

    def slots(self, keys, strict=True):
        """Positions of the given keys in the sorted array."""
        keys = np.asarray(keys, dtype=np.int64)
        pos = np.searchsorted(self.keys, keys)
        if strict:
            ok = (pos < len(self.keys))
            ok &= self.keys[np.minimum(pos, len(self.keys) - 1)] == keys
            if not np.all(ok):
                missing = keys[~ok]
                raise KeyError(f"{len(missing)} keys absent from point set")
        return pos

    def insert(self, keys):
        """Merged set plus a flag telling whether anything was new."""
        keys = np.unique(np.asarray(keys, dtype=np.int64))
        if not len(keys):
            return self, False
        if not len(self.keys):
            return SparsePointSet(self.spec, keys), True
        fresh = keys[~self.contains(keys)]
        if not len(fresh):
            return self, False
        merged = np.empty(len(self.keys) + len(fresh), dtype=np.int64)
        pos = np.searchsorted(self.keys, fresh)
        mask = np.zeros(len(merged), dtype=bool)
        mask[pos + np.arange(len(fresh))] = True
        merged[mask] = fresh
        merged[~mask] = self.keys
        return SparsePointSet(self.spec, merged), True

    def remove(self, keys):
        """Set minus keys; absent keys are flagged, not an error."""
        keys = np.asarray(keys, dtype=np.int64)
        present = self.contains(keys)
        if not np.any(present):
            return self, False
        keep = ~np.isin(self.keys, keys[present])
        return SparsePointSet(self.spec, self.keys[keep]), bool(np.all(present))

    def union(self, other):
        out, _ = self.insert(other.keys)
        return out

    def difference(self, other):
        if not len(self.keys) or not len(other.keys):
            return self.copy()
        keep = ~other.contains(self.keys)
        return SparsePointSet(self.spec, self.keys[keep])

    def levels(self):
        if not len(self.keys):
            return np.zeros(0, dtype=np.int64)
        return self.spec.levels(self.spec.decode(self.keys))

    def per_level_counts(self):
        lv = self.levels()
        return {int(j): int(n) for j, n in zip(*np.unique(lv, return_counts=True))}

    def coords(self):
        return self.spec.coords_of_q(self.spec.decode(self.keys))

    def export_rows(self, fields=None):
        """Snapshot rows: coordinates, j, lambda, k, then field columns."""
        q = self.spec.decode(self.keys)
        j = self.spec.levels(q)
        lam, k = self.spec.lam_k(q, j)
        x = self.spec.coords_of_q(q)
        rows = []
        for n in range(len(self.keys)):
            row = list(x[n]) + [int(j[n]), int(lam[n])] + [int(v) for v in k[n]]
            if fields:
                row += [f[n] for f in fields]
            rows.append(row)
        return rows


def coarse_grid(dom, p, J=1):
    """All level-1 lambda=0 points: the (2p+1)^N base lattice."""
    spec = LatticeSpec(dom, p, J)
    axes = [np.arange(2 * p + 1, dtype=np.int64) * 2 ** spec.J
            for _ in range(spec.ndim)]
    grids = np.meshgrid(*axes, indexing="ij")
    q = np.stack([g.ravel() for g in grids], axis=1)
    keys = np.sort(spec.encode(q))
    return SparsePointSet(spec, keys)


def full_lattice(spec, jmax):
    """Complete dyadic lattice holding every point of level <= jmax."""
    n = spec.p * 2 ** (jmax + 1) + 1
    stride = 2 ** (spec.J - jmax)
    axes = [np.arange(n, dtype=np.int64) * stride for _ in range(spec.ndim)]
    grids = np.meshgrid(*axes, indexing="ij")
    q = np.stack([g.ravel() for g in grids], axis=1)
    return SparsePointSet(spec, np.sort(spec.encode(q)))
