"""Hot loops, each with a numba implementation and a numpy twin.

The public functions dispatch on :func:`fracdisp._accel.resolve_backend`;
pass ``backend="numpy"`` or ``backend="numba"`` to force one path.  Both
paths must agree to round-off; the test-suite checks this.
"""

import numpy as np

from ._accel import njit, resolve_backend

# ---------------------------------------------------------------------------
# pair gathers: kernel matrices from lattice-offset tables
# ---------------------------------------------------------------------------


@njit
def _pair_gather_nb(table, idx, periodic):
    m, dim = idx.shape
    N = table.shape[0]
    out = np.empty((m, m), dtype=table.dtype)
    flat = table.ravel()
    for i in range(m):
        for j in range(m):
            lin = 0
            for d in range(dim):
                off = idx[i, d] - idx[j, d]
                if periodic:
                    off = off % N
                elif off < 0:
                    off = -off
                lin = lin * N + off
            out[i, j] = flat[lin]
    return out


def _pair_gather_np(table, idx, periodic):
    N = table.shape[0]
    off = idx[:, None, :] - idx[None, :, :]
    off = off % N if periodic else np.abs(off)
    return table[tuple(off[..., d] for d in range(idx.shape[1]))]


def pair_gather(table, idx, periodic: bool = False, backend=None):
    """Matrix ``out[i, j] = table[|idx_i - idx_j|]`` (or offsets mod N).

    Parameters
    ----------
    table : ndarray, shape (N,)*dim
        Kernel values indexed by nonnegative lattice offsets.
    idx : int array, shape (m, dim)
        Lattice indices of the nodes.
    periodic : bool
        Use offsets modulo N (circulant kernels) instead of absolute offsets.
    """
    table = np.ascontiguousarray(table)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if resolve_backend(backend) == "numba":
        return _pair_gather_nb(table, idx, periodic)
    return _pair_gather_np(table, idx, periodic)


# ---------------------------------------------------------------------------
# angular averages of radial kernels (l = 0 sector in two dimensions)
# ---------------------------------------------------------------------------


@njit
def _angular_average_nb(r, s, d0, dd, table, cos_nodes, weights):
    nr, ns, nq = r.shape[0], s.shape[0], cos_nodes.shape[0]
    nt = table.shape[0]
    out = np.zeros((nr, ns), dtype=np.complex128)
    for i in range(nr):
        for j in range(ns):
            acc = 0.0 + 0.0j
            a = r[i] * r[i] + s[j] * s[j]
            b = 2.0 * r[i] * s[j]
            for q in range(nq):
                d = np.sqrt(max(a - b * cos_nodes[q], 0.0))
                x = (d - d0) / dd
                k = int(x)
                if k < 0:
                    k = 0
                if k > nt - 2:
                    k = nt - 2
                f = x - k
                acc += weights[q] * ((1.0 - f) * table[k] + f * table[k + 1])
            out[i, j] = acc
    return out


def _angular_average_np(r, s, d0, dd, table, cos_nodes, weights, chunk=64):
    nt = table.shape[0]
    out = np.empty((r.shape[0], s.shape[0]), dtype=np.complex128)
    for start in range(0, r.shape[0], chunk):
        rr = r[start:start + chunk, None, None]
        d = np.sqrt(np.maximum(rr ** 2 + s[None, :, None] ** 2
                               - 2 * rr * s[None, :, None] * cos_nodes[None, None, :], 0.0))
        x = (d - d0) / dd
        k = np.clip(x.astype(np.int64), 0, nt - 2)
        f = x - k
        vals = (1 - f) * table[k] + f * table[k + 1]
        out[start:start + chunk] = vals @ weights
    return out


def angular_average(r, s, d0, dd, table, cos_nodes, weights, backend=None):
    """Average of a tabulated radial kernel over relative angles.

    Returns ``A[i, j] = sum_q w_q k(sqrt(r_i^2 + s_j^2 - 2 r_i s_j c_q))``
    where ``k`` is linearly interpolated from ``table`` sampled at
    ``d0 + m*dd``.
    """
    args = (np.ascontiguousarray(r, dtype=float), np.ascontiguousarray(s, dtype=float),
            float(d0), float(dd), np.ascontiguousarray(table, dtype=np.complex128),
            np.ascontiguousarray(cos_nodes, dtype=float), np.ascontiguousarray(weights, dtype=float))
    if resolve_backend(backend) == "numba":
        return _angular_average_nb(*args)
    return _angular_average_np(*args)


# ---------------------------------------------------------------------------
# matrix-free Riesz potential on a point cloud
# ---------------------------------------------------------------------------


@njit
def _riesz_apply_nb(coords, fw, C, p, diag):
    m, dim = coords.shape
    out = np.zeros(m, dtype=np.float64)
    for i in range(m):
        acc = diag * fw[i]
        for j in range(m):
            if j == i:
                continue
            d2 = 0.0
            for k in range(dim):
                t = coords[i, k] - coords[j, k]
                d2 += t * t
            acc += C * d2 ** (0.5 * p) * fw[j]
        out[i] = acc
    return out


def _riesz_apply_np(coords, fw, C, p, diag, chunk=256):
    m = coords.shape[0]
    out = np.empty(m)
    for start in range(0, m, chunk):
        diff = coords[start:start + chunk, None, :] - coords[None, :, :]
        d2 = np.sum(diff * diff, axis=-1)
        with np.errstate(divide="ignore"):
            k = C * d2 ** (0.5 * p)
        rows = np.arange(start, min(start + chunk, m))
        k[rows - start, rows] = diag
        out[start:start + chunk] = k @ fw
    return out


def riesz_apply(coords, fw, C, p, diag, backend=None):
    """``out_i = diag*fw_i + sum_{j != i} C |x_i - x_j|^p fw_j`` (real data)."""
    coords = np.ascontiguousarray(coords, dtype=float)
    if coords.ndim == 1:
        coords = coords[:, None]
    fw = np.ascontiguousarray(fw, dtype=float)
    if resolve_backend(backend) == "numba":
        return _riesz_apply_nb(coords, fw, float(C), float(p), float(diag))
    return _riesz_apply_np(coords, fw, float(C), float(p), float(diag))


# ---------------------------------------------------------------------------
# Stone-formula accumulation
# ---------------------------------------------------------------------------


@njit
def _stone_accumulate_nb(acc, coef, mat):
    nt = coef.shape[0]
    m1, m2 = mat.shape
    for k in range(nt):
        c = coef[k]
        for i in range(m1):
            for j in range(m2):
                acc[k, i, j] += c * mat[i, j]


def stone_accumulate(acc, coef, mat, backend=None):
    """In place ``acc[k] += coef[k] * mat`` for every time index k."""
    if resolve_backend(backend) == "numba":
        _stone_accumulate_nb(acc, np.ascontiguousarray(coef, dtype=np.complex128),
                             np.ascontiguousarray(mat, dtype=np.complex128))
    else:
        acc += coef[:, None, None] * mat[None, :, :]
    return acc
