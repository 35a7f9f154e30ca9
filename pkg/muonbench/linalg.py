"""
Dense-matrix kernels and the exact-decomposition oracle.

Matrices are plain two-dimensional ``numpy`` arrays in row-major order.
Every kernel checks its inputs and refuses non-finite output, so a NaN
never travels silently from one stage of an experiment to the next.
"""
import numpy as np

from .errors import (
    DegenerateInputError,
    NumericError,
    RangeError,
    ShapeError,
)

__all__ = [
    'PRECISIONS',
    'Rng',
    'SvdResult',
    'as_matrix',
    'check_finite',
    'derive_seed',
    'dtype_for',
    'frobenius_norm',
    'inverse_root',
    'matmul',
    'rms',
    'spectral_norm_estimate',
    'svd',
]

PRECISIONS = {'f32': np.float32, 'f64': np.float64}

_SEED_MASK = (1 << 64) - 1


def dtype_for(precision):
    """
    Return the numpy dtype for a precision label (``'f32'`` or ``'f64'``).
    """
    try:
        return PRECISIONS[precision]
    except KeyError:
        raise RangeError("precision must be one of {}, got {!r}".format(
                         sorted(PRECISIONS), precision))


def derive_seed(seed, *keys):
    """
    Derive a child seed from ``seed`` and a sequence of integer keys.

    The derivation goes through ``numpy.random.SeedSequence`` and depends
    only on its arguments, so parallel workers can each derive their own
    stream instead of sharing one.
    """
    entropy = [int(seed) & _SEED_MASK] + [int(k) & _SEED_MASK for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 32) | int(state[1])


class Rng(object):
    '''
    A single-owner random stream.

    The stream is a PCG64 generator seeded from a 64-bit integer, so equal
    seeds give equal streams on every platform. Parallel code must not
    share an ``Rng``; use :meth:`spawn` to split off independent streams.
    '''

    def __init__(self, seed):
        self.seed = int(seed) & _SEED_MASK
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def __repr__(self):
        return "Rng(seed={})".format(self.seed)

    def spawn(self, *keys):
        """
        Return a new, independent ``Rng`` derived from this seed and ``keys``.
        Does not advance this stream.
        """
        return Rng(derive_seed(self.seed, *keys))

    def normal(self, shape, scale=1.0, dtype=np.float64):
        return (scale * self._gen.standard_normal(shape)).astype(dtype, copy=False)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def unit_vector(self, n):
        x = self._gen.standard_normal(n)
        norm = np.linalg.norm(x)
        while norm == 0.0:
            x = self._gen.standard_normal(n)
            norm = np.linalg.norm(x)
        return x / norm


def check_finite(a, what="matrix"):
    """
    Raise :class:`NumericError` if ``a`` holds NaN or Inf.
    """
    if not np.all(np.isfinite(a)):
        raise NumericError("non-finite entries in " + what)
    return a


def as_matrix(a, dtype=None, what="matrix"):
    """
    Validate ``a`` as a Matrix: two-dimensional, nonempty and finite.

    :param a: Anything ``numpy.asarray`` accepts.
    :param dtype: Optional dtype to cast to.
    :param str what: A name for the value, used in error messages.
    :return numpy.ndarray: The validated array (not copied if already
        conforming).
    """
    a = np.asarray(a, dtype=dtype)
    if a.ndim != 2:
        raise ShapeError("{} must be two-dimensional, got shape {}".format(
                         what, a.shape))
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError("{} must be nonempty, got shape {}".format(what, a.shape))
    return check_finite(a, what)


def matmul(a, b):
    """
    The matrix product ``a @ b``.

    :raises ShapeError: If ``a.cols != b.rows``.
    :raises NumericError: If either factor or the product is not finite.
    """
    a = as_matrix(a, what="left factor")
    b = as_matrix(b, what="right factor")
    if a.shape[1] != b.shape[0]:
        raise ShapeError("cannot multiply {} by {}".format(a.shape, b.shape))
    return check_finite(a @ b, "product")


def frobenius_norm(a):
    return float(np.linalg.norm(a))


def rms(a):
    """
    Root-mean-square entry magnitude.
    """
    a = np.asarray(a)
    if a.size == 0:
        return 0.0
    return frobenius_norm(a.reshape(1, -1)) / np.sqrt(a.size)


def spectral_norm_estimate(a, iters, rng):
    """
    Estimate the largest singular value of ``a`` by power iteration on
    ``a^T a`` from an ``rng``-seeded unit vector.

    The estimate is capped by the Frobenius norm, which bounds the spectral
    norm from above.

    :param int iters: Number of power iterations, at least 1.
    :param Rng rng: Source of the starting vector.
    """
    if iters < 1:
        raise RangeError("iters must be at least 1, got {}".format(iters))
    a = as_matrix(a)
    fro = frobenius_norm(a)
    if fro == 0.0:
        return 0.0
    v = rng.unit_vector(a.shape[1])
    sigma = 0.0
    for _ in range(iters):
        u = a @ v
        sigma = float(np.linalg.norm(u))
        if sigma == 0.0:
            break
        v = a.T @ (u / sigma)
        vnorm = np.linalg.norm(v)
        if vnorm == 0.0:
            break
        v /= vnorm
    sigma = float(np.linalg.norm(a @ v))
    return min(sigma, fro)


class SvdResult(object):
    '''
    A thin singular value decomposition ``a = u @ diag(s) @ v.T``.

    Holds
        - ``u``: m x r with orthonormal columns
        - ``singular_values``: length r, nonincreasing and positive
        - ``v``: n x r with orthonormal columns
        - ``rank``: r
        - ``sweeps``: number of Jacobi sweeps that were needed
    '''

    def __init__(self, u, singular_values, v, sweeps=0):
        self.u = u
        self.singular_values = singular_values
        self.v = v
        self.sweeps = sweeps

    @property
    def rank(self):
        return len(self.singular_values)

    @property
    def sigma_max(self):
        return float(self.singular_values[0]) if self.rank else 0.0

    @property
    def sigma_min(self):
        return float(self.singular_values[-1]) if self.rank else 0.0

    def reconstruct(self):
        return (self.u * self.singular_values) @ self.v.T

    def __repr__(self):
        return "SvdResult(shape=({}, {}), rank={}, sweeps={})".format(
               self.u.shape[0], self.v.shape[0], self.rank, self.sweeps)


def _round_robin(n):
    """
    Tournament pairing of ``n`` columns: ``n - 1`` rounds (``n`` if odd) of
    disjoint pairs, together covering every pair exactly once.
    """
    players = list(range(n))
    if n % 2:
        players.append(-1)
    half = len(players) // 2
    rounds = []
    for _ in range(len(players) - 1):
        p = []
        q = []
        for i in range(half):
            x, y = players[i], players[-1 - i]
            if x >= 0 and y >= 0:
                p.append(min(x, y))
                q.append(max(x, y))
        if p:
            rounds.append((np.array(p), np.array(q)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def svd(a, rank_tol=None, max_sweeps=60):
    """
    Thin SVD by one-sided (Hestenes) Jacobi rotations, always computed in
    double precision.

    The rotations act on the columns of the taller orientation of ``a``, so
    the implicit Gram matrix is on the smaller side. Each round rotates a
    set of disjoint column pairs at once; a sweep is one full tournament.

    :param a: The nonzero matrix to decompose.
    :param float rank_tol: Relative truncation threshold: singular values
        ``<= rank_tol * sigma_max`` are dropped. Defaults to
        ``max(m, n) * eps``.
    :param int max_sweeps: Sweeps allowed before giving up.
    :return SvdResult: The truncated decomposition.
    :raises DegenerateInputError: If ``a`` is the zero matrix.
    :raises NumericError: If the rotations have not converged after
        ``max_sweeps`` sweeps.
    """
    a = as_matrix(a, dtype=np.float64)
    m, n = a.shape
    eps = np.finfo(np.float64).eps
    if rank_tol is None:
        rank_tol = max(m, n) * eps
    if rank_tol < 0:
        raise RangeError("rank_tol must be nonnegative, got {}".format(rank_tol))
    scale = frobenius_norm(a)
    if scale == 0.0:
        raise DegenerateInputError("svd of the zero matrix")

    transposed = m < n
    work = a.T.copy() if transposed else a.copy()
    rows, cols = work.shape
    v = np.eye(cols)
    tol = rows * eps
    # columns below this squared norm are numerically zero
    floor = (tol * scale) ** 2
    rounds = _round_robin(cols)

    sweeps = 0
    converged = cols < 2
    while not converged:
        if sweeps >= max_sweeps:
            raise NumericError("svd did not converge after {} sweeps".format(
                               sweeps))
        sweeps += 1
        converged = True
        for p, q in rounds:
            wp = work[:, p]
            wq = work[:, q]
            alpha = np.einsum('ij,ij->j', wp, wp)
            beta = np.einsum('ij,ij->j', wq, wq)
            gamma = np.einsum('ij,ij->j', wp, wq)
            active = ((np.abs(gamma) > tol * np.sqrt(alpha * beta))
                      & (np.minimum(alpha, beta) > floor))
            if not np.any(active):
                continue
            converged = False
            p, q = p[active], q[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            wp, wq = work[:, p], work[:, q]
            work[:, p] = c * wp - s * wq
            work[:, q] = s * wp + c * wq
            vp, vq = v[:, p], v[:, q]
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq

    sigma = np.sqrt(np.einsum('ij,ij->j', work, work))
    order = np.argsort(-sigma, kind='stable')
    sigma = sigma[order]
    keep = sigma > rank_tol * sigma[0]
    sigma = sigma[keep]
    u = work[:, order[keep]] / sigma
    v = v[:, order[keep]]
    if transposed:
        u, v = v, u
    return SvdResult(u, sigma, v, sweeps=sweeps)


def inverse_root(sym, p, pseudo=False, rank_tol=None):
    """
    Inverse ``p``-th root of a symmetric positive semi-definite matrix,
    through its Jacobi SVD (which is its eigendecomposition).

    :param sym: A symmetric PSD matrix.
    :param float p: The root, e.g. 2 for an inverse square root.
    :param bool pseudo: If True, invert only on the numerical range of
        ``sym``; otherwise a rank-deficient input is an error.
    :raises DegenerateInputError: If ``sym`` is singular and ``pseudo`` is
        False.
    """
    sym = as_matrix(sym, dtype=np.float64)
    if sym.shape[0] != sym.shape[1]:
        raise ShapeError("inverse_root needs a square matrix, got {}".format(
                         sym.shape))
    dec = svd(sym, rank_tol=rank_tol)
    if dec.rank < sym.shape[0] and not pseudo:
        raise DegenerateInputError("matrix is singular (rank {} of {})".format(
                                   dec.rank, sym.shape[0]))
    return (dec.u * dec.singular_values ** (-1.0 / p)) @ dec.u.T
