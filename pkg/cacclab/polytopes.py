"""Convex polytopes in halfspace representation, {x : A x <= b}.

This is the small polytope engine behind the invariant set computation. It supports
intersection, affine preimages, erosion by a box disturbance, elimination of a single
trailing input coordinate by Fourier-Motzkin, redundancy removal, and inclusion, equality
and membership tests. Every linear program is solved with scipy's HiGHS backend.

Rows are normalized to unit norm on construction so that tolerances are distances. Rows
whose normal vanishes are dropped when they hold trivially, and turn the polytope into the
canonical empty set otherwise. Polytopes are treated as immutable values: every operation
returns a new object.

Polytopes are cached on disk in a plain text format: a first line "m n", then m lines
holding the n entries of a row of A followed by its offset b.
"""

import numpy as np
from scipy.optimize import linprog

from .src import config as cf
from .src.logger import logging

logger = logging.getLogger("cacclab")

ABS_TOL = 1e-9
ZERO_ROW_TOL = 1e-12

# linprog status codes
_LP_OPTIMAL = 0
_LP_INFEASIBLE = 2
_LP_UNBOUNDED = 3


class Polytope:
    """Polytope {x : A x <= b} of dimension n.

    Parameters
    ----------
    A : array, shape (m, n)
    b : array, shape (m,)
    minrep : bool
        the rows are known to be irredundant
    """

    def __init__(self, A, b, minrep=False):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).ravel()
        if A.shape[0] != b.shape[0]:
            raise cf.DimensionMismatchError(
                f"A has {A.shape[0]} rows but b has {b.shape[0]} entries"
            )
        if not np.all(np.isfinite(A)) or np.any(np.isnan(b)):
            raise ValueError("Polytope coefficients must be finite")
        n = A.shape[1]

        norms = np.linalg.norm(A, axis=1)
        zero = norms <= ZERO_ROW_TOL
        if np.any(b[zero] < -ABS_TOL) or np.any(b == -np.inf):
            A, b = _empty_rows(n)
            minrep = True
        else:
            keep = ~zero & np.isfinite(b)
            A = A[keep] / norms[keep, None]
            b = b[keep] / norms[keep]
        self.A = A
        self.b = b
        self.minrep = minrep
        self._empty = None

    @property
    def dim(self):
        return self.A.shape[1]

    def __len__(self):
        return self.A.shape[0]

    def __repr__(self):
        return f"Polytope(dim={self.dim}, rows={len(self)})"

    def __str__(self):
        return to_text(self)

    def __contains__(self, point):
        return bool(contains(self, point))

    @classmethod
    def from_box(cls, lower, upper):
        """Axis-aligned box; infinite bounds are left out"""
        lower = np.asarray(lower, dtype=float).ravel()
        upper = np.asarray(upper, dtype=float).ravel()
        if lower.shape != upper.shape:
            raise cf.DimensionMismatchError("Box bounds differ in dimension")
        n = lower.size
        eye = np.eye(n)
        A = np.vstack([eye, -eye])
        b = np.concatenate([upper, -lower])
        keep = np.isfinite(b)
        return cls(A[keep], b[keep])

    @classmethod
    def universe(cls, n):
        return cls(np.zeros((0, n)), np.zeros(0), minrep=True)

    @classmethod
    def empty(cls, n):
        A, b = _empty_rows(n)
        return cls(A, b, minrep=True)


def _empty_rows(n):
    # x_1 <= -1 and -x_1 <= -1
    A = np.zeros((2, n))
    A[0, 0] = 1.0
    A[1, 0] = -1.0
    return A, np.array([-1.0, -1.0])


def _check_dims(P, Q):
    if P.dim != Q.dim:
        errmsg = f"Polytope dimensions differ ({P.dim} vs {Q.dim})"
        logger.error(errmsg)
        raise cf.DimensionMismatchError(errmsg)


def _lp_max(c, A, b):
    """Maximize c x subject to A x <= b; returns (status, value)"""
    n = len(c)
    if A.shape[0] == 0:
        return (_LP_OPTIMAL, 0.0) if not np.any(c) else (_LP_UNBOUNDED, np.inf)
    res = linprog(
        -np.asarray(c, dtype=float),
        A_ub=A,
        b_ub=b,
        bounds=[(None, None)] * n,
        method="highs",
    )
    if res.status == _LP_OPTIMAL:
        return _LP_OPTIMAL, -float(res.fun)
    if res.status == _LP_UNBOUNDED:
        return _LP_UNBOUNDED, np.inf
    if res.status == _LP_INFEASIBLE:
        return _LP_INFEASIBLE, -np.inf
    raise RuntimeError(f"Linear program failed: {res.message}")


def support(P, direction):
    """max over x in P of direction . x; +inf if unbounded, -inf if P is empty"""
    return _lp_max(np.asarray(direction, dtype=float), P.A, P.b)[1]


def is_empty(P):
    if P._empty is None:
        if len(P) == 0:
            P._empty = False
        else:
            status, _ = _lp_max(np.zeros(P.dim), P.A, P.b)
            P._empty = status == _LP_INFEASIBLE
    return P._empty


def intersect(P, Q):
    """{x : x in P and x in Q}"""
    _check_dims(P, Q)
    return Polytope(np.vstack([P.A, Q.A]), np.concatenate([P.b, Q.b]))


def affine_preimage(P, M, c=None):
    """{y : M y + c in P}

    Parameters
    ----------
    P : Polytope
        polytope in dimension n
    M : array, shape (n, k)
    c : array, shape (n,), optional
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != P.dim:
        raise cf.DimensionMismatchError(
            f"Map has {M.shape[0]} outputs, polytope has dimension {P.dim}"
        )
    c = np.zeros(P.dim) if c is None else np.asarray(c, dtype=float).ravel()
    return Polytope(P.A @ M, P.b - P.A @ c)


def erode(P, W_lower, W_upper, E):
    """Robust shrink of P against a box disturbance: {x : x + E w in P for all w in W}.

    The support of a box is available in closed form, so each offset becomes
    b_i - sum_j max(g_j lo_j, g_j hi_j) with g = A_i E.
    """
    E = np.atleast_2d(np.asarray(E, dtype=float))
    lo = np.asarray(W_lower, dtype=float).ravel()
    hi = np.asarray(W_upper, dtype=float).ravel()
    if E.shape != (P.dim, lo.size) or lo.shape != hi.shape:
        raise cf.DimensionMismatchError(
            f"Disturbance map of shape {E.shape} does not fit dimension {P.dim} and box {lo.size}"
        )
    if np.any(lo > hi):
        raise ValueError("Disturbance box is empty")
    G = P.A @ E
    shrink = np.maximum(G * lo, G * hi).sum(axis=1)
    return Polytope(P.A, P.b - shrink)


def project_out_input(P_xu, u_lower, u_upper, abs_tol=ABS_TOL):
    """{x : exists u in [u_lower, u_upper] with (x, u) in P_xu}, for a scalar input u stored
    as the last coordinate. Fourier-Motzkin elimination followed by reduce()."""
    if P_xu.dim < 2:
        raise cf.DimensionMismatchError("Need at least one state and one input coordinate")
    if not u_lower <= u_upper:
        raise ValueError(f"Input interval [{u_lower}, {u_upper}] is empty")
    n = P_xu.dim
    e_u = np.zeros(n)
    e_u[-1] = 1.0
    A = np.vstack([P_xu.A, e_u, -e_u])
    b = np.concatenate([P_xu.b, [u_upper, -u_lower]])

    a_u = A[:, -1]
    pos = np.nonzero(a_u > abs_tol)[0]
    neg = np.nonzero(a_u < -abs_tol)[0]
    null = np.nonzero(np.abs(a_u) <= abs_tol)[0]

    rows = [A[null, :-1]]
    offsets = [b[null]]
    if pos.size and neg.size:
        # (-a_k) row_j + a_j row_k cancels u for every pair
        wj = -a_u[neg][None, :, None]
        wk = a_u[pos][:, None, None]
        comb = wj * A[pos][:, None, :] + wk * A[neg][None, :, :]
        comb_b = wj[..., 0] * b[pos][:, None] + wk[..., 0] * b[neg][None, :]
        rows.append(comb[..., :-1].reshape(-1, n - 1))
        offsets.append(comb_b.reshape(-1))
    return reduce(Polytope(np.vstack(rows), np.concatenate(offsets)))


def _dedupe(A, b):
    """Keep only the tightest of parallel rows with equal normals"""
    keep = []
    for i in np.argsort(b, kind="stable"):
        if keep and np.min(np.max(np.abs(A[keep] - A[i]), axis=1)) <= ZERO_ROW_TOL:
            continue
        keep.append(i)
    keep.sort()
    return A[keep], b[keep]


def reduce(P, abs_tol=ABS_TOL):
    """Remove redundant rows, one linear program per candidate row.

    A row is dropped when maximizing it over the remaining active rows, with itself relaxed
    by one unit, does not exceed its own offset by more than `abs_tol`. An unbounded linear
    program keeps the row. Empty polytopes come back as the canonical empty set.
    """
    if P.minrep:
        return P
    if is_empty(P):
        return Polytope.empty(P.dim)
    A, b = _dedupe(P.A, P.b)
    active = np.ones(len(b), dtype=bool)
    for k in range(len(b)):
        active[k] = False
        G = np.vstack([A[active], A[k]])
        h = np.concatenate([b[active], [b[k] + 1.0]])
        status, val = _lp_max(A[k], G, h)
        if status == _LP_UNBOUNDED or (status == _LP_OPTIMAL and val > b[k] + abs_tol):
            active[k] = True
    out = Polytope(A[active], b[active], minrep=True)
    out._empty = False
    return out


def is_subset(P, Q, tol=ABS_TOL):
    """P is contained in Q, checked row by row of Q through the support function of P"""
    _check_dims(P, Q)
    if is_empty(P):
        return True
    for a, b in zip(Q.A, Q.b):
        if support(P, a) > b + tol:
            return False
    return True


def set_equal(P, Q, tol=ABS_TOL):
    return is_subset(P, Q, tol) and is_subset(Q, P, tol)


def contains(P, x, tol=ABS_TOL):
    """Membership of one point (shape (n,)) or many points (shape (k, n))"""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != P.dim:
        raise cf.DimensionMismatchError(
            f"Point of dimension {x.shape[-1]} tested against polytope of dimension {P.dim}"
        )
    if len(P) == 0:
        return np.ones(x.shape[:-1], dtype=bool)[()]
    return np.all(x @ P.A.T <= P.b + tol, axis=-1)[()]


def to_text(P):
    lines = [f"{len(P)} {P.dim}"]
    for a, b in zip(P.A, P.b):
        lines.append(" ".join(f"{v:.17g}" for v in (*a, b)))
    return "\n".join(lines) + "\n"


def from_text(text):
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    try:
        m, n = (int(v) for v in lines[0].split())
        data = np.array([[float(v) for v in ln.split()] for ln in lines[1:]]).reshape(m, n + 1)
    except (IndexError, ValueError) as e:
        raise ValueError(f"Malformed polytope text: {e}") from e
    return Polytope(data[:, :n], data[:, n], minrep=True)


def save(P, path):
    try:
        with open(path, "w") as f:
            f.write(to_text(P))
    except OSError as e:
        raise OSError(f"Could not write polytope {path}: {e}") from e


def load(path):
    try:
        with open(path, "r") as f:
            return from_text(f.read())
    except OSError as e:
        raise OSError(f"Could not read polytope {path}: {e}") from e
