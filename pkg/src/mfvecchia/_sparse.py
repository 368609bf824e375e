"""Sparse symmetric positive definite factorization.

Approximate minimum degree ordering on the quotient graph (the CSparse
formulation), elimination tree, row-subtree symbolic analysis and an
up-looking numeric Cholesky, all compiled with numba.  The symbolic stage is
cached by sparsity pattern, so repeated factorizations of matrices sharing a
pattern (the normal case inside an optimizer loop) only pay for the numeric
stage.
"""
from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numba import njit


class CholeskyFailure(np.linalg.LinAlgError):
    """Raised when a matrix is not numerically positive definite."""


# ---------------------------------------------------------------- ordering


@njit(cache=True)
def _flip(i):
    return -i - 2


@njit(cache=True)
def _wclear(mark, lemax, w, n):
    if mark < 2 or mark + lemax < 0:
        for k in range(n):
            if w[k] != 0:
                w[k] = 1
        mark = 2
    return mark


@njit(cache=True)
def _tdfs(j, k, head, nxt, post, stack):
    top = 0
    stack[0] = j
    while top >= 0:
        p = stack[top]
        i = head[p]
        if i == -1:
            top -= 1
            post[k] = p
            k += 1
        else:
            head[p] = nxt[i]
            top += 1
            stack[top] = i
    return k


@njit(cache=True)
def _amd(n, Cp_in, Ci_in, cnz):
    # Cp_in/Ci_in: symmetric pattern without diagonal, columns 0..n-1.
    dense = max(16, int(10.0 * np.sqrt(n)))
    dense = min(n - 2, dense)
    nzmax = cnz + cnz // 5 + 2 * n
    Ci = np.empty(max(nzmax, 1), dtype=np.int64)
    Ci[:cnz] = Ci_in[:cnz]
    Cp = np.empty(n + 1, dtype=np.int64)
    Cp[:] = Cp_in
    P = np.empty(n + 1, dtype=np.int64)
    ln_ = np.zeros(n + 1, dtype=np.int64)
    nv = np.empty(n + 1, dtype=np.int64)
    nxt = np.empty(n + 1, dtype=np.int64)
    head = np.empty(n + 1, dtype=np.int64)
    elen = np.empty(n + 1, dtype=np.int64)
    degree = np.empty(n + 1, dtype=np.int64)
    w = np.empty(n + 1, dtype=np.int64)
    hhead = np.empty(n + 1, dtype=np.int64)
    last = np.empty(n + 1, dtype=np.int64)
    for k in range(n):
        ln_[k] = Cp[k + 1] - Cp[k]
    ln_[n] = 0
    for i in range(n + 1):
        head[i] = -1
        last[i] = -1
        nxt[i] = -1
        hhead[i] = -1
        nv[i] = 1
        w[i] = 1
        elen[i] = 0
        degree[i] = ln_[i]
    mark = _wclear(0, 0, w, n)
    elen[n] = -2
    Cp[n] = -1
    w[n] = 0
    nel = 0
    mindeg = 0
    lemax = 0
    for i in range(n):
        d = degree[i]
        if d == 0:
            elen[i] = -2
            nel += 1
            Cp[i] = -1
            w[i] = 0
        elif d > dense:
            nv[i] = 0
            elen[i] = -1
            nel += 1
            Cp[i] = _flip(n)
            nv[n] += 1
        else:
            if head[d] != -1:
                last[head[d]] = i
            nxt[i] = head[d]
            head[d] = i
    while nel < n:
        k = -1
        while mindeg < n:
            k = head[mindeg]
            if k != -1:
                break
            mindeg += 1
        if nxt[k] != -1:
            last[nxt[k]] = -1
        head[mindeg] = nxt[k]
        elenk = elen[k]
        nvk = nv[k]
        nel += nvk
        # garbage collection
        if elenk > 0 and cnz + mindeg >= nzmax:
            for j in range(n):
                p = Cp[j]
                if p >= 0:
                    Cp[j] = Ci[p]
                    Ci[p] = _flip(j)
            q = 0
            p = 0
            while p < cnz:
                j = _flip(Ci[p])
                p += 1
                if j >= 0:
                    Ci[q] = Cp[j]
                    Cp[j] = q
                    q += 1
                    for _ in range(ln_[j] - 1):
                        Ci[q] = Ci[p]
                        q += 1
                        p += 1
            cnz = q
        # construct new element
        dk = 0
        nv[k] = -nvk
        p = Cp[k]
        pk1 = p if elenk == 0 else cnz
        pk2 = pk1
        for k1 in range(1, elenk + 2):
            if k1 > elenk:
                e = k
                pj = p
                ln = ln_[k] - elenk
            else:
                e = Ci[p]
                p += 1
                pj = Cp[e]
                ln = ln_[e]
            for _ in range(ln):
                i = Ci[pj]
                pj += 1
                nvi = nv[i]
                if nvi <= 0:
                    continue
                dk += nvi
                nv[i] = -nvi
                Ci[pk2] = i
                pk2 += 1
                if nxt[i] != -1:
                    last[nxt[i]] = last[i]
                if last[i] != -1:
                    nxt[last[i]] = nxt[i]
                else:
                    head[degree[i]] = nxt[i]
            if e != k:
                Cp[e] = _flip(k)
                w[e] = 0
        if elenk != 0:
            cnz = pk2
        degree[k] = dk
        Cp[k] = pk1
        ln_[k] = pk2 - pk1
        elen[k] = -2
        # set differences |Le \ Lk|
        mark = _wclear(mark, lemax, w, n)
        for pk in range(pk1, pk2):
            i = Ci[pk]
            eln = elen[i]
            if eln <= 0:
                continue
            nvi = -nv[i]
            wnvi = mark - nvi
            for p in range(Cp[i], Cp[i] + eln):
                e = Ci[p]
                if w[e] >= mark:
                    w[e] -= nvi
                elif w[e] != 0:
                    w[e] = degree[e] + wnvi
        # degree update
        for pk in range(pk1, pk2):
            i = Ci[pk]
            p1 = Cp[i]
            p2 = p1 + elen[i] - 1
            pn = p1
            h = 0
            d = 0
            for p in range(p1, p2 + 1):
                e = Ci[p]
                if w[e] != 0:
                    dext = w[e] - mark
                    if dext > 0:
                        d += dext
                        Ci[pn] = e
                        pn += 1
                        h += e
                    else:
                        Cp[e] = _flip(k)
                        w[e] = 0
            elen[i] = pn - p1 + 1
            p3 = pn
            p4 = p1 + ln_[i]
            for p in range(p2 + 1, p4):
                j = Ci[p]
                nvj = nv[j]
                if nvj <= 0:
                    continue
                d += nvj
                Ci[pn] = j
                pn += 1
                h += j
            if d == 0:
                Cp[i] = _flip(k)
                nvi = -nv[i]
                dk -= nvi
                nvk += nvi
                nel += nvi
                nv[i] = 0
                elen[i] = -1
            else:
                degree[i] = min(degree[i], d)
                Ci[pn] = Ci[p3]
                Ci[p3] = Ci[p1]
                Ci[p1] = k
                ln_[i] = pn - p1 + 1
                h = abs(h) % n
                nxt[i] = hhead[h]
                hhead[h] = i
                last[i] = h
        degree[k] = dk
        lemax = max(lemax, dk)
        mark = _wclear(mark + lemax, lemax, w, n)
        # supernode detection
        for pk in range(pk1, pk2):
            i = Ci[pk]
            if nv[i] >= 0:
                continue
            h = last[i]
            i = hhead[h]
            hhead[h] = -1
            while i != -1 and nxt[i] != -1:
                ln = ln_[i]
                eln = elen[i]
                for p in range(Cp[i] + 1, Cp[i] + ln):
                    w[Ci[p]] = mark
                jlast = i
                j = nxt[i]
                while j != -1:
                    ok = ln_[j] == ln and elen[j] == eln
                    p = Cp[j] + 1
                    while ok and p <= Cp[j] + ln - 1:
                        if w[Ci[p]] != mark:
                            ok = False
                        p += 1
                    if ok:
                        Cp[j] = _flip(i)
                        nv[i] += nv[j]
                        nv[j] = 0
                        elen[j] = -1
                        j = nxt[j]
                        nxt[jlast] = j
                    else:
                        jlast = j
                        j = nxt[j]
                i = nxt[i]
                mark += 1
        # finalize new element
        p = pk1
        for pk in range(pk1, pk2):
            i = Ci[pk]
            nvi = -nv[i]
            if nvi <= 0:
                continue
            nv[i] = nvi
            d = degree[i] + dk - nvi
            d = min(d, n - nel - nvi)
            if head[d] != -1:
                last[head[d]] = i
            nxt[i] = head[d]
            last[i] = -1
            head[d] = i
            mindeg = min(mindeg, d)
            degree[i] = d
            Ci[p] = i
            p += 1
        nv[k] = nvk
        ln_[k] = p - pk1
        if ln_[k] == 0:
            Cp[k] = -1
            w[k] = 0
        if elenk != 0:
            cnz = p
    # postorder the assembly tree
    for i in range(n):
        Cp[i] = _flip(Cp[i])
    for j in range(n + 1):
        head[j] = -1
    for j in range(n, -1, -1):
        if nv[j] > 0:
            continue
        nxt[j] = head[Cp[j]]
        head[Cp[j]] = j
    for e in range(n, -1, -1):
        if nv[e] <= 0:
            continue
        if Cp[e] != -1:
            nxt[e] = head[Cp[e]]
            head[Cp[e]] = e
    k = 0
    for i in range(n + 1):
        if Cp[i] == -1:
            k = _tdfs(i, k, head, nxt, P, w)
    return P[:n].copy()


def amd_order(A) -> np.ndarray:
    """Fill-reducing permutation for the symmetric pattern of ``A``.

    Returns ``perm`` such that ``A[perm][:, perm]`` has a sparse Cholesky
    factor.  Only the pattern of ``A + A.T`` is used.
    """
    A = sp.csc_matrix(A)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("amd_order needs a square matrix")
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    if n <= 2:
        return np.arange(n, dtype=np.int64)
    S = A.copy()
    S.data = np.ones_like(S.data)
    S = (S + S.T).tocsc()
    S.setdiag(0)
    S.eliminate_zeros()
    S.sort_indices()
    Cp = S.indptr.astype(np.int64)
    Ci = S.indices.astype(np.int64)
    return _amd(n, Cp, Ci, int(Cp[-1]))


# --------------------------------------------------------------- symbolic


@njit(cache=True)
def _etree(n, Ap, Ai):
    # Ap/Ai: upper triangle by columns.
    parent = np.full(n, -1, dtype=np.int64)
    ancestor = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            while i != -1 and i < k:
                inext = ancestor[i]
                ancestor[i] = k
                if inext == -1:
                    parent[i] = k
                i = inext
    return parent


@njit(cache=True)
def _ereach(Ap, Ai, k, parent, s, flag):
    # Pattern of row k of L (excluding the diagonal) in s[top:n].
    n = parent.shape[0]
    top = n
    flag[k] = k
    for p in range(Ap[k], Ap[k + 1]):
        i = Ai[p]
        if i > k:
            continue
        ln = 0
        while flag[i] != k:
            s[ln] = i
            ln += 1
            flag[i] = k
            i = parent[i]
        while ln > 0:
            top -= 1
            ln -= 1
            s[top] = s[ln]
    return top


@njit(cache=True)
def _colcounts(n, Ap, Ai, parent):
    counts = np.ones(n, dtype=np.int64)
    s = np.empty(n, dtype=np.int64)
    flag = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        top = _ereach(Ap, Ai, k, parent, s, flag)
        for q in range(top, n):
            counts[s[q]] += 1
    return counts


@njit(cache=True)
def _chol_numeric(n, Ap, Ai, Ax, parent, Lp):
    nnz = Lp[n]
    Li = np.empty(nnz, dtype=np.int64)
    Lx = np.empty(nnz, dtype=np.float64)
    c = Lp[:n].copy()
    s = np.empty(n, dtype=np.int64)
    flag = np.full(n, -1, dtype=np.int64)
    x = np.zeros(n, dtype=np.float64)
    for k in range(n):
        top = _ereach(Ap, Ai, k, parent, s, flag)
        x[k] = 0.0
        for p in range(Ap[k], Ap[k + 1]):
            if Ai[p] <= k:
                x[Ai[p]] = Ax[p]
        d = x[k]
        x[k] = 0.0
        for q in range(top, n):
            i = s[q]
            lki = x[i] / Lx[Lp[i]]
            x[i] = 0.0
            for p in range(Lp[i] + 1, c[i]):
                x[Li[p]] -= Lx[p] * lki
            d -= lki * lki
            p = c[i]
            c[i] += 1
            Li[p] = k
            Lx[p] = lki
        if not d > 0.0:
            return Li, Lx, k
        p = c[k]
        c[k] += 1
        Li[p] = k
        Lx[p] = np.sqrt(d)
    return Li, Lx, -1


@njit(cache=True)
def _lsolve(n, Lp, Li, Lx, X):
    for r in range(X.shape[1]):
        for j in range(n):
            X[j, r] /= Lx[Lp[j]]
            xj = X[j, r]
            for p in range(Lp[j] + 1, Lp[j + 1]):
                X[Li[p], r] -= Lx[p] * xj


@njit(cache=True)
def _ltsolve(n, Lp, Li, Lx, X):
    for r in range(X.shape[1]):
        for j in range(n - 1, -1, -1):
            acc = X[j, r]
            for p in range(Lp[j] + 1, Lp[j + 1]):
                acc -= Lx[p] * X[Li[p], r]
            X[j, r] = acc / Lx[Lp[j]]


@dataclass(frozen=True)
class Symbolic:
    """Ordering and structure of a Cholesky factor for one pattern."""

    n: int
    perm: np.ndarray
    Cp: np.ndarray  # upper triangle of the permuted matrix, by columns
    Ci: np.ndarray
    data_map: np.ndarray  # positions in the source CSC data array
    parent: np.ndarray
    Lp: np.ndarray

    @property
    def nnz_factor(self) -> int:
        return int(self.Lp[-1])


def _pattern_key(A: sp.csc_matrix, ordering: str, hint=None) -> str:
    h = hashlib.blake2b(digest_size=16)
    h.update(np.int64(A.shape[0]).tobytes())
    h.update(ordering.encode())
    h.update(np.ascontiguousarray(A.indptr, dtype=np.int64).tobytes())
    h.update(np.ascontiguousarray(A.indices, dtype=np.int64).tobytes())
    if hint is not None:
        h.update(np.ascontiguousarray(hint, dtype=np.int64).tobytes())
    return h.hexdigest()


_SYMBOLIC_CACHE: OrderedDict[str, Symbolic] = OrderedDict()
_CACHE_SIZE = 16


def _symbolic(A: sp.csc_matrix, perm: np.ndarray) -> tuple[Symbolic, float]:
    """Symbolic factorization for ``perm`` and its flop proxy ``sum(colcount**2)``."""
    n = A.shape[0]
    # Track where each entry of the permuted upper triangle comes from.
    idx = sp.csc_matrix(
        (np.arange(1, A.nnz + 1, dtype=np.float64), A.indices, A.indptr), shape=A.shape
    )
    C = sp.triu(idx[perm][:, perm], format="csc")
    C.sort_indices()
    Cp = C.indptr.astype(np.int64)
    Ci = C.indices.astype(np.int64)
    data_map = C.data.astype(np.int64) - 1
    parent = _etree(n, Cp, Ci)
    counts = _colcounts(n, Cp, Ci, parent)
    Lp = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=Lp[1:])
    flops = float(np.sum(counts.astype(np.float64) ** 2))
    return Symbolic(n, perm, Cp, Ci, data_map, parent, Lp), flops


def analyze(A: sp.csc_matrix, ordering: str = "amd", hint=None) -> Symbolic:
    """Ordering plus symbolic factorization of a symmetric CSC matrix.

    ``A`` must hold both triangles with canonical (sorted, deduplicated)
    indices.  With ``ordering="amd"`` an optional ``hint`` permutation is
    tried as well and the one with the cheaper factorization is kept.
    Results are cached by pattern.
    """
    key = _pattern_key(A, ordering, hint)
    hit = _SYMBOLIC_CACHE.get(key)
    if hit is not None:
        _SYMBOLIC_CACHE.move_to_end(key)
        return hit
    n = A.shape[0]
    if ordering == "amd":
        sym, cost = _symbolic(A, amd_order(A))
        if hint is not None:
            hint = np.asarray(hint, dtype=np.int64)
            if hint.shape != (n,) or not np.array_equal(np.sort(hint), np.arange(n)):
                raise ValueError("hint must be a permutation")
            alt, alt_cost = _symbolic(A, hint)
            if alt_cost < cost:
                sym = alt
    elif ordering == "natural":
        sym, _ = _symbolic(A, np.arange(n, dtype=np.int64))
    else:
        raise ValueError(f"unknown ordering {ordering!r}")
    _SYMBOLIC_CACHE[key] = sym
    if len(_SYMBOLIC_CACHE) > _CACHE_SIZE:
        _SYMBOLIC_CACHE.popitem(last=False)
    return sym


class SparseCholesky:
    """Cholesky factor ``L L^T = P A P^T`` of a sparse SPD matrix."""

    def __init__(self, A, ordering: str = "amd", hint=None):
        A = sp.csc_matrix(A)
        A.sum_duplicates()
        A.sort_indices()
        self.symbolic = analyze(A, ordering, hint)
        sym = self.symbolic
        Ax = A.data[sym.data_map]
        Li, Lx, fail = _chol_numeric(sym.n, sym.Cp, sym.Ci, Ax, sym.parent, sym.Lp)
        if fail >= 0:
            raise CholeskyFailure(f"matrix not positive definite (pivot {fail})")
        self.Li = Li
        self.Lx = Lx
        self.n = sym.n

    @property
    def perm(self) -> np.ndarray:
        return self.symbolic.perm

    @property
    def nnz(self) -> int:
        return self.symbolic.nnz_factor

    def L(self) -> sp.csc_matrix:
        """The factor as a scipy matrix (in permuted coordinates)."""
        return sp.csc_matrix((self.Lx, self.Li, self.symbolic.Lp), shape=(self.n, self.n))

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(self.Lx[self.symbolic.Lp[:-1]])))

    def solve(self, B: np.ndarray) -> np.ndarray:
        B = np.asarray(B, dtype=float)
        vec = B.ndim == 1
        X = np.array(B.reshape(self.n, -1)[self.perm], dtype=float, order="C")
        Lp = self.symbolic.Lp
        _lsolve(self.n, Lp, self.Li, self.Lx, X)
        _ltsolve(self.n, Lp, self.Li, self.Lx, X)
        out = np.empty_like(X)
        out[self.perm] = X
        return out[:, 0] if vec else out
