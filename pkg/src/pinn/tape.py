"""Batched execution of a Graph over many points.

A ``Program`` flattens the nodes reachable from a set of outputs into arrays
and runs them through a small numba interpreter, one block of points at a
time.  Nodes that depend only on constants and shared variables (weights,
PDE parameters) are evaluated once as scalars; nodes that depend on
per-point variables (coordinates, targets, adaptive weights) get one row of
values per block.

Reductions over points are performed per fixed-size block and then summed
in ascending block order, so results are bitwise identical for any number
of worker threads.
"""
from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Hashable, Sequence

import numpy as np
from numba import njit

from .autodiff import (ADD, CONST, COS, DIV, EXP, MUL, NEG, POW, SIN, SUB, TANH, VAR,
                       ExprNode, Graph, NonFiniteError, UnboundVariableError)

BLOCK = 256

_ROW, _SCALAR = 0, 1


@njit(cache=True)
def _scalar_forward(op, a, b, c, slot, shared, sv):
    for k in range(op.shape[0]):
        o = op[k]
        if o == CONST:
            sv[k] = c[k]
        elif o == VAR:
            sv[k] = shared[slot[k]]
        else:
            x = sv[a[k]]
            y = sv[b[k]] if b[k] >= 0 else 0.0
            if o == ADD:
                sv[k] = x + y
            elif o == SUB:
                sv[k] = x - y
            elif o == MUL:
                sv[k] = x * y
            elif o == DIV:
                sv[k] = x / y
            elif o == NEG:
                sv[k] = -x
            elif o == POW:
                sv[k] = x ** c[k]
            elif o == TANH:
                sv[k] = math.tanh(x)
            elif o == SIN:
                sv[k] = math.sin(x)
            elif o == COS:
                sv[k] = math.cos(x)
            elif o == EXP:
                sv[k] = math.exp(x)


@njit(cache=True)
def _scalar_reverse(op, a, b, c, slot, sv, sadj, gshared):
    for k in range(op.shape[0] - 1, -1, -1):
        o = op[k]
        g = sadj[k]
        if o == CONST or g == 0.0:
            continue
        if o == VAR:
            gshared[slot[k]] += g
            continue
        ia = a[k]
        ib = b[k]
        x = sv[ia]
        if o == ADD:
            sadj[ia] += g
            sadj[ib] += g
        elif o == SUB:
            sadj[ia] += g
            sadj[ib] -= g
        elif o == MUL:
            y = sv[ib]
            sadj[ia] += g * y
            sadj[ib] += g * x
        elif o == DIV:
            y = sv[ib]
            ga = g / y
            sadj[ia] += ga
            sadj[ib] -= ga * sv[k]
        elif o == NEG:
            sadj[ia] -= g
        elif o == POW:
            sadj[ia] += g * (c[k] * x ** (c[k] - 1.0))
        elif o == TANH:
            v = sv[k]
            sadj[ia] += g * (1.0 - v * v)
        elif o == SIN:
            sadj[ia] += g * math.cos(x)
        elif o == COS:
            sadj[ia] -= g * math.sin(x)
        elif o == EXP:
            sadj[ia] += g * sv[k]


@njit(cache=True, nogil=True)
def _row_forward(op, a, b, ak, bk, c, slot, sv, pts, start, n, vals):
    for k in range(op.shape[0]):
        o = op[k]
        out = vals[k]
        if o == VAR:
            col = slot[k]
            for i in range(n):
                out[i] = pts[start + i, col]
            continue
        ia = a[k]
        ib = b[k]
        if o == ADD or o == SUB or o == MUL or o == DIV:
            if ak[k] == _ROW and bk[k] == _ROW:
                x = vals[ia]
                y = vals[ib]
                if o == ADD:
                    for i in range(n):
                        out[i] = x[i] + y[i]
                elif o == SUB:
                    for i in range(n):
                        out[i] = x[i] - y[i]
                elif o == MUL:
                    for i in range(n):
                        out[i] = x[i] * y[i]
                else:
                    for i in range(n):
                        out[i] = x[i] / y[i]
            elif ak[k] == _ROW:
                x = vals[ia]
                s = sv[ib]
                if o == ADD:
                    for i in range(n):
                        out[i] = x[i] + s
                elif o == SUB:
                    for i in range(n):
                        out[i] = x[i] - s
                elif o == MUL:
                    for i in range(n):
                        out[i] = x[i] * s
                else:
                    for i in range(n):
                        out[i] = x[i] / s
            else:
                s = sv[ia]
                y = vals[ib]
                if o == ADD:
                    for i in range(n):
                        out[i] = s + y[i]
                elif o == SUB:
                    for i in range(n):
                        out[i] = s - y[i]
                elif o == MUL:
                    for i in range(n):
                        out[i] = s * y[i]
                else:
                    for i in range(n):
                        out[i] = s / y[i]
            continue
        x = vals[ia]
        if o == NEG:
            for i in range(n):
                out[i] = -x[i]
        elif o == POW:
            e = c[k]
            for i in range(n):
                out[i] = x[i] ** e
        elif o == TANH:
            for i in range(n):
                out[i] = math.tanh(x[i])
        elif o == SIN:
            for i in range(n):
                out[i] = math.sin(x[i])
        elif o == COS:
            for i in range(n):
                out[i] = math.cos(x[i])
        elif o == EXP:
            for i in range(n):
                out[i] = math.exp(x[i])


@njit(cache=True, nogil=True)
def _row_reverse(op, a, b, ak, bk, c, sv, vals, adj, sadj, n):
    # adj rows must be seeded by the caller; contributions to scalar nodes
    # are summed over the block into sadj.
    for k in range(op.shape[0] - 1, -1, -1):
        o = op[k]
        if o == VAR:
            continue
        g = adj[k]
        ia = a[k]
        ib = b[k]
        v = vals[k]
        if o == ADD or o == SUB:
            sgn = 1.0 if o == ADD else -1.0
            if ak[k] == _ROW:
                ga = adj[ia]
                for i in range(n):
                    ga[i] += g[i]
            else:
                acc = 0.0
                for i in range(n):
                    acc += g[i]
                sadj[ia] += acc
            if bk[k] == _ROW:
                gb = adj[ib]
                for i in range(n):
                    gb[i] += sgn * g[i]
            else:
                acc = 0.0
                for i in range(n):
                    acc += g[i]
                sadj[ib] += sgn * acc
        elif o == MUL:
            if ak[k] == _ROW and bk[k] == _ROW:
                x = vals[ia]
                y = vals[ib]
                ga = adj[ia]
                gb = adj[ib]
                for i in range(n):
                    ga[i] += g[i] * y[i]
                for i in range(n):
                    gb[i] += g[i] * x[i]
            elif ak[k] == _ROW:
                x = vals[ia]
                s = sv[ib]
                ga = adj[ia]
                acc = 0.0
                for i in range(n):
                    ga[i] += g[i] * s
                    acc += g[i] * x[i]
                sadj[ib] += acc
            else:
                s = sv[ia]
                y = vals[ib]
                gb = adj[ib]
                acc = 0.0
                for i in range(n):
                    gb[i] += g[i] * s
                    acc += g[i] * y[i]
                sadj[ia] += acc
        elif o == DIV:
            if ak[k] == _ROW and bk[k] == _ROW:
                y = vals[ib]
                ga = adj[ia]
                gb = adj[ib]
                for i in range(n):
                    q = g[i] / y[i]
                    ga[i] += q
                    gb[i] -= q * v[i]
            elif ak[k] == _ROW:
                s = sv[ib]
                ga = adj[ia]
                acc = 0.0
                for i in range(n):
                    q = g[i] / s
                    ga[i] += q
                    acc += q * v[i]
                sadj[ib] -= acc
            else:
                y = vals[ib]
                gb = adj[ib]
                acc = 0.0
                for i in range(n):
                    q = g[i] / y[i]
                    acc += q
                    gb[i] -= q * v[i]
                sadj[ia] += acc
        else:
            x = vals[ia]
            ga = adj[ia]
            if o == NEG:
                for i in range(n):
                    ga[i] -= g[i]
            elif o == POW:
                e = c[k]
                for i in range(n):
                    ga[i] += g[i] * (e * x[i] ** (e - 1.0))
            elif o == TANH:
                for i in range(n):
                    ga[i] += g[i] * (1.0 - v[i] * v[i])
            elif o == SIN:
                for i in range(n):
                    ga[i] += g[i] * math.cos(x[i])
            elif o == COS:
                for i in range(n):
                    ga[i] -= g[i] * math.sin(x[i])
            elif o == EXP:
                for i in range(n):
                    ga[i] += g[i] * v[i]


class Program:
    """A set of output nodes compiled for evaluation over a batch of points.

    ``point_keys`` name the variables that take a different value at every
    point (columns of the ``points`` matrix); ``shared_keys`` name the
    variables shared by all points (entries of the ``shared`` vector).  Every
    variable reachable from the outputs must be one or the other.
    """

    def __init__(self, graph: Graph, outputs: Sequence[ExprNode],
                 point_keys: Sequence[Hashable], shared_keys: Sequence[Hashable],
                 block: int = BLOCK):
        self.graph = graph
        self.point_keys = list(point_keys)
        self.shared_keys = list(shared_keys)
        self.block = int(block)
        pcol = {k: j for j, k in enumerate(self.point_keys)}
        scol = {k: j for j, k in enumerate(self.shared_keys)}
        order = graph.reachable([o.id for o in outputs])
        s_nodes, r_nodes = [], []
        kind: dict[int, tuple[int, int]] = {}
        for i in order:
            op = graph.ops[i]
            if op == VAR:
                key = graph.keys[i]
                if key in pcol:
                    kind[i] = (_ROW, len(r_nodes))
                    r_nodes.append(i)
                elif key in scol:
                    kind[i] = (_SCALAR, len(s_nodes))
                    s_nodes.append(i)
                else:
                    raise UnboundVariableError(key)
            elif op != CONST and any(kind[p][0] == _ROW for p in graph.args[i]):
                kind[i] = (_ROW, len(r_nodes))
                r_nodes.append(i)
            else:
                kind[i] = (_SCALAR, len(s_nodes))
                s_nodes.append(i)

        def pack(nodes):
            m = len(nodes)
            op = np.empty(m, np.int64)
            a = np.full(m, -1, np.int64)
            b = np.full(m, -1, np.int64)
            ak = np.zeros(m, np.int64)
            bk = np.zeros(m, np.int64)
            c = np.zeros(m)
            slot = np.full(m, -1, np.int64)
            for j, i in enumerate(nodes):
                op[j] = graph.ops[i]
                c[j] = graph.consts[i]
                args = graph.args[i]
                if args:
                    ak[j], a[j] = kind[args[0]]
                if len(args) > 1:
                    bk[j], b[j] = kind[args[1]]
                if op[j] == VAR:
                    key = graph.keys[i]
                    slot[j] = pcol[key] if kind[i][0] == _ROW else scol[key]
            return op, a, b, ak, bk, c, slot

        self._s = pack(s_nodes)
        self._r = pack(r_nodes)
        self._s_ids = np.asarray(s_nodes, dtype=np.int64)
        self._r_ids = np.asarray(r_nodes, dtype=np.int64)
        self._out = [kind[o.id] for o in outputs]
        self._pvar_rows = [(j, int(self._r[6][j])) for j in range(len(r_nodes))
                           if self._r[0][j] == VAR]
        self._local = threading.local()

    @property
    def n_rows(self) -> int:
        return len(self._r_ids)

    @property
    def n_scalars(self) -> int:
        return len(self._s_ids)

    def _scalars(self, shared) -> np.ndarray:
        shared = np.ascontiguousarray(shared, dtype=float)
        if shared.shape != (len(self.shared_keys),):
            raise ValueError(f"expected {len(self.shared_keys)} shared values, got {shared.shape}")
        op, a, b, ak, bk, c, slot = self._s
        sv = np.empty(len(op))
        with np.errstate(all="ignore"):
            _scalar_forward(op, a, b, c, slot, shared, sv)
        bad = np.flatnonzero(~np.isfinite(sv))
        if bad.size:
            raise NonFiniteError(int(self._s_ids[bad[0]]), "shared subexpression")
        return sv

    def _buffers(self, need_adj: bool):
        loc = self._local
        shape = (max(self.n_rows, 1), self.block)
        if getattr(loc, "vals", None) is None:
            loc.vals = np.empty(shape)
        if need_adj and getattr(loc, "adj", None) is None:
            loc.adj = np.empty(shape)
        return loc.vals, (loc.adj if need_adj else None)

    def _points(self, points, n_expected=None) -> np.ndarray:
        pts = np.ascontiguousarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, len(self.point_keys))
        if pts.ndim != 2 or pts.shape[1] != len(self.point_keys):
            raise ValueError(f"points must have {len(self.point_keys)} columns")
        return pts

    def _check_block(self, vals, outs, start, n):
        bad = ~np.isfinite(outs)
        if not bad.any():
            return
        # report the first non-finite node in topological order
        row_bad = ~np.isfinite(vals[:, :n])
        k = int(np.flatnonzero(row_bad.any(axis=1))[0])
        i = int(np.flatnonzero(row_bad[k])[0])
        err = NonFiniteError(int(self._r_ids[k]), f"point {start + i}")
        err.point = start + i
        raise err

    def _gather(self, sv, vals, n):
        outs = np.empty((n, len(self._out)))
        for j, (knd, idx) in enumerate(self._out):
            outs[:, j] = vals[idx, :n] if knd == _ROW else sv[idx]
        return outs

    def _map_blocks(self, fn, nblocks, workers):
        if workers <= 1 or nblocks <= 1:
            return [fn(k) for k in range(nblocks)]
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, range(nblocks)))

    def forward(self, shared, points, workers: int = 1) -> np.ndarray:
        """Output values, shape ``(n_points, n_outputs)``."""
        sv = self._scalars(shared)
        pts = self._points(points)
        N = pts.shape[0]
        res = np.empty((N, len(self._out)))
        nblocks = -(-N // self.block)
        op, a, b, ak, bk, c, slot = self._r

        def run(k):
            start = k * self.block
            n = min(self.block, N - start)
            vals, _ = self._buffers(False)
            with np.errstate(all="ignore"):
                _row_forward(op, a, b, ak, bk, c, slot, sv, pts, start, n, vals)
            outs = self._gather(sv, vals, n)
            self._check_block(vals, outs, start, n)
            res[start:start + n] = outs

        self._map_blocks(run, nblocks, workers)
        return res

    def value_and_grad(self, shared, points, seeds, workers: int = 1):
        """Outputs plus gradients of ``sum(seeds * outputs)``.

        Returns ``(outputs, grad_shared, grad_points)`` where ``grad_points``
        has the shape of ``points`` and holds per-point derivatives.
        """
        sv = self._scalars(shared)
        pts = self._points(points)
        N = pts.shape[0]
        seeds = np.ascontiguousarray(seeds, dtype=float).reshape(N, len(self._out))
        res = np.empty((N, len(self._out)))
        gpts = np.zeros_like(pts)
        nblocks = -(-N // self.block)
        partial = np.zeros((max(nblocks, 1), max(self.n_scalars, 1)))
        op, a, b, ak, bk, c, slot = self._r

        def run(k):
            start = k * self.block
            n = min(self.block, N - start)
            vals, adj = self._buffers(True)
            with np.errstate(all="ignore"):
                _row_forward(op, a, b, ak, bk, c, slot, sv, pts, start, n, vals)
            outs = self._gather(sv, vals, n)
            self._check_block(vals, outs, start, n)
            res[start:start + n] = outs
            adj[:, :n] = 0.0
            sadj = partial[k]
            for j, (knd, idx) in enumerate(self._out):
                sd = seeds[start:start + n, j]
                if knd == _ROW:
                    adj[idx, :n] += sd
                else:
                    sadj[idx] += sd.sum()
            with np.errstate(all="ignore"):
                _row_reverse(op, a, b, ak, bk, c, sv, vals, adj, sadj, n)
            for row, col in self._pvar_rows:
                gpts[start:start + n, col] += adj[row, :n]

        self._map_blocks(run, nblocks, workers)
        total = np.zeros(max(self.n_scalars, 1))
        for k in range(nblocks):
            total += partial[k]
        gshared = np.zeros(len(self.shared_keys))
        sop, sa, sb, _, _, sc, sslot = self._s
        with np.errstate(all="ignore"):
            _scalar_reverse(sop, sa, sb, sc, sslot, sv, total[: self.n_scalars].copy(), gshared)
        return res, gshared, gpts
