"""Batched interior-point solver for the zone QPs.

Each batch item ``k`` is::

    minimize    0.5 z' P_k z + q_k' z
    subject to  lo_k <= z <= hi_k
                R_k z <= r_k

where ``R_k`` is block diagonal: ``S`` blocks of shape ``(nr, w)`` acting on
``z[off + s*w : off + (s+1)*w]``. All bounds must be finite with
``lo < hi`` (equalities are eliminated by the caller) and the inequality
set must have an interior.

The method is Mehrotra's predictor-corrector on the slack form
``G z + s = h``, ``s >= 0`` with ``G = [-I; I; R]``. Thanks to the block
structure, ``G' W G`` is a diagonal plus ``S`` small dense blocks, so each
Newton step costs one dense ``n x n`` inverse per item. Items stop
individually once their scaled KKT residuals drop below tolerance and are
then left untouched, so every item's result depends only on its own data.
Near the optimum the barrier weights grow without bound and rounding can
push an item away from a point it had almost reached, so each item keeps
its best iterate and is frozen once it stops improving.
"""

from __future__ import annotations

import numpy as np

STEP_FRACTION = 0.99
# iterations without improving the best residual before an item is frozen
STALL_LIMIT = 3
# relative diagonal shift keeping the Newton matrix invertible near the boundary
REGULARIZATION = 1e-12


class StagewiseQP:
    def __init__(self, P, blocks, offset, lower, upper, rhs):
        self.P = np.asarray(P, dtype=float)
        self.R = np.asarray(blocks, dtype=float)
        nb, S, nr, w = self.R.shape
        self.nb, self.S, self.nr, self.w = nb, S, nr, w
        self.n = self.P.shape[1]
        self.off = int(offset)
        if self.off + S * w > self.n:
            raise ValueError("blocks extend past the variable vector")
        self.lo = np.asarray(lower, dtype=float)
        self.hi = np.asarray(upper, dtype=float)
        self.rhs = np.asarray(rhs, dtype=float).reshape(nb, S, nr)
        if not (np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi)) and np.all(self.lo < self.hi)):
            raise ValueError("bounds must be finite with lower < upper")
        self.x = 0.5 * (self.lo + self.hi)
        self.iterations = np.zeros(nb, dtype=int)
        self.converged = np.zeros(nb, dtype=bool)
        self.kkt_res = np.zeros(nb)

    def _blk(self, v):
        # block region of a (k, n) array viewed as (k, S, w)
        return v[:, self.off:self.off + self.S * self.w].reshape(len(v), self.S, self.w)

    def _Rx(self, idx, x):
        return np.einsum("ksrj,ksj->ksr", self.R[idx], self._blk(x))

    def _Rty(self, idx, v):
        out = np.zeros((len(idx), self.n))
        out[:, self.off:self.off + self.S * self.w] = np.einsum("ksrj,ksr->ksj", self.R[idx], v).reshape(len(idx), -1)
        return out

    def warm_start(self, x, idx=None):
        """Primal starting point (pushed into the interior of the box before use)."""
        idx = np.arange(self.nb) if idx is None else np.asarray(idx)
        self.x[idx] = np.asarray(x, dtype=float)

    def solve(self, q, idx=None, tol=1e-8, max_iter=60):
        """Solve items ``idx`` with linear terms ``q`` (rows aligned with ``idx``); returns solutions."""
        idx = np.arange(self.nb) if idx is None else np.asarray(idx)
        q = np.asarray(q, dtype=float)
        k = len(idx)
        lo, hi, rhs, P = self.lo[idx], self.hi[idx], self.rhs[idx], self.P[idx]
        width = hi - lo
        x = np.clip(self.x[idx], lo + 0.05 * width, hi - 0.05 * width)
        s_lo, s_hi = x - lo, hi - x
        s_r = rhs - self._Rx(idx, x)
        s_r = np.maximum(s_r, 1.0)
        l_lo = np.ones_like(s_lo)
        l_hi = np.ones_like(s_hi)
        l_r = np.ones_like(s_r)
        m = 2 * self.n + self.S * self.nr
        scale_d = 1.0 + np.max(np.abs(q), axis=1)
        scale_p = 1.0 + np.maximum(np.max(np.abs(np.concatenate([lo, hi], axis=1)), axis=1),
                                   np.max(np.abs(rhs.reshape(k, -1)), axis=1, initial=0.0))
        iters = np.zeros(k, dtype=int)
        done = np.zeros(k, dtype=bool)
        res_out = np.full(k, np.inf)
        best_x = x.copy()
        stall = np.zeros(k, dtype=int)
        diag = np.arange(self.n)
        # scaled by the Hessian alone; the barrier weights blow up near the optimum
        reg = REGULARIZATION * (1.0 + np.max(np.abs(P[:, diag, diag]), axis=1))
        for it in range(max_iter + 1):
            a = np.flatnonzero(~done)
            if a.size == 0:
                break
            xa, sl, sh, sr = x[a], s_lo[a], s_hi[a], s_r[a]
            ll, lh, lr = l_lo[a], l_hi[a], l_r[a]
            ia = idx[a]
            r_d = (P[a] @ xa[..., None])[..., 0] + q[a] - ll + lh + self._Rty(ia, lr)
            r_lo = -xa + sl + lo[a]
            r_hi = xa + sh - hi[a]
            r_r = self._Rx(ia, xa) + sr - rhs[a]
            mu = (np.sum(sl * ll, 1) + np.sum(sh * lh, 1) + np.sum((sr * lr).reshape(len(a), -1), 1)) / m
            pres = np.maximum(np.max(np.abs(np.concatenate([r_lo, r_hi], 1)), 1),
                              np.max(np.abs(r_r.reshape(len(a), -1)), 1, initial=0.0)) / scale_p[a]
            dres = np.max(np.abs(r_d), 1) / scale_d[a]
            res = np.maximum(np.maximum(pres, dres), mu / scale_d[a])
            better = res < res_out[a]
            res_out[a[better]] = res[better]
            best_x[a[better]] = xa[better]
            stall[a] = np.where(better, 0, stall[a] + 1)
            ok = (res <= tol) | (stall[a] >= STALL_LIMIT)
            done[a[ok]] = True
            if it == max_iter or np.all(ok):
                break
            keep = ~ok
            a = a[keep]
            ia = idx[a]
            xa, sl, sh, sr, ll, lh, lr = (v[keep] for v in (xa, sl, sh, sr, ll, lh, lr))
            r_d, r_lo, r_hi, r_r, mu = r_d[keep], r_lo[keep], r_hi[keep], r_r[keep], mu[keep]
            iters[a] += 1

            w_lo, w_hi, w_r = ll / sl, lh / sh, lr / sr
            K = P[a].copy()
            K[:, diag, diag] += w_lo + w_hi
            Ra = self.R[ia]
            blk = np.einsum("ksri,ksr,ksrj->ksij", Ra, w_r, Ra)
            for s in range(self.S):
                sl_ = slice(self.off + s * self.w, self.off + (s + 1) * self.w)
                K[:, sl_, sl_] += blk[:, s]
            K[:, diag, diag] += reg[a][:, None]
            try:
                Kinv = np.linalg.inv(K)
            except np.linalg.LinAlgError:
                Kinv = np.linalg.pinv(K, hermitian=True)

            def direction(c_lo, c_hi, c_r):
                # c_* are the complementarity targets s*l - sigma*mu (+ corrector)
                v_lo = (-c_lo + ll * r_lo) / sl
                v_hi = (-c_hi + lh * r_hi) / sh
                v_r = (-c_r + lr * r_r) / sr
                b = -r_d - (-v_lo + v_hi + self._Rty(ia, v_r))
                dx = (Kinv @ b[..., None])[..., 0]
                ds_lo = -r_lo + dx
                ds_hi = -r_hi - dx
                ds_r = -r_r - self._Rx(ia, dx)
                dl_lo = (-c_lo - ll * ds_lo) / sl
                dl_hi = (-c_hi - lh * ds_hi) / sh
                dl_r = (-c_r - lr * ds_r) / sr
                return dx, ds_lo, ds_hi, ds_r, dl_lo, dl_hi, dl_r

            def max_step(pairs):
                alpha = np.ones(len(a))
                for v, dv in pairs:
                    v2, dv2 = v.reshape(len(a), -1), dv.reshape(len(a), -1)
                    with np.errstate(divide="ignore", invalid="ignore"):
                        ratio = np.where(dv2 < 0, -v2 / dv2, np.inf)
                    alpha = np.minimum(alpha, np.min(ratio, axis=1, initial=np.inf))
                return alpha

            aff = direction(sl * ll, sh * lh, sr * lr)
            _, ds_lo, ds_hi, ds_r, dl_lo, dl_hi, dl_r = aff
            a_p = max_step([(sl, ds_lo), (sh, ds_hi), (sr, ds_r)])
            a_d = max_step([(ll, dl_lo), (lh, dl_hi), (lr, dl_r)])
            ap, ad = a_p[:, None], a_d[:, None]
            mu_aff = (np.sum((sl + ap * ds_lo) * (ll + ad * dl_lo), 1) + np.sum((sh + ap * ds_hi) * (lh + ad * dl_hi), 1)
                      + np.sum(((sr + ap[..., None] * ds_r) * (lr + ad[..., None] * dl_r)).reshape(len(a), -1), 1)) / m
            sigma = np.clip((mu_aff / mu) ** 3, 0.0, 1.0)
            sm = (sigma * mu)[:, None]
            dx, ds_lo, ds_hi, ds_r, dl_lo, dl_hi, dl_r = direction(
                sl * ll + ds_lo * dl_lo - sm, sh * lh + ds_hi * dl_hi - sm,
                sr * lr + ds_r * dl_r - sm[..., None])
            a_p = STEP_FRACTION * max_step([(sl, ds_lo), (sh, ds_hi), (sr, ds_r)])
            a_d = STEP_FRACTION * max_step([(ll, dl_lo), (lh, dl_hi), (lr, dl_r)])
            a_p, a_d = np.minimum(a_p, 1.0), np.minimum(a_d, 1.0)
            ap, ad = a_p[:, None], a_d[:, None]
            x[a] = xa + ap * dx
            s_lo[a] = sl + ap * ds_lo
            s_hi[a] = sh + ap * ds_hi
            s_r[a] = sr + ap[..., None] * ds_r
            l_lo[a] = ll + ad * dl_lo
            l_hi[a] = lh + ad * dl_hi
            l_r[a] = lr + ad[..., None] * dl_r
        self.x[idx] = best_x
        self.iterations[idx] = iters
        self.converged[idx] = res_out <= tol
        self.kkt_res[idx] = res_out
        return np.clip(best_x, lo, hi)
