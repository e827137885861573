"""Bounded-variable simplex kernel.

Solves linear programs in equality form::

    min c.x   s.t.  A x = b,   lo <= x <= hi

with possibly infinite bounds. Nonbasic variables sit at a finite bound
(or at zero when free); the dense tableau T = B^-1 A and the vector of
basic values are updated in place by pivots and periodically rebuilt from
a fresh factorization to keep drift in check.

Three entry points on :class:`SimplexState`:

* ``primal_two_phase`` - cold start via artificial columns,
* ``dual_simplex``     - warm restart after bound changes (branch and bound),
* ``refactor``         - rebuild T and the basic values from the basis.

Anti-cycling: Dantzig pricing switches permanently to Bland's rule after a
stall, which guarantees termination on degenerate problems.
"""

from __future__ import annotations

import enum

import numpy as np

AT_LOWER = 0
AT_UPPER = 1
BASIC = 2
FREE = 3  # nonbasic free variable, parked at zero

DTOL = 1e-9       # reduced-cost tolerance
PTOL = 1e-9       # smallest acceptable pivot / ratio denominator
FEASTOL = 1e-7    # bound violation tolerance on (row-scaled) data
STALL_LIMIT = 300
REFACTOR_EVERY = 150


class LpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITER_LIMIT = "iteration_limit"


class SingularBasisError(RuntimeError):
    pass


class SimplexState:
    """Mutable solver state over a fixed equality-form matrix.

    Bounds may be changed between solves (``set_var_bounds``); the matrix
    may not. One state instance is single-threaded; distinct instances
    share nothing.
    """

    def __init__(self, A: np.ndarray, b: np.ndarray,
                 lo: np.ndarray, hi: np.ndarray) -> None:
        self.A = np.ascontiguousarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float).copy()
        self.m, self.n = self.A.shape
        self.lo = np.asarray(lo, dtype=float).copy()
        self.hi = np.asarray(hi, dtype=float).copy()
        self.n_real = self.n  # columns beyond this are artificials
        self.T: np.ndarray | None = None
        self.beta: np.ndarray | None = None
        self.basis: np.ndarray | None = None
        self.vstat = np.empty(self.n, dtype=np.int8)
        self.pivots = 0
        self._since_refactor = 0
        self.row_kept: np.ndarray | None = None  # original row ids after dedup

    # -- point and objective helpers ------------------------------------

    def nonbasic_value(self, j: int) -> float:
        s = self.vstat[j]
        if s == AT_LOWER:
            return self.lo[j]
        if s == AT_UPPER:
            return self.hi[j]
        return 0.0

    def x_full(self) -> np.ndarray:
        x = np.where(self.vstat == AT_UPPER, self.hi,
                     np.where(self.vstat == AT_LOWER, self.lo, 0.0))
        x[self.basis] = self.beta
        return x

    def objective(self, c: np.ndarray) -> float:
        return float(c @ self.x_full())

    def reduced_costs(self, c: np.ndarray) -> np.ndarray:
        d = c - c[self.basis] @ self.T
        d[self.basis] = 0.0
        return d

    def duals(self, c: np.ndarray) -> np.ndarray:
        """Row duals y = c_B B^-1, recovered from a fresh factorization."""
        B = self.A[:, self.basis]
        return np.linalg.solve(B.T, c[self.basis])

    # -- factorization ----------------------------------------------------

    def refactor(self) -> None:
        B = self.A[:, self.basis]
        try:
            self.T = np.linalg.solve(B, self.A)
        except np.linalg.LinAlgError as exc:
            raise SingularBasisError(str(exc)) from exc
        x_nb = np.where(self.vstat == AT_UPPER, self.hi,
                        np.where(self.vstat == AT_LOWER, self.lo, 0.0))
        x_nb[self.basis] = 0.0
        self.beta = np.linalg.solve(B, self.b - self.A @ x_nb)
        self._since_refactor = 0

    def load_basis(self, basis: np.ndarray, vstat: np.ndarray) -> None:
        self.basis = basis.copy()
        self.vstat = vstat.copy()
        self.refactor()

    def snapshot(self) -> tuple[np.ndarray, np.ndarray]:
        return self.basis.copy(), self.vstat.copy()

    # -- feasibility ------------------------------------------------------

    def max_primal_violation(self) -> float:
        lo_b = self.lo[self.basis]
        hi_b = self.hi[self.basis]
        above = self.beta - hi_b
        below = lo_b - self.beta
        worst = 0.0
        if self.m:
            worst = float(max(above.max(initial=0.0), below.max(initial=0.0)))
        return worst

    def set_var_bounds(self, j: int, lo: float, hi: float) -> bool:
        """Change one variable's bounds; returns False if lo > hi.

        A nonbasic variable is slid to its (possibly moved) bound so the
        basic values stay consistent; a basic variable may become
        infeasible, to be repaired by the dual simplex.
        """
        if lo > hi + FEASTOL:
            return False
        old = self.nonbasic_value(j) if self.vstat[j] != BASIC else None
        self.lo[j] = lo
        self.hi[j] = hi
        if self.vstat[j] == BASIC:
            return True
        if self.vstat[j] == FREE:
            if np.isfinite(lo) and lo > 0 or np.isfinite(hi) and hi < 0:
                # zero no longer inside the box: park at the nearest bound
                self.vstat[j] = AT_LOWER if np.isfinite(lo) and lo > 0 else AT_UPPER
        elif self.vstat[j] == AT_LOWER and not np.isfinite(lo):
            self.vstat[j] = AT_UPPER if np.isfinite(hi) else FREE
        elif self.vstat[j] == AT_UPPER and not np.isfinite(hi):
            self.vstat[j] = AT_LOWER if np.isfinite(lo) else FREE
        new = self.nonbasic_value(j)
        if new != old:
            self.beta -= self.T[:, j] * (new - old)
        return True

    # -- primal simplex ---------------------------------------------------

    def _primal_core(self, c: np.ndarray, max_iter: int) -> LpStatus:
        bland = False
        stall = 0
        last_obj = np.inf
        movable = self.hi - self.lo > PTOL
        for _ in range(max_iter):
            if self._since_refactor >= REFACTOR_EVERY:
                self.refactor()
            d = self.reduced_costs(c)
            elig_dn = (self.vstat == AT_LOWER) & movable & (d < -DTOL)
            elig_up = (self.vstat == AT_UPPER) & movable & (d > DTOL)
            elig_fr = (self.vstat == FREE) & (np.abs(d) > DTOL)
            eligible = elig_dn | elig_up | elig_fr
            if not eligible.any():
                return LpStatus.OPTIMAL
            if bland:
                j = int(np.flatnonzero(eligible)[0])
            else:
                score = np.where(eligible, np.abs(d), -1.0)
                j = int(np.argmax(score))
            dirn = 1.0 if (elig_dn[j] or (elig_fr[j] and d[j] < 0)) else -1.0

            status = self._ratio_and_pivot(j, dirn, bland)
            if status is not None:
                return status

            obj = self.objective(c)
            if obj < last_obj - 1e-10:
                stall = 0
            else:
                stall += 1
                if stall > STALL_LIMIT:
                    bland = True
            last_obj = obj
        return LpStatus.ITER_LIMIT

    def _ratio_and_pivot(self, j: int, dirn: float, bland: bool) -> LpStatus | None:
        """Bounded ratio test plus pivot or bound flip. None means 'continue'."""
        w = dirn * self.T[:, j]
        lo_b = self.lo[self.basis]
        hi_b = self.hi[self.basis]
        t = np.full(self.m, np.inf)
        dec = w > PTOL
        t[dec] = np.where(np.isfinite(lo_b[dec]),
                          (self.beta[dec] - lo_b[dec]) / w[dec], np.inf)
        inc = w < -PTOL
        t[inc] = np.where(np.isfinite(hi_b[inc]),
                          (self.beta[inc] - hi_b[inc]) / w[inc], np.inf)
        np.maximum(t, 0.0, out=t)

        t_own = np.inf
        if self.vstat[j] in (AT_LOWER, AT_UPPER) and np.isfinite(self.lo[j]) \
                and np.isfinite(self.hi[j]):
            t_own = self.hi[j] - self.lo[j]

        t_block = t.min() if self.m else np.inf
        if t_own <= t_block:
            if not np.isfinite(t_own):
                return LpStatus.UNBOUNDED
            # bound-to-bound flip, no basis change
            self.beta -= w * t_own
            self.vstat[j] = AT_UPPER if self.vstat[j] == AT_LOWER else AT_LOWER
            return None
        if not np.isfinite(t_block):
            return LpStatus.UNBOUNDED

        blocking = np.flatnonzero(t <= t_block + 1e-9)
        if bland:
            r = int(blocking[np.argmin(self.basis[blocking])])
        else:
            r = int(blocking[np.argmax(np.abs(w[blocking]))])
        leave_to = AT_LOWER if w[r] > 0 else AT_UPPER
        self._pivot(r, j, dirn, t[r], leave_to)
        return None

    def _pivot(self, r: int, j: int, dirn: float, step: float, leave_to: int) -> None:
        enter_value = self.nonbasic_value(j) + dirn * step
        self.beta -= dirn * step * self.T[:, j]
        self.beta[r] = enter_value
        leaving = self.basis[r]

        piv = self.T[r, j]
        self.T[r, :] /= piv
        col = self.T[:, j].copy()
        col[r] = 0.0
        self.T -= np.outer(col, self.T[r, :])
        # wipe residual round-off in the pivot column
        self.T[:, j] = 0.0
        self.T[r, j] = 1.0

        self.basis[r] = j
        self.vstat[j] = BASIC
        if not np.isfinite(self.lo[leaving]) and leave_to == AT_LOWER:
            leave_to = AT_UPPER if np.isfinite(self.hi[leaving]) else FREE
        if not np.isfinite(self.hi[leaving]) and leave_to == AT_UPPER:
            leave_to = AT_LOWER if np.isfinite(self.lo[leaving]) else FREE
        self.vstat[leaving] = leave_to
        self.pivots += 1
        self._since_refactor += 1

    def primal_two_phase(self, c: np.ndarray, max_iter: int | None = None) -> LpStatus:
        """Cold start: artificial columns, phase 1, then phase 2 on c."""
        if max_iter is None:
            max_iter = 2000 + 40 * (self.m + self.n)

        # initial nonbasic point: finite bound nearest zero, else free at 0
        for j in range(self.n):
            if np.isfinite(self.lo[j]):
                self.vstat[j] = AT_LOWER
            elif np.isfinite(self.hi[j]):
                self.vstat[j] = AT_UPPER
            else:
                self.vstat[j] = FREE
        x0 = np.where(self.vstat == AT_UPPER, self.hi,
                      np.where(self.vstat == AT_LOWER, self.lo, 0.0))
        resid = self.b - self.A @ x0

        signs = np.where(resid >= 0, 1.0, -1.0)
        art = np.zeros((self.m, self.m))
        np.fill_diagonal(art, signs)
        self.A = np.hstack([self.A, art])
        self.lo = np.concatenate([self.lo, np.zeros(self.m)])
        self.hi = np.concatenate([self.hi, np.full(self.m, np.inf)])
        self.vstat = np.concatenate([self.vstat,
                                     np.full(self.m, BASIC, dtype=np.int8)])
        self.basis = np.arange(self.n, self.n + self.m)
        n_real = self.n
        self.n += self.m
        self.T = signs[:, None] * self.A
        self.beta = np.abs(resid)

        c1 = np.zeros(self.n)
        c1[n_real:] = 1.0
        status = self._primal_core(c1, max_iter)
        if status is not LpStatus.OPTIMAL:
            return status if status is LpStatus.ITER_LIMIT else LpStatus.INFEASIBLE
        if self.objective(c1) > FEASTOL * max(1.0, self.m):
            return LpStatus.INFEASIBLE

        self._drive_out_artificials(n_real)
        # rows still held by an artificial are linearly dependent (their
        # tableau row vanished on real columns); delete them, then drop the
        # artificial columns so later warm restarts stay dimension-stable
        art_rows = np.flatnonzero(self.basis >= n_real)
        if art_rows.size:
            keep = np.setdiff1d(np.arange(self.m), art_rows)
            self.row_kept = self.row_kept[keep] if self.row_kept is not None else keep
            self.A = self.A[keep]
            self.b = self.b[keep]
            self.T = self.T[keep]
            self.beta = self.beta[keep]
            self.basis = self.basis[keep]
            self.m = keep.size
        self.A = np.ascontiguousarray(self.A[:, :n_real])
        self.T = np.ascontiguousarray(self.T[:, :n_real])
        self.lo = self.lo[:n_real]
        self.hi = self.hi[:n_real]
        self.vstat = self.vstat[:n_real]
        self.n = n_real
        c2 = np.asarray(c, dtype=float)
        self.n_real = n_real
        self._since_refactor = REFACTOR_EVERY  # force clean tableau for phase 2
        return self._primal_core(c2, max_iter)

    def _drive_out_artificials(self, n_real: int) -> None:
        for r in range(self.m):
            if self.basis[r] < n_real:
                continue
            row = self.T[r, :n_real]
            candidates = np.flatnonzero((np.abs(row) > PTOL) & (self.vstat[:n_real] != BASIC))
            if candidates.size == 0:
                continue  # redundant row; artificial stays, pinned at zero later
            j = int(candidates[np.argmax(np.abs(row[candidates]))])
            self._pivot(r, j, 1.0, 0.0, AT_LOWER)

    # -- dual simplex -------------------------------------------------------

    def dual_simplex(self, c: np.ndarray, max_iter: int | None = None) -> LpStatus:
        """Restore primal feasibility from a dual-feasible basis.

        Used after branching tightens bounds. Requires the current basis
        and statuses to be dual feasible for c (true when only bounds have
        changed since an optimal solve).
        """
        if max_iter is None:
            max_iter = 500 + 10 * self.m
        cc = c
        if len(cc) < self.n:
            cc = np.concatenate([cc, np.zeros(self.n - len(cc))])
        movable = self.hi - self.lo > PTOL
        for _ in range(max_iter):
            if self._since_refactor >= REFACTOR_EVERY:
                self.refactor()
            lo_b = self.lo[self.basis]
            hi_b = self.hi[self.basis]
            above = self.beta - hi_b
            below = lo_b - self.beta
            viol = np.maximum(above, below)
            r = int(np.argmax(viol)) if self.m else 0
            if self.m == 0 or viol[r] <= FEASTOL:
                return LpStatus.OPTIMAL
            is_above = above[r] >= below[r]

            alpha = self.T[r, :]
            d = self.reduced_costs(cc)
            if is_above:
                cand = ((self.vstat == AT_LOWER) & movable & (alpha > PTOL)) | \
                       ((self.vstat == AT_UPPER) & movable & (alpha < -PTOL)) | \
                       ((self.vstat == FREE) & (np.abs(alpha) > PTOL))
            else:
                cand = ((self.vstat == AT_LOWER) & movable & (alpha < -PTOL)) | \
                       ((self.vstat == AT_UPPER) & movable & (alpha > PTOL)) | \
                       ((self.vstat == FREE) & (np.abs(alpha) > PTOL))
            if not cand.any():
                return LpStatus.INFEASIBLE
            with np.errstate(divide="ignore", invalid="ignore"):
                theta = np.where(cand, np.abs(d) / np.abs(alpha), np.inf)
            tmin = theta.min()
            tied = np.flatnonzero(theta <= tmin + 1e-9)
            j = int(tied[np.argmax(np.abs(alpha[tied]))])

            target = hi_b[r] if is_above else lo_b[r]
            delta = (self.beta[r] - target) / alpha[j]
            enter_value = self.nonbasic_value(j) + delta
            self.beta -= self.T[:, j] * delta
            self.beta[r] = enter_value
            leaving = self.basis[r]

            piv = self.T[r, j]
            self.T[r, :] /= piv
            col = self.T[:, j].copy()
            col[r] = 0.0
            self.T -= np.outer(col, self.T[r, :])
            self.T[:, j] = 0.0
            self.T[r, j] = 1.0

            self.basis[r] = j
            self.vstat[j] = BASIC
            self.vstat[leaving] = AT_UPPER if is_above else AT_LOWER
            self.pivots += 1
            self._since_refactor += 1
        return LpStatus.ITER_LIMIT
