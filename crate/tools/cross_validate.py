#!/usr/bin/env python3
"""Solve a dumped conic problem with an independent solver.

Reads the plain-text `conic-problem v1` format emitted by the Rust
library (see `dump_problem`), builds the same program in CVXPY and
solves it with CVXOPT's interior-point method. Prints the optimal value
so it can be compared against the library's own solver.

Usage:
    python3 tools/cross_validate.py FILE [FILE ...]

Matrix form:  optimize <C, X>  s.t.  <A_i, X> <= b_i (ineq rows),
              <A_j, X> = b_j (eq rows),  X >= 0 (PSD).
LMI form:     optimize c^T y  s.t.  F0 + sum_i y_i F_i >= 0 (PSD),
              y_i >= 0 where flagged.
"""

import sys

import numpy as np
import cvxpy as cp
import cvxopt
import cvxopt.solvers

SOLVER_OPTS = {"abstol": 1e-9, "reltol": 1e-9, "feastol": 1e-9, "max_iters": 200}


def run(prob):
    """Solve through CVXPY, retrying with the LDL-based factorization.

    The budget rows pin slack variables to zero at the optimum, which
    makes the default KKT factorization go singular on the last few
    interior-point steps of the matrix-variable programs; the robust
    solver survives that at the cost of a dense KKT matrix, so it is
    only worth trying when the default fails.
    """
    try:
        prob.solve(solver=cp.CVXOPT, **SOLVER_OPTS)
    except cp.error.SolverError:
        prob.solve(solver=cp.CVXOPT, kktsolver="robust", **SOLVER_OPTS)
    return prob.status, prob.value


class Reader:
    """Line cursor that skips blanks and reports 1-based positions."""

    def __init__(self, text):
        self.lines = text.splitlines()
        self.pos = 0

    def next(self):
        while self.pos < len(self.lines):
            line = self.lines[self.pos].strip()
            self.pos += 1
            if line:
                return line
        raise ValueError("unexpected end of file")

    def matrix(self, dim):
        rows = []
        for _ in range(dim):
            rows.append([float(tok) for tok in self.next().split()])
            if len(rows[-1]) != dim:
                raise ValueError(f"line {self.pos}: expected {dim} entries")
        return np.array(rows)


def parse(text):
    r = Reader(text)
    if r.next() != "conic-problem v1":
        raise ValueError("not a conic-problem v1 file")
    sense = r.next().split()[1]
    form = r.next().split()[1]
    dim = int(r.next().split()[1])
    if form == "matrix":
        if r.next() != "objective":
            raise ValueError("expected objective section")
        objective = r.matrix(dim)
        ineqs, eqs = [], []
        while True:
            head = r.next()
            if head == "end":
                break
            kind, rhs, label = head.split(maxsplit=2)
            mat = r.matrix(dim)
            (ineqs if kind == "ineq" else eqs).append((mat, float(rhs), label))
        return sense, form, dim, objective, ineqs, eqs
    if form == "lmi":
        nvars = int(r.next().split()[1])
        cost = [float(tok) for tok in r.next().split()[1:]]
        nonneg = [tok == "1" for tok in r.next().split()[1:]]
        if r.next() != "constant":
            raise ValueError("expected constant section")
        constant = r.matrix(dim)
        coeffs = []
        for _ in range(nvars):
            head = r.next()
            if not head.startswith("coeff"):
                raise ValueError(f"line {r.pos}: expected coeff section")
            coeffs.append(r.matrix(dim))
        if r.next() != "end":
            raise ValueError("expected end marker")
        return sense, form, dim, (cost, nonneg, constant, coeffs), None, None
    raise ValueError(f"unknown form {form}")


def solve_matrix(sense, dim, objective, ineqs, eqs):
    x = cp.Variable((dim, dim), PSD=True)
    cons = [cp.trace(a @ x) <= rhs for a, rhs, _ in ineqs]
    cons += [cp.trace(a @ x) == rhs for a, rhs, _ in eqs]
    expr = cp.trace(objective @ x)
    goal = cp.Maximize(expr) if sense == "max" else cp.Minimize(expr)
    return run(cp.Problem(goal, cons))


def reduce_free_variables(cost, nonneg, coeffs):
    """Drop free variables whose coefficient matrices depend linearly on
    the others, which CVXOPT rejects but a solver with a presolve would
    remove itself.

    The files produced from equality-constrained originals carry one
    free variable per original row, and redundant original rows (zero
    matrices from imaginary directions that vanish in a real basis, a
    trace row implied by marginal rows) turn into dependent columns
    here. Eliminating a dependent free variable preserves the optimal
    value exactly when its cost matches the same linear combination;
    anything else would make the program unbounded and is reported.
    """
    keep = [i for i, flag in enumerate(nonneg) if flag]
    kept_free = []
    for i in (j for j, flag in enumerate(nonneg) if not flag):
        col = coeffs[i].flatten()
        scale = max(1.0, np.linalg.norm(col))
        if not kept_free:
            if np.linalg.norm(col) > 1e-12 * scale:
                kept_free.append(i)
            elif abs(cost[i]) > 1e-12:
                raise ValueError(f"unbounded direction at variable {i}")
            continue
        basis = np.column_stack([coeffs[j].flatten() for j in kept_free])
        w, _, _, _ = np.linalg.lstsq(basis, col, rcond=None)
        residual = np.linalg.norm(basis @ w - col)
        if residual > 1e-10 * scale:
            kept_free.append(i)
            continue
        combo_cost = sum(w[p] * cost[j] for p, j in enumerate(kept_free))
        if abs(cost[i] - combo_cost) > 1e-8 * (1.0 + abs(cost[i])):
            raise ValueError(f"unbounded direction at variable {i}")
    keep += kept_free
    keep.sort()
    return keep


def solve_lmi(sense, dim, data):
    """Solve the scalar-variable form with CVXOPT's native sdp() call.

    CVXPY expands a matrix inequality into one scalar cone row per
    matrix entry, which is hopeless at these dimensions; the native
    interface keeps the per-iteration system at the number of scalar
    variables. The inequality `constant + sum y_i coeffs_i >= 0` enters
    as `sum y_i (-coeffs_i) <= constant`.
    """
    cost, nonneg, constant, coeffs = data
    keep = reduce_free_variables(cost, nonneg, coeffs)
    cost = [cost[i] for i in keep]
    nonneg = [nonneg[i] for i in keep]
    coeffs = [coeffs[i] for i in keep]
    # Equilibrate the columns; rescaling a variable and its cost by the
    # same factor preserves the optimal value and keeps the iteration
    # from stalling on mixed matrix norms.
    scales = [max(np.linalg.norm(m), 1e-12) for m in coeffs]
    coeffs = [m / s for m, s in zip(coeffs, scales)]
    cost = [v / s for v, s in zip(cost, scales)]
    k = len(cost)
    sign = -1.0 if sense == "max" else 1.0
    c = cvxopt.matrix([sign * v for v in cost])
    gs_cols = np.column_stack([-m.flatten(order="F") for m in coeffs])
    gs = [cvxopt.matrix(gs_cols)]
    hs = [cvxopt.matrix(constant)]
    rows = [i for i, flag in enumerate(nonneg) if flag]
    gl_np = np.zeros((len(rows), k))
    for r, i in enumerate(rows):
        gl_np[r, i] = -1.0
    gl = cvxopt.matrix(gl_np)
    hl = cvxopt.matrix([0.0] * len(rows))
    opts = {k2: v for k2, v in SOLVER_OPTS.items() if k2 != "max_iters"}
    opts["maxiters"] = SOLVER_OPTS["max_iters"]
    opts["show_progress"] = False
    sol = cvxopt.solvers.sdp(c, Gl=gl, hl=hl, Gs=gs, hs=hs, options=opts)
    value = sol["primal objective"]
    return sol["status"], sign * value


def main():
    if len(sys.argv) < 2:
        print(__doc__)
        return 1
    for path in sys.argv[1:]:
        with open(path) as f:
            text = f.read()
        sense, form, dim, a, b, c = parse(text)
        if form == "matrix":
            status, value = solve_matrix(sense, dim, a, b, c)
        else:
            status, value = solve_lmi(sense, dim, a)
        print(f"{path}: {status} optimal {value:.12e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
