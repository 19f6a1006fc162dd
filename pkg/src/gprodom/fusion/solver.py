"""Factor graph container and a Levenberg-Marquardt solver on sparse normal equations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .factors import STATE_DIM, STATE_NAMES, TH, Factor, residual
from .preint import wrap_angle


class UnderConstrainedError(ValueError):
    """Normal equations are singular; ``variables`` lists the offending (state, name) pairs."""

    def __init__(self, message: str, variables: list[tuple[int, str]]):
        super().__init__(message)
        self.variables = variables


@dataclass
class FactorGraph:
    times: np.ndarray                 # (n,) state timestamps
    states: np.ndarray                # (n, 6) current estimate
    factors: list[Factor] = field(default_factory=list)
    cost_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.states = np.array(self.states, dtype=np.float64).reshape(-1, STATE_DIM)
        if self.times.size != self.states.shape[0]:
            raise ValueError(f"{self.times.size} timestamps for {self.states.shape[0]} states")

    @property
    def n_states(self) -> int:
        return self.states.shape[0]

    def add(self, factor: Factor) -> None:
        bad = [k for k in factor.states if not 0 <= k < self.n_states]
        if bad:
            raise ValueError(f"{factor.kind} factor references missing state(s) {bad}")
        self.factors.append(factor)

    def kinds(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for f in self.factors:
            out[f.kind] = out.get(f.kind, 0) + 1
        return out


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 100
    rel_tol: float = 1e-9
    lambda_init: float = 1e-4
    lambda_max: float = 1e16
    rank_tol: float = 1e-10


@dataclass
class SolveResult:
    states: np.ndarray
    cost_history: list[float]
    iterations: int
    converged: bool
    rejected_steps: int = 0


def linearize(graph: FactorGraph, states: np.ndarray | None = None) -> tuple[np.ndarray, sparse.csr_matrix]:
    """Stacked whitened residual and sparse Jacobian at ``states``."""
    states = graph.states if states is None else states
    rows, cols, vals, res = [], [], [], []
    row = 0
    for f in graph.factors:
        r, blocks = residual(f, states)
        res.append(r)
        for k, J in blocks.items():
            rr, cc = np.nonzero(J)
            rows.append(rr + row)
            cols.append(cc + k * STATE_DIM)
            vals.append(J[rr, cc])
        row += r.size
    n = graph.n_states * STATE_DIM
    if row == 0:
        return np.zeros(0), sparse.csr_matrix((0, n))
    J = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(row, n))
    return np.concatenate(res), J


def total_cost(graph: FactorGraph, states: np.ndarray | None = None) -> float:
    states = graph.states if states is None else states
    return 0.5 * float(sum(np.sum(residual(f, states)[0] ** 2) for f in graph.factors))


def _name(var: int) -> tuple[int, str]:
    return var // STATE_DIM, STATE_NAMES[var % STATE_DIM]


def deficient_variables(H: sparse.spmatrix, tol: float = 1e-10) -> list[tuple[int, str]]:
    """Variables at which a Jacobi-scaled LU of the normal matrix finds (near-)zero pivots.

    Empty columns are always reported; otherwise the variables named span
    (one basis of) the null space, e.g. the global x, y, heading gauge.
    """
    H = sparse.csc_matrix(H)
    d = H.diagonal()
    empty = np.nonzero(d <= 0)[0]
    if empty.size:
        return [_name(int(v)) for v in empty]
    s = 1.0 / np.sqrt(d)
    Hs = sparse.csc_matrix(sparse.diags(s) @ H @ sparse.diags(s))
    try:
        lu = splinalg.splu(Hs, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                           options={"SymmetricMode": True})
    except RuntimeError:
        # exactly singular: fall back to a dense rank-revealing decomposition
        w, vec = np.linalg.eigh(Hs.toarray())
        null = vec[:, w < tol * max(w.max(), 1.0)]
        return [_name(int(v)) for v in np.unique(np.argmax(np.abs(null), axis=0))]
    piv = np.abs(lu.U.diagonal())
    small = np.nonzero(piv < tol * max(piv.max(), 1.0))[0]
    return sorted(_name(int(lu.perm_c[k])) for k in small)


def _describe(vars_: list[tuple[int, str]], limit: int = 8) -> str:
    shown = ", ".join(f"state {k} {n}" for k, n in vars_[:limit])
    return shown + (f" and {len(vars_) - limit} more" if len(vars_) > limit else "")


def check_constrained(graph: FactorGraph, tol: float = 1e-10) -> None:
    """Raise :class:`UnderConstrainedError` when the normal equations are rank deficient."""
    _, J = linearize(graph)
    deficient = deficient_variables((J.T @ J).tocsc(), tol)
    has_prior = any(f.kind == "prior" for f in graph.factors)
    if not has_prior:
        raise UnderConstrainedError(
            "graph has no prior factor, so the global pose gauge is unconstrained; "
            f"rank-deficient variables: {_describe(deficient) or 'none detected numerically'}", deficient)
    if deficient:
        raise UnderConstrainedError(f"normal equations are singular; under-constrained variables: "
                                    f"{_describe(deficient)}", deficient)


def _apply(states: np.ndarray, delta: np.ndarray) -> np.ndarray:
    out = states + delta.reshape(states.shape)
    out[:, TH] = wrap_angle(out[:, TH])
    return out


def optimize(graph: FactorGraph, cfg: SolverConfig = SolverConfig()) -> SolveResult:
    """Levenberg-Marquardt with Marquardt diagonal scaling.

    Only cost-decreasing steps are accepted, so the recorded cost history is
    non-increasing.  Stops when the relative cost change of an accepted step
    drops below ``cfg.rel_tol`` or after ``cfg.max_iterations`` iterations.
    """
    check_constrained(graph, cfg.rank_tol)
    states = graph.states.copy()
    r, J = linearize(graph, states)
    cost = 0.5 * float(r @ r)
    history = [cost]
    lam = cfg.lambda_init
    converged = False
    rejected = 0
    it = 0
    while it < cfg.max_iterations:
        it += 1
        if cost == 0.0:
            converged = True
            break
        H = (J.T @ J).tocsc()
        g = J.T @ r
        diag = np.maximum(H.diagonal(), 1e-12)
        accepted = False
        while lam <= cfg.lambda_max:
            A = (H + sparse.diags(lam * diag)).tocsc()
            step = splinalg.spsolve(A, -g)
            if not np.all(np.isfinite(step)):
                lam *= 10.0
                continue
            trial = _apply(states, step)
            r_new, J_new = linearize(graph, trial)
            new_cost = 0.5 * float(r_new @ r_new)
            if new_cost < cost:
                accepted = True
                break
            rejected += 1
            lam *= 10.0
        if not accepted:
            # no decrease possible at any damping: stationary to working precision
            converged = True
            break
        rel = (cost - new_cost) / max(cost, 1e-300)
        states, r, J, cost = trial, r_new, J_new, new_cost
        history.append(cost)
        lam = max(lam / 10.0, 1e-12)
        if rel < cfg.rel_tol:
            converged = True
            break
    graph.states = states
    graph.cost_history = history
    return SolveResult(states, history, it, converged, rejected)
