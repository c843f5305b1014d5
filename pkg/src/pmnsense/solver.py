"""MMV sparse Bayesian learning by unitary approximate message passing.

Model R = C' A + Z with row-sparse A. After the unitary transform
F = U^H R = Phi A + U^H Z (Phi = Lambda V from the SVD C' = U Lambda V),
each column runs scalar-variance AMP while one precision vector gamma is
shared by all columns, which ties them to a common support.

Dimensions: measurement length N (rows of R), sparse length N_p (columns of
C'), Upsilon columns. Iterates are computed for all columns at once; the
column axis is the last one everywhere.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numba
import numpy as np

from .canceller import DelayDictionary, MeasurementMatrix


class SolverDivergenceError(RuntimeError):
    pass


@dataclass
class SolverState:
    x: np.ndarray            # (N_p, Upsilon)
    tau_x: np.ndarray        # (Upsilon,)
    s: np.ndarray            # (N, Upsilon)
    gamma: np.ndarray        # (N_p,)
    beta: float
    eps: float
    t: int = 0


@dataclass
class SparseEstimate:
    A: np.ndarray
    gamma: np.ndarray
    beta: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)   # (t, rel_change, beta) per iteration


def initial_state(N: int, Np: int, cols: int) -> SolverState:
    return SolverState(x=np.zeros((Np, cols), dtype=complex), tau_x=np.ones(cols),
                       s=np.zeros((N, cols), dtype=complex), gamma=np.ones(Np),
                       beta=1.0, eps=0.001)


@dataclass(frozen=True)
class _Operator:
    """Phi restricted to its rows with nonzero lambda.

    On rows with lambda = 0 (present when N > N_p) tau_p = 0, so p = h = 0
    there and they contribute only the constant |F_row|^2 to the noise
    precision update; nothing else reads them.
    """

    Phi: np.ndarray       # (k, N_p)
    PhiH: np.ndarray      # (N_p, k)
    lam: np.ndarray       # (k,)
    N: int                # full measurement length


def _operator(dictionary: DelayDictionary) -> _Operator:
    keep = dictionary.lam > 0
    Phi = np.ascontiguousarray(dictionary.Phi[keep])
    return _Operator(Phi, np.ascontiguousarray(Phi.conj().T), dictionary.lam[keep],
                     dictionary.Phi.shape[0])


def uamp_sbl_iteration(F, op: _Operator, st: SolverState,
                       tail_energy: float = 0.0) -> tuple[SolverState, float]:
    """One pass of the loop on the kept rows F; returns the new state and the
    mean relative change of x."""
    Np = op.Phi.shape[1]
    cols = F.shape[1]
    tau_p = op.lam[:, None] * st.tau_x[None, :]
    p = op.Phi @ st.x - tau_p * st.s
    denom = 1.0 + st.beta * tau_p
    v_h = tau_p / denom
    h = (st.beta * tau_p * F + p) / denom
    r = F - h
    resid = float(np.sum(r.real ** 2 + r.imag ** 2))
    beta = cols * op.N / (resid + tail_energy + float(v_h.sum()))
    tau_s = 1.0 / (tau_p + 1.0 / beta)
    s = tau_s * (F - p)
    tau_q = Np / (op.lam @ tau_s)
    q = st.x + tau_q[None, :] * (op.PhiH @ s)
    shrink = 1.0 / (1.0 + tau_q[None, :] * st.gamma[:, None])
    tau_x = tau_q / Np * shrink.sum(axis=0)
    x = q * shrink
    gamma = (2.0 * st.eps + 1.0) / ((x.real ** 2 + x.imag ** 2).mean(axis=1) + tau_x.mean())
    eps = 0.5 * np.sqrt(max(np.log(gamma.mean()) - np.log(gamma).mean(), 0.0))
    if not (np.isfinite(beta) and np.isfinite(eps) and np.isfinite(x).all()):
        raise SolverDivergenceError(f"non-finite iterate at iteration {st.t + 1}")

    d = x - st.x
    num = (d.real ** 2 + d.imag ** 2).sum(axis=0)
    den = (x.real ** 2 + x.imag ** 2).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(den > 0, num / den, np.where(num > 0, np.inf, 0.0))
    change = float(ratio.mean())
    return SolverState(x, tau_x, s, gamma, float(beta), float(eps), st.t + 1), change


@numba.njit(cache=True)
def _output_side(F, P, s, lam, tau_x, beta):
    # in place: P <- p = Phi x - tau_p * s; returns (sum |f - h|^2, sum v_h)
    k, cols = F.shape
    resid = 0.0
    vsum = 0.0
    for i in range(k):
        for v in range(cols):
            tp = lam[i] * tau_x[v]
            p = P[i, v] - tp * s[i, v]
            den = 1.0 + beta * tp
            h = (beta * tp * F[i, v] + p) / den
            e = F[i, v] - h
            resid += e.real * e.real + e.imag * e.imag
            vsum += tp / den
            P[i, v] = p
    return resid, vsum


@numba.njit(cache=True)
def _residual_side(F, P, s, lam, tau_x, beta, Np):
    # in place: s <- tau_s * (f - p); returns tau_q per column
    k, cols = F.shape
    tau_q = np.empty(cols)
    inv_beta = 1.0 / beta
    for v in range(cols):
        acc = 0.0
        for i in range(k):
            ts = 1.0 / (lam[i] * tau_x[v] + inv_beta)
            s[i, v] = ts * (F[i, v] - P[i, v])
            acc += lam[i] * ts
        tau_q[v] = Np / acc
    return tau_q


@numba.njit(cache=True)
def _input_side(x_old, G, tau_q, gamma):
    Np, cols = x_old.shape
    x = np.empty_like(x_old)
    tau_x = np.empty(cols)
    row_power = np.zeros(Np)
    change = 0.0
    for v in range(cols):
        shsum = 0.0
        num = 0.0
        den = 0.0
        for n in range(Np):
            sh = 1.0 / (1.0 + tau_q[v] * gamma[n])
            xn = (x_old[n, v] + tau_q[v] * G[n, v]) * sh
            x[n, v] = xn
            shsum += sh
            a2 = xn.real * xn.real + xn.imag * xn.imag
            row_power[n] += a2
            d = xn - x_old[n, v]
            num += d.real * d.real + d.imag * d.imag
            den += a2
        tau_x[v] = tau_q[v] / Np * shsum
        if den > 0:
            change += num / den
        elif num > 0:
            change += np.inf
    return x, tau_x, row_power / cols, change / cols


def fused_iteration(F, op: _Operator, st: SolverState,
                    tail_energy: float = 0.0) -> tuple[SolverState, float]:
    """Same update as :func:`uamp_sbl_iteration` with the elementwise steps fused."""
    Np = op.Phi.shape[1]
    cols = F.shape[1]
    P = op.Phi @ st.x
    s = st.s.copy()
    resid, vsum = _output_side(F, P, s, op.lam, st.tau_x, st.beta)
    beta = cols * op.N / (resid + tail_energy + vsum)
    tau_q = _residual_side(F, P, s, op.lam, st.tau_x, beta, float(Np))
    G = op.PhiH @ s
    x, tau_x, row_power, change = _input_side(st.x, G, tau_q, st.gamma)
    gamma = (2.0 * st.eps + 1.0) / (row_power + tau_x.mean())
    eps = 0.5 * np.sqrt(max(np.log(gamma.mean()) - np.log(gamma).mean(), 0.0))
    if not (np.isfinite(beta) and np.isfinite(eps) and np.isfinite(x).all()):
        raise SolverDivergenceError(f"non-finite iterate at iteration {st.t + 1}")
    return SolverState(x, tau_x, s, gamma, float(beta), float(eps), st.t + 1), float(change)


_BACKENDS = {"numpy": uamp_sbl_iteration, "fused": fused_iteration}


def solve_mmv(R, dictionary: DelayDictionary, delta_x: float = 1e-6, t_max: int = 300,
              normalize: bool = True, trace: bool = False,
              backend: str = "fused") -> SparseEstimate:
    """Estimate the row-sparse A in R = C' A + Z.

    R is rescaled internally to unit mean power per entry (undone on output),
    so the unit initial precisions are meaningful whatever the physical scale
    and the detected support is invariant to scaling R.
    """
    if delta_x <= 0 or t_max < 1:
        raise ValueError("need delta_x > 0 and t_max >= 1")
    R = R.R if isinstance(R, MeasurementMatrix) else np.asarray(R)
    N, cols = R.shape
    if N != dictionary.C.shape[0]:
        raise ValueError(f"R has {N} rows, dictionary has {dictionary.C.shape[0]}")
    if not np.isfinite(R).all():
        raise SolverDivergenceError("non-finite measurement")
    scale = 1.0
    if normalize:
        power = np.sqrt(np.mean(np.abs(R) ** 2))
        scale = power if power > 0 else 1.0
    step = _BACKENDS[backend]
    op = _operator(dictionary)
    F_full = dictionary.U.conj().T @ (R / scale)
    keep = dictionary.lam > 0
    F = np.ascontiguousarray(F_full[keep])
    tail = float(np.sum(np.abs(F_full[~keep]) ** 2))
    st = initial_state(F.shape[0], dictionary.num_cols, cols)
    history = []
    converged = False
    while True:
        st, change = step(F, op, st, tail)
        if trace:
            history.append((st.t, float(change), float(st.beta / scale ** 2)))
        if change <= delta_x:
            converged = True
            break
        if st.t >= t_max:
            break
    return SparseEstimate(st.x * scale, st.gamma / scale ** 2, st.beta / scale ** 2,
                          st.t, converged, history)


def detect_support(est, rel_threshold: float = 0.1) -> list[int]:
    """Rows of A whose 2-norm is at least ``rel_threshold`` times the largest row norm."""
    if not 0.0 < rel_threshold < 1.0:
        raise ValueError("rel_threshold must lie in (0, 1)")
    A = est.A if isinstance(est, SparseEstimate) else np.asarray(est)
    if A.size == 0:
        return []
    norms = np.linalg.norm(A, axis=1)
    top = norms.max()
    if top == 0:
        return []
    return [int(i) for i in np.flatnonzero(norms >= rel_threshold * top)]


def write_trace(est: SparseEstimate, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "rel_change", "beta"])
        for t, change, beta in est.trace:
            w.writerow([t, repr(change), repr(beta)])
