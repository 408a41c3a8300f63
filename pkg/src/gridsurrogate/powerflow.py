"""AC power flow: nodal power, Newton-Raphson and Gauss-Seidel solvers, line flows.

Sign convention: a :class:`LoadVector` holds *consumption* at the load buses.
The specified nodal injection at a load bus is therefore ``-(p_d + j q_d)``;
:func:`nodal_power` returns injections.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Network, build_admittance

__all__ = [
    "LoadVector",
    "VoltageState",
    "PfSolution",
    "LineFlow",
    "PowerFlowError",
    "ConvergenceError",
    "SingularJacobianError",
    "nodal_power",
    "specified_injection",
    "mismatch",
    "solve_newton_raphson",
    "solve_gauss_seidel",
    "line_flows",
    "polar_from_rect",
    "rect_from_polar",
    "DENSE_LIMIT",
]

DENSE_LIMIT = 64


class PowerFlowError(RuntimeError):
    pass


class ConvergenceError(PowerFlowError):
    def __init__(self, message: str, iterations: int, max_mismatch: float):
        self.iterations = iterations
        self.max_mismatch = max_mismatch
        super().__init__(f"{message} (iterations={iterations}, max mismatch={max_mismatch:.3e})")


class SingularJacobianError(PowerFlowError):
    pass


@dataclass(frozen=True)
class LoadVector:
    """Active/reactive consumption per load bus, p.u."""

    p_d: np.ndarray
    q_d: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p_d, dtype=float)
        q = np.asarray(self.q_d, dtype=float)
        if p.shape != q.shape or p.ndim != 1:
            raise ValueError("p_d and q_d must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValueError("loads must be finite")
        object.__setattr__(self, "p_d", p)
        object.__setattr__(self, "q_d", q)

    @classmethod
    def zeros(cls, n: int) -> "LoadVector":
        return cls(np.zeros(n), np.zeros(n))

    def __len__(self):
        return len(self.p_d)


@dataclass(frozen=True)
class VoltageState:
    """Rectangular bus voltages. Arrays may carry leading batch dimensions."""

    mu: np.ndarray
    omega: np.ndarray

    @classmethod
    def from_phasor(cls, V) -> "VoltageState":
        V = np.asarray(V, dtype=complex)
        return cls(V.real.copy(), V.imag.copy())

    @classmethod
    def flat(cls, n_total: int) -> "VoltageState":
        return cls(np.ones(n_total), np.zeros(n_total))

    @property
    def phasor(self) -> np.ndarray:
        return np.asarray(self.mu) + 1j * np.asarray(self.omega)

    @property
    def v(self) -> np.ndarray:
        return np.hypot(self.mu, self.omega)

    @property
    def delta(self) -> np.ndarray:
        return np.arctan2(self.omega, self.mu)


@dataclass(frozen=True)
class PfSolution:
    state: VoltageState
    ref_injection: complex
    iterations: int
    max_mismatch: float
    converged: bool = True


@dataclass(frozen=True)
class LineFlow:
    """Per-line flows. ``p``/``q``/``current`` are at the sending (from) end;
    ``p_to``/``q_to`` are the powers entering the line at the receiving end."""

    current: np.ndarray
    p: np.ndarray
    q: np.ndarray
    p_to: np.ndarray
    q_to: np.ndarray

    @property
    def losses(self) -> np.ndarray:
        return self.p + self.p_to


def polar_from_rect(state: VoltageState) -> tuple[np.ndarray, np.ndarray]:
    """Magnitude and angle (rad) of each bus voltage."""
    return state.v, state.delta


def rect_from_polar(v, delta) -> VoltageState:
    v = np.asarray(v, dtype=float)
    delta = np.asarray(delta, dtype=float)
    return VoltageState(v * np.cos(delta), v * np.sin(delta))


def nodal_power(Y, state: VoltageState) -> tuple[np.ndarray, np.ndarray]:
    """Active and reactive injections in rectangular form.

    ``p_i = sum_j g_ij (mu_i mu_j + w_i w_j) + b_ij (w_i mu_j - mu_i w_j)``
    ``q_i = sum_j g_ij (w_i mu_j - mu_i w_j) - b_ij (mu_i mu_j + w_i w_j)``

    ``state`` arrays have shape ``(n,)`` or ``(batch, n)``.
    """
    mu = np.asarray(state.mu, dtype=float)
    w = np.asarray(state.omega, dtype=float)
    if mu.shape[-1] != Y.shape[0]:
        raise ValueError(f"state has {mu.shape[-1]} buses, admittance matrix has {Y.shape[0]}")
    G = Y.real
    B = Y.imag
    # (G mu), (G w), ... for each row of a batch
    Gmu = (G @ mu.T).T
    Gw = (G @ w.T).T
    Bmu = (B @ mu.T).T
    Bw = (B @ w.T).T
    p = mu * (Gmu - Bw) + w * (Gw + Bmu)
    q = w * (Gmu - Bw) - mu * (Gw + Bmu)
    return p, q


def specified_injection(net: Network, loads: LoadVector) -> np.ndarray:
    if len(loads) != net.n_load:
        raise ValueError(f"expected {net.n_load} load values, got {len(loads)}")
    S = np.zeros(net.n_total, dtype=complex)
    S[net.load_buses] = -(loads.p_d + 1j * loads.q_d)
    return S


def mismatch(Y, net: Network, loads: LoadVector, state: VoltageState) -> np.ndarray:
    """Largest |specified - computed| over P and Q at the load buses, per row."""
    p, q = nodal_power(Y, state)
    S = specified_injection(net, loads)
    pq = net.load_buses
    dp = np.abs(S.real[pq] - p[..., pq])
    dq = np.abs(S.imag[pq] - q[..., pq])
    return np.maximum(dp.max(axis=-1), dq.max(axis=-1))


def _solve_linear(J, rhs, dense: bool) -> np.ndarray:
    try:
        if dense:
            dx = np.linalg.solve(J.toarray() if sp.issparse(J) else J, rhs)
        else:
            dx = spla.splu(J.tocsc()).solve(rhs)
    except (np.linalg.LinAlgError, RuntimeError) as exc:
        raise SingularJacobianError(f"singular Jacobian: {exc}") from None
    if not np.all(np.isfinite(dx)):
        raise SingularJacobianError("Jacobian solve produced non-finite values")
    return dx


def solve_newton_raphson(
    net: Network,
    loads: LoadVector,
    tol: float = 1e-8,
    max_iter: int = 50,
    Y=None,
) -> PfSolution:
    """Polar Newton-Raphson from a flat start.

    Unknowns are angle and magnitude at every load bus; the Jacobian is the
    usual [dP/dθ dP/d|V|; dQ/dθ dQ/d|V|] block, solved dense for small
    systems and with sparse LU above :data:`DENSE_LIMIT` buses.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if Y is None:
        Y = build_admittance(net)
    Y = sp.csr_matrix(Y)
    S_spec = specified_injection(net, loads)
    pq = net.load_buses
    npq = len(pq)
    dense = net.n_total <= DENSE_LIMIT

    Va = np.zeros(net.n_total)
    Vm = np.ones(net.n_total)
    V = Vm * np.exp(1j * Va)
    Yd = Y.toarray() if dense else None

    def residual(V):
        mis = V * np.conj(Y @ V) - S_spec
        return np.concatenate([mis[pq].real, mis[pq].imag])

    F = residual(V)
    norm_f = float(np.max(np.abs(F)))
    it = 0
    while norm_f > tol:
        if it >= max_iter:
            raise ConvergenceError("Newton-Raphson did not converge", it, norm_f)
        Ibus = Y @ V
        if dense:
            Vnorm = V / np.abs(V)
            dS_dVm = V[:, None] * np.conj(Yd * Vnorm[None, :]) + np.diag(np.conj(Ibus) * Vnorm)
            dS_dVa = 1j * V[:, None] * np.conj(np.diag(Ibus) - Yd * V[None, :])
            dS_dVa = dS_dVa[np.ix_(pq, pq)]
            dS_dVm = dS_dVm[np.ix_(pq, pq)]
            J = np.block([[dS_dVa.real, dS_dVm.real], [dS_dVa.imag, dS_dVm.imag]])
        else:
            diagV = sp.diags(V)
            diagVnorm = sp.diags(V / np.abs(V))
            dS_dVm = diagV @ (Y @ diagVnorm).conj() + sp.diags(np.conj(Ibus)) @ diagVnorm
            dS_dVa = 1j * diagV @ (sp.diags(Ibus) - Y @ diagV).conj()
            dS_dVa = sp.csr_matrix(dS_dVa)[pq][:, pq]
            dS_dVm = sp.csr_matrix(dS_dVm)[pq][:, pq]
            J = sp.bmat([[dS_dVa.real, dS_dVm.real], [dS_dVa.imag, dS_dVm.imag]], format="csr")
        dx = _solve_linear(J, -F, dense)
        Va[pq] += dx[:npq]
        Vm[pq] += dx[npq:]
        V = Vm * np.exp(1j * Va)
        it += 1
        F = residual(V)
        norm_f = float(np.max(np.abs(F)))
        if not np.isfinite(norm_f) or np.any(Vm <= 0):
            raise ConvergenceError("Newton-Raphson diverged", it, norm_f)

    S0 = V[0] * np.conj((Y @ V)[0])
    return PfSolution(VoltageState.from_phasor(V), complex(S0), it, norm_f, True)


def solve_gauss_seidel(
    net: Network,
    loads: LoadVector,
    tol: float = 1e-10,
    max_iter: int = 5000,
    Y=None,
) -> PfSolution:
    """Gauss-Seidel fixed point ``V_k <- (conj(S_k)/conj(V_k) - sum_{i!=k} Y_ki V_i) / Y_kk``.

    Plain sequential sweeps over the load buses; meant as an independent
    reference for the Newton-Raphson solver, not for speed.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if Y is None:
        Y = build_admittance(net)
    Y = sp.csr_matrix(Y)
    S_spec = specified_injection(net, loads)
    n = net.n_total
    pq = [int(k) for k in net.load_buses]
    # neighbour lists as plain Python complex for fast scalar sweeps
    rows = []
    for k in pq:
        lo, hi = Y.indptr[k], Y.indptr[k + 1]
        idx = Y.indices[lo:hi]
        data = Y.data[lo:hi]
        off = [(int(i), complex(y)) for i, y in zip(idx, data) if i != k]
        rows.append((k, complex(Y[k, k]), off, complex(np.conj(S_spec[k]))))
    V = [1.0 + 0.0j] * n

    def max_mis(Varr):
        mis = Varr * np.conj(Y @ Varr) - S_spec
        return float(np.max(np.abs(np.concatenate([mis[pq].real, mis[pq].imag]))))

    Varr = np.array(V)
    norm_f = max_mis(Varr)
    it = 0
    while norm_f > tol:
        if it >= max_iter:
            raise ConvergenceError("Gauss-Seidel did not converge", it, norm_f)
        for k, ykk, off, s_conj in rows:
            acc = 0j
            for i, yki in off:
                acc += yki * V[i]
            V[k] = (s_conj / V[k].conjugate() - acc) / ykk
        it += 1
        Varr = np.array(V)
        norm_f = max_mis(Varr)
        if not np.isfinite(norm_f) or np.any(np.abs(Varr) < 1e-6) or np.any(np.abs(Varr) > 1e3):
            raise ConvergenceError("Gauss-Seidel diverged", it, norm_f)

    S0 = Varr[0] * np.conj((Y @ Varr)[0])
    return PfSolution(VoltageState.from_phasor(Varr), complex(S0), it, norm_f, True)


def line_flows(net: Network, Y, state: VoltageState) -> LineFlow:
    """Line current and power at both ends, for one state or a batch.

    ``I_ij = y (V_i - V_j) + j b_sh/2 V_i`` and ``S_ij = V_i conj(I_ij)``.
    ``Y`` is accepted for interface symmetry; line data come from ``net``.
    """
    f, t, y, bsh = net.line_arrays()
    V = state.phasor
    Vf = V[..., f]
    Vt = V[..., t]
    I_ft = y * (Vf - Vt) + 0.5j * bsh * Vf
    I_tf = y * (Vt - Vf) + 0.5j * bsh * Vt
    S_ft = Vf * np.conj(I_ft)
    S_tf = Vt * np.conj(I_tf)
    return LineFlow(np.abs(I_ft), S_ft.real, S_ft.imag, S_tf.real, S_tf.imag)
