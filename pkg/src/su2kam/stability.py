"""Time integration of the linearised flow and the stability checks built on it."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .decay_norm import ToeplitzBlockOperator, phase_space_slice, phase_space_weights, vector_norm
from .linop import NlsModel, build_T, build_diagonal

ROTATING = "rotating"
LAB = "lab"


class IntegrationError(RuntimeError):
    """The integrator stopped early; ``partial`` holds what was computed."""

    def __init__(self, msg, partial):
        super().__init__(msg)
        self.partial = partial


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    s: float
    model: NlsModel
    lam: float
    tol: float
    accepted: int
    rejected: int
    error_sum: float
    band: tuple
    frame: str

    def norms(self, s: float | None = None) -> np.ndarray:
        s = self.s if s is None else s
        w = phase_space_weights(self.model.M_max, self.model.group, s)
        return np.sqrt((np.abs(self.states) ** 2 * w**2).sum(axis=1))


def flow_coefficients(model: NlsModel, lam: float):
    """``(V, theta, d)`` with ``dh/dt = -i (diag(d) + sum_k exp(i theta_k t) V_k) h``."""
    T = build_T(model)
    hs, blocks = [], []
    for h, blk in zip(T.shift_vectors(), T.flat()):
        if np.any(blk):
            hs.append(h)
            blocks.append(-model.eps * blk)
    n = 2 * (model.M_max + 1)
    if not blocks or model.eps == 0:
        V, theta = np.zeros((0, n, n), complex), np.zeros(0)
    else:
        V = np.array(blocks)
        theta = lam * (np.array(hs, dtype=float) @ model.freq.vector)
    return V, theta, build_diagonal(model).signed()


def evolve_linearized(model: NlsModel, lam: float, h0, t_end: float, tol: float = 1e-10, n_out: int = 100,
                      s: float = 2.0, frame: str = ROTATING, t_out=None, backend=None,
                      max_steps: int = 100_000_000) -> Trajectory:
    """Integrate ``dh/dt = -i L(lam w t) h`` with an adaptive Dormand-Prince 5(4) pair.

    ``tol`` is the relative tolerance; the absolute one is ``tol`` times the
    sup norm of ``h0``.  The band ``(inf, sup)`` of ``|h(t)|_s / |h(0)|_s``
    is tracked at every accepted step, not only at the output times.
    Negative ``t_end`` integrates backwards.
    """
    if frame not in (ROTATING, LAB):
        raise ValueError(f"unknown frame {frame!r}")
    h0 = np.asarray(h0, dtype=np.complex128)
    V, theta, dvec = flow_coefficients(model, lam)
    if t_out is None:
        t_out = np.linspace(0.0, t_end, n_out + 1)
    t_out = np.asarray(t_out, dtype=float)
    w = phase_space_weights(model.M_max, model.group, s) ** 2
    atol = tol * max(float(np.abs(h0).max(initial=0.0)), 1e-300)
    impl = backend or kernels
    Y, info = impl.dopri5_linear(V, theta, dvec, h0, 0.0, float(t_end), tol, atol, frame == ROTATING,
                                 t_out, w, 0.0, max_steps)
    acc, rej, err, lo, hi, status = info
    traj = Trajectory(t_out, Y, s, model, lam, tol, int(acc), int(rej), float(err), (float(lo), float(hi)), frame)
    if status:
        reason = "step size underflow" if status == 1 else "step budget exhausted"
        raise IntegrationError(f"integration stopped early: {reason}", traj)
    return traj


def evolve_reduced(mu_inf, v0, t) -> np.ndarray:
    """``v_{m,a}(t) = exp(-i a mu_m t) v_{m,a}(0)``; ``t`` may be an array (leading axis of the result)."""
    mu = np.asarray(mu_inf, dtype=float)
    signed = np.concatenate([mu, -mu])
    t = np.asarray(t, dtype=float)
    v0 = np.asarray(v0, dtype=np.complex128)
    return np.exp(-1j * np.multiply.outer(t, signed)) * v0


def stability_band(traj: Trajectory, s: float | None = None) -> tuple[float, float]:
    """Extremes of ``|h(t)|_s / |h(0)|_s``; at the tracked index this covers every accepted step."""
    if not len(traj.states):
        raise ValueError("empty trajectory")
    if s is None or s == traj.s:
        lo, hi = traj.band
        r = traj.norms() / traj.norms()[0]
        return min(lo, float(r.min())), max(hi, float(r.max()))
    nrm = traj.norms(s)
    if nrm[0] == 0:
        raise ValueError("initial state vanishes")
    r = nrm / nrm[0]
    return float(r.min()), float(r.max())


def band_halfwidth(band: tuple) -> float:
    return max(abs(band[0] - 1.0), abs(band[1] - 1.0))


def transform_error(psi_inv: ToeplitzBlockOperator, phis, h, s: float = 2.0) -> float:
    """``sup_phi |Psi(phi)^-1 h - h|_s / |h|_s`` over the sampled angles."""
    h = np.asarray(h, dtype=np.complex128)
    g, M = psi_inv.group, psi_inv.M_max
    base = vector_norm(h, s, g, M)
    if base == 0:
        return 0.0
    out = 0.0
    for phi in np.atleast_2d(phis):
        out = max(out, vector_norm(phase_space_slice(psi_inv, phi) @ h - h, s, g, M) / base)
    return out


def random_angles(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.0, 2 * math.pi, size=(n, d))


@dataclass(frozen=True)
class FlowComparison:
    times: np.ndarray
    deviation: np.ndarray
    bound: np.ndarray
    passed: bool


def conjugated_flow(psi, psi_inv, mu_inf, lam: float, omega, h0, times) -> np.ndarray:
    """``Psi(lam w t) exp(-i a mu t) Psi(0)^-1 h0`` at each time."""
    v0 = phase_space_slice(psi_inv, np.zeros(len(omega))) @ np.asarray(h0, complex)
    vt = evolve_reduced(mu_inf, v0, times)
    return np.array([phase_space_slice(psi, lam * t * np.asarray(omega)) @ v for t, v in zip(times, vt)])


def compare_flows(traj: Trajectory, psi, psi_inv, mu_inf, residual: float, s: float | None = None) -> FlowComparison:
    """Pointwise deviation between the integrated and the conjugated flow.

    Allowed: ``residual * t * |h0|_s + 10 * max(tol |h0|_s, error_sum)``,
    where ``residual`` is the verified reduction residual and ``error_sum``
    adds up the integrator's local error estimates.
    """
    s = traj.s if s is None else s
    model = traj.model
    g, M = model.group, model.M_max
    h0 = traj.states[0]
    ref = conjugated_flow(psi, psi_inv, mu_inf, traj.lam, model.freq.vector, h0, traj.times)
    dev = np.array([vector_norm(a - b, s, g, M) for a, b in zip(traj.states, ref)])
    n0 = vector_norm(h0, s, g, M)
    integ = 10 * max(traj.tol * n0, traj.error_sum * phase_space_weights(M, g, s).max())
    bound = residual * np.abs(traj.times) * n0 + integ
    return FlowComparison(traj.times, dev, bound, bool(np.all(dev <= bound)))


def reality_defect(traj: Trajectory) -> float:
    """``max_t |h^-(t) - conj(h^+(t))|`` relative to ``|h(0)|``."""
    k = traj.model.M_max + 1
    st = traj.states
    base = float(np.abs(st[0]).max(initial=0.0)) or 1.0
    return float(np.abs(st[:, k:] - np.conj(st[:, :k])).max(initial=0.0)) / base


def real_initial_state(M_max: int, rng: np.random.Generator, modes: int | None = None, decay: float = 1.0) -> np.ndarray:
    """Random state in the invariant subspace ``h^- = conj(h^+)``."""
    k = M_max + 1
    top = k if modes is None else min(modes, k)
    hp = np.zeros(k, complex)
    hp[:top] = (rng.normal(size=top) + 1j * rng.normal(size=top)) * np.exp(-decay * np.arange(top))
    return np.concatenate([hp, np.conj(hp)])


def write_norms_csv(traj: Trajectory, s_values, path) -> None:
    cols = ["t"] + [f"norm_s{s:g}" for s in s_values]
    norms = [traj.norms(s) for s in s_values]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for i, t in enumerate(traj.times):
            fh.write(",".join([float(t).hex()] + [float(n[i]).hex() for n in norms]) + "\n")
