"""Time-domain reduced dynamics: mode-sum reconstruction, observables, the
exact unitary oracle, a Nakajima-Zwanzig integrator and relaxation fits."""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import hs
from .errors import InsufficientDataError, InvalidInputError, PositivityWarning, StepTooLargeError
from .modes import AMPLITUDE_FLOOR

POSITIVITY_TOL = 1e-6
NZ_LOCAL_TOL = 1e-4
BASIS_LABELS = ("stationary-eigenbasis", "observable-eigenbasis", "computational")


def _fmt(x):
    return format(float(x), ".17g")


@dataclass(eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray          # (n_t, d, d)
    basis_label: str = "computational"
    positivity_log: np.ndarray = None
    basis: np.ndarray = None    # columns: basis vectors in computational coordinates

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=complex)
        if self.basis_label not in BASIS_LABELS:
            raise InvalidInputError(f"unknown basis label {self.basis_label!r}", "Trajectory",
                                    module="dynamics")
        if self.positivity_log is None:
            self.positivity_log = min_eigenvalues(self.states)

    @property
    def dim(self):
        return self.states.shape[1]

    def element(self, m, n):
        return self.states[:, m, n]

    def trace_defect(self):
        return float(np.abs(np.trace(self.states, axis1=1, axis2=2) - 1.0).max())

    def hermiticity_defect(self):
        return float(np.linalg.norm(self.states - self.states.conj().transpose(0, 2, 1),
                                    axis=(1, 2)).max())

    def in_basis(self, U, label):
        """Express every state in the orthonormal basis given by the columns of ``U``."""
        U = np.asarray(U, dtype=complex)
        states = U.conj().T @ self.states @ U
        return Trajectory(self.times, states, label, self.positivity_log.copy(), U)

    def to_csv(self, path):
        d = self.dim
        head = (["t"] + [f"re_{m}{n}" for m in range(d) for n in range(d)]
                + [f"im_{m}{n}" for m in range(d) for n in range(d)] + ["min_eigenvalue"])
        with open(path, "w") as fh:
            fh.write(",".join(head) + "\n")
            for t, rho, lo in zip(self.times, self.states, self.positivity_log):
                flat = rho.reshape(-1)
                row = [_fmt(t)] + [_fmt(x) for x in flat.real] + [_fmt(x) for x in flat.imag]
                fh.write(",".join(row + [_fmt(lo)]) + "\n")


@dataclass(eq=False)
class ObservableSeries:
    observable: np.ndarray
    times: np.ndarray
    values: np.ndarray
    strengths: np.ndarray       # |a_O,k|
    phases: np.ndarray          # phi_O,k
    O_inf: float
    omegas: np.ndarray = field(default=None)
    gammas: np.ndarray = field(default=None)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t,value\n")
            for t, v in zip(self.times, self.values):
                fh.write(f"{_fmt(t)},{_fmt(v)}\n")


def min_eigenvalues(states):
    return np.linalg.eigvalsh(hs.hermitize(np.asarray(states))).min(axis=1)


def _times(times):
    times = np.asarray(times, dtype=float).reshape(-1)
    if times.size == 0 or np.any(times < 0) or not np.all(np.isfinite(times)):
        raise InvalidInputError("times must be finite and non-negative", "reconstruct",
                                module="dynamics")
    return times


def _positivity(states, tol, op):
    lo = min_eigenvalues(states)
    bad = np.flatnonzero(lo < -tol)
    if bad.size:
        warnings.warn(f"{op}: {bad.size} of {lo.size} samples have a negative eigenvalue "
                      f"(worst {lo.min():.3g})", PositivityWarning, stacklevel=3)
    return lo


def stationary_basis(rho_inf):
    """Eigenvectors of ``rho_inf`` by descending eigenvalue, each with its
    largest-modulus component made real positive."""
    w, U = np.linalg.eigh(hs.hermitize(np.asarray(rho_inf, dtype=complex)))
    U = U[:, np.argsort(-w, kind="stable")]
    for j in range(U.shape[1]):
        i = int(np.argmax(np.abs(U[:, j])))
        U[:, j] *= np.exp(-1j * np.angle(U[i, j]))
    return U


def reconstruct(ms, times, positivity_tol=POSITIVITY_TOL):
    """``rho(t) = rho_inf + sum_k 1/2 (A_k e^{-i z_k t} + h.c.)`` on ``times``."""
    times = _times(times)
    d = ms.rho_inf.shape[0]
    states = np.broadcast_to(ms.rho_inf, (times.size, d, d)).astype(complex)
    for m in ms.modes:
        states = states + np.exp(-1j * m.z * times)[:, None, None] * m.A[None]
    states = hs.hermitize(states)
    lo = _positivity(states, positivity_tol, "reconstruct")
    return Trajectory(times, states, "computational", lo)


def observable_series(ms, O, times):
    """``O(t) = O_inf + sum_k |a_O,k| cos(omega_k t + phi_O,k) e^{-gamma_k t}``.

    ``a_O,k = (O|A_k)``; the sum runs over all modes, so a hermitian pair
    contributes two equal cosines.
    """
    O = hs.check_hermitian(O, "observable", "observable_series")
    times = _times(times)
    a = np.array([hs.hs_inner(O, m.A) for m in ms.modes], dtype=complex)
    om = np.array([m.omega for m in ms.modes])
    ga = np.array([m.gamma for m in ms.modes])
    strengths = np.abs(a)
    phases = -np.angle(a)
    O_inf = float(np.real(np.trace(O @ ms.rho_inf)))
    vals = np.full(times.size, O_inf)
    for s, p, w, g in zip(strengths, phases, om, ga):
        vals = vals + s * np.cos(w * times + p) * np.exp(-g * times)
    return ObservableSeries(O, times, vals, strengths, phases, O_inf, om, ga)


def oracle_exact(H_tot, rho0, rho_env, times, return_total=False):
    """Exact reduced dynamics from diagonalizing ``H_tot``.

    ``rho(t) = Tr_E[U(t) (rho0 (x) rho_env) U(t)^dagger]`` with
    ``U(t) = V e^{-iEt} V^dagger``.  With ``return_total`` the total states
    are returned as well.
    """
    H_tot = hs.check_hermitian(H_tot, "H_tot", "oracle_exact")
    rho0 = np.asarray(rho0, dtype=complex)
    rho_env = np.asarray(rho_env, dtype=complex)
    dims = hs.HilbertDims(rho0.shape[0], rho_env.shape[0])
    if H_tot.shape[0] != dims.d_tot:
        raise InvalidInputError("H_tot does not match rho0 (x) rho_env", "oracle_exact",
                                module="dynamics")
    times = _times(times)
    E, V = np.linalg.eigh(H_tot)
    R0 = V.conj().T @ hs.embed_system(rho0, rho_env) @ V
    phase = np.exp(-1j * np.outer(times, E))                    # (n_t, D)
    Rt = phase[:, :, None] * R0[None] * phase.conj()[:, None, :]
    total = V[None] @ Rt @ V.conj().T[None]
    ds, de = dims.d_sys, dims.d_env
    red = np.trace(total.reshape(-1, ds, de, ds, de), axis1=2, axis2=4)
    red = hs.hermitize(red)
    traj = Trajectory(times, red, "computational")
    if return_total:
        return traj, total
    return traj


def nz_integrate(partition, rho0, times, local_tol=NZ_LOCAL_TOL):
    """Integrate the Nakajima-Zwanzig equation on a uniform grid starting at 0.

    ``d rho/dt = -i L_P rho - int_0^t K(t-s) rho(s) ds`` with
    ``K(tau) = L_PQ exp(-i L_Q tau) L_QP``; trapezoidal memory quadrature
    and Heun predictor-corrector steps.  The local error estimate is the
    predictor-corrector difference.
    """
    times = _times(times)
    if times.size < 2 or times[0] != 0.0:
        raise InvalidInputError("need a uniform grid starting at t = 0", "nz_integrate",
                                module="dynamics")
    h = times[1] - times[0]
    if not np.allclose(np.diff(times), h, rtol=1e-9, atol=0.0):
        raise InvalidInputError("time grid is not uniform", "nz_integrate", module="dynamics")
    rho0 = hs.check_density_matrix(rho0, name="rho0", op="nz_integrate")
    d = rho0.shape[0]
    n = times.size
    LP = -1j * partition.L_P
    U = sla.expm(-1j * h * partition.L_Q)
    m = d * d
    K = np.empty((n, m, m), dtype=complex)
    M = partition.L_QP.copy()
    for j in range(n):
        K[j] = partition.L_PQ @ M
        M = U @ M
    # Kc[:, j*m:(j+1)*m] = K_j, history stored time-reversed (yr[n-1-i] = y_i)
    # so the memory sum is a single contiguous matrix-vector product
    Kc = np.ascontiguousarray(K.transpose(1, 0, 2)).reshape(m, n * m)
    y = np.empty((n, m), dtype=complex)
    yr = np.zeros((n, m), dtype=complex)
    y[0] = yr[n - 1] = hs.vec(rho0)

    def memory(k, y_k):
        # trapezoid for int_0^{t_k} K(t_k - s) y(s) ds, y_k is the value at t_k
        if k == 0:
            return np.zeros(m, dtype=complex)
        s = 0.5 * (K[0] @ y_k + K[k] @ y[0])
        if k > 1:
            s = s + Kc[:, m:k * m] @ yr[n - k:n - 1].reshape(-1)
        return h * s

    F = LP @ y[0]
    worst = 0.0
    for k in range(n - 1):
        pred = y[k] + h * F
        F_pred = LP @ pred - memory(k + 1, pred)
        y[k + 1] = yr[n - 2 - k] = y[k] + 0.5 * h * (F + F_pred)
        err = float(np.linalg.norm(y[k + 1] - pred))
        worst = max(worst, err)
        if err > local_tol:
            raise StepTooLargeError("local error estimate exceeds tolerance; refine the grid",
                                    "nz_integrate", t=times[k + 1], estimate=err, h=h)
        F = LP @ y[k + 1] - memory(k + 1, y[k + 1])
    states = y.reshape(n, d, d)
    states = hs.hermitize(states)
    traj = Trajectory(times, states, "computational")
    traj.local_error = worst
    return traj


def _dominant_omega(ms, t_ref):
    best, om = 0.0, 0.0
    gtol = 1e-9 * max(ms.scale, 1.0)
    for m in ms.modes:
        if abs(m.omega) <= 1e-6 * ms.scale or m.gamma <= gtol:
            continue
        w = hs.hs_norm(m.A) * np.exp(-m.gamma * t_ref)
        if w > best:
            best, om = w, abs(m.omega)
    return om


def _moving_average(t, x, width):
    if width <= 0:
        return x
    c = np.concatenate([[0.0], np.cumsum(0.5 * (x[1:] + x[:-1]) * np.diff(t))])
    out = np.empty_like(x)
    for i, ti in enumerate(t):
        lo = np.searchsorted(t, ti - 0.5 * width)
        hi = np.searchsorted(t, ti + 0.5 * width, side="right") - 1
        if hi <= lo:
            out[i] = x[i]
        else:
            out[i] = (c[hi] - c[lo]) / (t[hi] - t[lo])
    return out


def slow_eigenmatrix(ms):
    """Largest-modulus entries over the slowest mode (and its pair partner)."""
    slow = ms.slowest()
    if slow is None:
        return None
    g = slow.gamma
    group = [m for m in ms.decaying(ms.meta.get("amplitude_floor", AMPLITUDE_FLOOR),
                                    ms.meta.get("rho0_norm", 1.0))
             if abs(m.gamma - g) <= 1e-6 * max(g, 1e-300)]
    stack = np.array([m.right / max(hs.hs_norm(m.right), 1e-300) for m in group])
    return stack


def relaxation_report(traj, ms, observable=None, window=None,
                      amplitude_floor=AMPLITUDE_FLOOR):
    """Per-element relaxation times in the stationary eigenbasis.

    The envelope ``|rho_mn(t) - rho_inf,mn|`` is smoothed over one period
    of the dominant frequency and fitted by ``log envelope ~ -t / tau_mn``
    on ``window`` (default ``[tau, 4 tau]``, clipped to the trajectory).
    """
    tau = ms.tau
    if not np.isfinite(tau):
        raise InsufficientDataError("no decaying mode: relaxation times undefined",
                                    "relaxation_report", tau=tau)
    if window is None:
        window = (tau, min(4 * tau, traj.times[-1]))
    t_lo, t_hi = window
    if t_hi - t_lo < 2 * tau:
        raise InsufficientDataError("fit window shorter than 2 tau", "relaxation_report",
                                    window=list(window), tau=tau)
    Ub = stationary_basis(ms.rho_inf)
    if traj.basis_label != "stationary-eigenbasis":
        traj = traj.in_basis(Ub, "stationary-eigenbasis")
    rinf = Ub.conj().T @ ms.rho_inf @ Ub
    slow = slow_eigenmatrix(ms)
    slow_b = np.abs(Ub.conj().T[None] @ slow @ Ub[None]).max(axis=0)
    om = _dominant_omega(ms, t_lo)
    width = 2 * np.pi / om if om > 0 else 0.0
    t = traj.times
    d = traj.dim
    elements = []
    for m in range(d):
        for n in range(m, d):
            dev = np.abs(traj.states[:, m, n] - rinf[m, n])
            env = _moving_average(t, dev, width)
            sel = (t >= t_lo) & (t <= t_hi) & (env > 0)
            touched = bool(slow_b[m, n] > amplitude_floor)
            entry = {"m": m, "n": n, "kind": "population" if m == n else "coherence",
                     "slow_amplitude": float(slow_b[m, n]), "touched": touched,
                     "tau_mn": None, "fit_error": None}
            if sel.sum() >= 3:
                coef, cov = np.polyfit(t[sel], np.log(env[sel]), 1, cov=True)
                if coef[0] < 0:
                    entry["tau_mn"] = float(-1.0 / coef[0])
                    entry["fit_error"] = float(np.sqrt(cov[0, 0]) / coef[0] ** 2)
            elements.append(entry)
    report = {"tau": float(tau), "window": [float(t_lo), float(t_hi)],
              "smoothing_period": float(width), "elements": elements}
    if observable is not None:
        report["commutator_diagnostic"] = commutator_diagnostic(observable, ms.rho_inf)
    return report


def commutator_diagnostic(O, rho_inf):
    """``||[O, rho_inf]|| / max(||O rho_inf||, ||rho_inf O||)``."""
    O = np.asarray(O, dtype=complex)
    a, b = O @ rho_inf, rho_inf @ O
    den = max(hs.hs_norm(a), hs.hs_norm(b))
    return 0.0 if den == 0 else hs.hs_norm(a - b) / den
