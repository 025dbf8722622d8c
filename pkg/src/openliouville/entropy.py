"""Von Neumann entropy, the two relative entropies with respect to the
stationary state, their production, and the overdamped Lyapunov test."""

import warnings
from dataclasses import dataclass

import numpy as np

from . import hs
from .errors import InvalidInputError, ReliabilityWarning

CLAMP = 1e-14
NEGATIVE_FLAG = 1e-12
SUPPORT_TOL = 1e-12
CLAMP_RATE_WARN = 0.05
OVERDAMPED_RATIO = 0.1
PRODUCTION_TOL = 1e-6


def _spectrum(rho):
    """Clamped eigen-decomposition ``(p, V, clamped)``.

    Eigenvalues below ``CLAMP`` are set to zero and the removed (or added)
    weight is redistributed proportionally over the rest, so that ``p``
    stays a probability vector.
    """
    w, V = np.linalg.eigh(hs.hermitize(np.asarray(rho, dtype=complex)))
    clamped = bool(w.min() < -NEGATIVE_FLAG)
    p = np.where(w < CLAMP, 0.0, w)
    tot = p.sum()
    if tot <= 0:
        raise InvalidInputError("operator has no positive weight", "entropy", module="entropy")
    return p / tot, V, clamped


def _xlogx(p):
    out = np.zeros_like(p)
    nz = p > 0
    out[nz] = p[nz] * np.log(p[nz])
    return out


def entropy(rho):
    """``S = -Tr rho ln rho`` (natural log)."""
    p, _, _ = _spectrum(rho)
    return float(-_xlogx(p).sum())


def relative_entropy(rho, sigma):
    """``Tr rho ln rho - Tr rho ln sigma``; ``inf`` when supp rho is not in supp sigma."""
    p, V, _ = _spectrum(rho)
    q, W, _ = _spectrum(sigma)
    overlap = np.abs(V.conj().T @ W) ** 2          # |<v_i|w_j>|^2
    weight = p @ overlap                            # weight of rho on each w_j
    outside = q == 0
    if weight[outside].sum() > SUPPORT_TOL:
        return np.inf
    cross = float(weight[~outside] @ np.log(q[~outside]))
    return float(_xlogx(p).sum() - cross)


@dataclass(eq=False)
class EntropySeries:
    times: np.ndarray
    S: np.ndarray
    S_inf: float
    S_rel_fwd: np.ndarray       # S_{rho(t), rho_inf}
    S_rel_bwd: np.ndarray       # S_{rho_inf, rho(t)}
    production_fwd: np.ndarray  # d S_rel_fwd / dt
    clamp_flags: np.ndarray

    def to_csv(self, path):
        f = lambda x: format(float(x), ".17g")
        with open(path, "w") as fh:
            fh.write("t,S,S_rel_fwd,S_rel_bwd,production_fwd,clamp_flag\n")
            for row in zip(self.times, self.S, self.S_rel_fwd, self.S_rel_bwd,
                           self.production_fwd, self.clamp_flags):
                fh.write(",".join([f(x) for x in row[:5]] + [str(int(row[5]))]) + "\n")


def entropy_series(traj, rho_inf):
    """Entropy, both relative entropies and the forward production along ``traj``.

    The production is taken by centered differences on the trajectory grid
    (second-order one-sided at the ends).
    """
    t = traj.times
    n = t.size
    S = np.empty(n)
    fwd = np.empty(n)
    bwd = np.empty(n)
    flags = np.zeros(n, dtype=bool)
    for i, rho in enumerate(traj.states):
        p, _, flags[i] = _spectrum(rho)
        S[i] = -_xlogx(p).sum()
        fwd[i] = relative_entropy(rho, rho_inf)
        bwd[i] = relative_entropy(rho_inf, rho)
    if n and flags.mean() > CLAMP_RATE_WARN:
        warnings.warn(f"{flags.sum()} of {n} samples needed eigenvalue clamping",
                      ReliabilityWarning, stacklevel=2)
    if n >= 2:
        prod = np.gradient(fwd, t, edge_order=2 if n >= 3 else 1)
    else:
        prod = np.zeros(n)
    return EntropySeries(t, S, entropy(rho_inf), fwd, bwd, prod, flags)


def overdamped_production(series, tau):
    """Production predicted for an overdamped approach, ``-(S_fwd + S_bwd) / tau``."""
    return -(series.S_rel_fwd + series.S_rel_bwd) / tau


def slow_frequency(ms):
    """Frequency ``Omega`` of the slowest amplitude-carrying mode (0 if none)."""
    slow = ms.slowest()
    return 0.0 if slow is None else abs(slow.omega)


def lyapunov_check(series, ms, window, ratio=OVERDAMPED_RATIO, tol=PRODUCTION_TOL):
    """Verdict on the relative entropy as a Lyapunov function on ``window``.

    Returns a dict with ``verdict`` in ``{"PASS", "FAIL", "NOT-APPLICABLE"}``,
    ``omega_tau``, the maximal production in the window and the number of
    sign changes of the production there.  Windows starting below ``tau``
    are refused: oscillations there rule the test out from the start.
    """
    t_lo, t_hi = map(float, window)
    tau = ms.tau
    if not np.isfinite(tau):
        return {"verdict": "NOT-APPLICABLE", "omega_tau": None, "reason": "non-relaxing",
                "max_production": None, "sign_changes": 0}
    if t_lo < tau * (1 - 1e-12) or t_hi <= t_lo:
        raise InvalidInputError("window must lie in [tau, end]", "lyapunov_check",
                                module="entropy", window=[t_lo, t_hi], tau=tau)
    if t_hi > series.times[-1] * (1 + 1e-12):
        raise InvalidInputError("window extends past the series", "lyapunov_check",
                                module="entropy", window=[t_lo, t_hi])
    sel = (series.times >= t_lo) & (series.times <= t_hi)
    prod = series.production_fwd[sel]
    signs = np.sign(prod[np.abs(prod) > tol])
    changes = int(np.count_nonzero(np.diff(signs)))
    omega_tau = slow_frequency(ms) * tau
    out = {"omega_tau": float(omega_tau), "max_production": float(prod.max()),
           "sign_changes": changes, "window": [t_lo, t_hi]}
    if omega_tau > ratio:
        out["verdict"] = "NOT-APPLICABLE"
    elif prod.max() <= tol:
        out["verdict"] = "PASS"
    else:
        out["verdict"] = "FAIL"
    return out


def orthogonality_residual(traj):
    """Largest ``|Tr(dS_hat/dt rho)|`` over interior samples, ``S_hat = -ln rho``.

    Probability conservation makes this vanish; it is estimated by centered
    differences of the entropy operator.
    """
    t = traj.times
    logs = []
    for rho in traj.states:
        p, V, _ = _spectrum(rho)
        if np.any(p == 0):
            raise InvalidInputError("entropy operator undefined for singular states",
                                    "orthogonality_residual", module="entropy")
        logs.append(-(V * np.log(p)) @ V.conj().T)
    logs = np.array(logs)
    res = 0.0
    for i in range(1, t.size - 1):
        dS = (logs[i + 1] - logs[i - 1]) / (t[i + 1] - t[i - 1])
        res = max(res, abs(np.trace(dS @ traj.states[i])))
    return float(res)
