"""Effective eigenvalues ``z_k = lambda_k(z_k)``, residue amplitudes and the
assembled mode set (stationary state, paired decaying modes, relaxation
scale).  The Markov approximation is the special case of a frozen,
z-independent generator."""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import hs
from .errors import (ConvergenceError, DegenerateSpectrumError, HermiticityViolationError,
                     InvalidInputError, NearDefectivePoleError, NearDegenerateWarning,
                     ReliabilityWarning, SingularResolventError, StructuralError)
from .projection import ConstantLiouville
from .spectral import ZERO_RTOL, decompose, track_bands, zero_mode

NEWTON_RTOL = 1e-10
MAX_ITER = 100
UPPER_HALF_TOL = 1e-9
PAIR_RTOL = 1e-6
AMPLITUDE_FLOOR = 1e-10
DEFECTIVE_TOL = 1e-8


@dataclass(eq=False)
class EffectiveMode:
    k: int
    z: complex
    right: np.ndarray
    left: np.ndarray
    lambda_prime: complex = 0j
    a: complex = None
    iterations: int = 0

    @property
    def omega(self):
        return float(self.z.real)

    @property
    def gamma(self):
        return float(-self.z.imag)

    @property
    def A(self):
        return None if self.a is None else self.a * self.right


@dataclass(eq=False)
class ModeSet:
    rho_inf: np.ndarray
    modes: list
    tau: float
    pairing: list
    markov: bool
    unique_zero: bool = True
    scale: float = 1.0
    meta: dict = field(default_factory=dict)

    @property
    def z(self):
        return np.array([m.z for m in self.modes], dtype=complex)

    @property
    def gammas(self):
        return np.array([m.gamma for m in self.modes])

    def decaying(self, floor=AMPLITUDE_FLOOR, rho0_norm=1.0):
        """Modes with a non-negligible amplitude and a positive decay rate."""
        gtol = UPPER_HALF_TOL * max(self.scale, 1.0)
        return [m for m in self.modes
                if m.gamma > gtol and hs.hs_norm(m.A) > floor * rho0_norm]

    def slowest(self):
        """The decaying mode that sets ``tau`` (its eigenmatrix is the slowest one)."""
        live = self.decaying(self.meta.get("amplitude_floor", AMPLITUDE_FLOOR),
                             self.meta.get("rho0_norm", 1.0))
        if not live:
            return None
        return min(live, key=lambda m: m.gamma)

    def to_json(self):
        d = self.rho_inf.shape[0]
        flat = []
        for x in self.rho_inf.reshape(-1):
            flat += [float(x.real), float(x.imag)]
        return {
            "modes": [{
                "k": m.k,
                "omega": m.omega,
                "gamma": m.gamma,
                "a_re": float(np.real(m.a)),
                "a_im": float(np.imag(m.a)),
                "lambda_prime_re": float(np.real(m.lambda_prime)),
                "lambda_prime_im": float(np.imag(m.lambda_prime)),
            } for m in self.modes],
            "rho_infinity": flat,
            "dim": d,
            "tau": None if not np.isfinite(self.tau) else float(self.tau),
            "markov": bool(self.markov),
            "unique_zero_mode": bool(self.unique_zero),
        }

    def dump(self, path):
        with open(path, "w") as fh:
            fh.write(dumps_json(self.to_json()))


def dumps_json(obj):
    """JSON text with doubles written to 17 significant digits."""
    return json.dumps(_round17(obj), indent=2, sort_keys=True) + "\n"


def _round17(obj):
    if isinstance(obj, float):
        return float(format(obj, ".17g")) if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _round17(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round17(v) for v in obj]
    return obj


def _quiet_decompose(L, z=None):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NearDegenerateWarning)
        return decompose(L, z, warn=False)


def _match(dec, right, left):
    """Index of the mode of ``dec`` that continues the given left/right pair."""
    r = right.reshape(-1)
    lv = left.reshape(-1)
    R = dec.right_matrix()
    Lm = dec.left_matrix()
    score = np.abs(lv.conj() @ R) * np.abs(Lm.conj().T @ r)
    return int(np.argmax(score))


def lambda_prime(ev, z, right, left, continuation=True):
    """First-order perturbation ``(L_k| L'(z) |R_k)`` for a bi-orthonormal pair."""
    dL = ev.derivative(z, continuation=continuation)
    return complex(left.reshape(-1).conj() @ dL @ right.reshape(-1))


def newton_solve(ev, z_init, right, left, tol=None, max_iter=MAX_ITER, k=-1):
    """Newton iteration on ``f(z) = z - lambda(z)`` following one eigenmode.

    The mode is identified at every iterate by its overlap with the previous
    iterate's eigenmatrices; the step is halved while ``|f|`` grows.
    """
    tol = NEWTON_RTOL * ev.scale if tol is None else tol
    z = complex(z_init)
    trace = []

    def state(zz, rr, ll):
        dec = _quiet_decompose(ev.evaluate(zz, continuation=True), zz)
        i = _match(dec, rr, ll)
        return dec.eigenvalues[i], dec.right[i], dec.left[i]

    lam, R, Lv = state(z, right, left)
    f = z - lam
    it = 0
    while abs(f) > tol:
        if it >= max_iter:
            raise ConvergenceError("Newton iteration did not converge", "solve_effective_eigenvalue",
                                   k=k, z=z, residual=abs(f), trace=trace[-10:])
        lp = lambda_prime(ev, z, R, Lv)
        step = f / (1.0 - lp)
        alpha = 1.0
        for _ in range(30):
            z_new = z - alpha * step
            lam_n, R_n, L_n = state(z_new, R, Lv)
            f_new = z_new - lam_n
            if abs(f_new) <= abs(f) or alpha < 1e-6:
                break
            alpha *= 0.5
        z, lam, R, Lv, f = z_new, lam_n, R_n, L_n, f_new
        trace.append((z, abs(f)))
        it += 1
    lp = lambda_prime(ev, z, R, Lv)
    return EffectiveMode(k=k, z=z, right=R, left=Lv, lambda_prime=lp, iterations=it)


def _starts(ev, band, k):
    """Candidate starting points for band ``k``: the grid point closest to
    self-consistency on the real axis, the band value at ``z -> i0``, then
    the remaining local minima of ``|Re z - Re lambda_k(z)|``."""
    lam = band.eigenvalues[:, k]
    miss = np.abs(band.grid.real - lam.real)
    order = [int(np.argmin(miss))]
    j0 = int(np.argmin(np.abs(band.grid - ev.zero_point())))
    order.append(j0)
    interior = np.flatnonzero((miss[1:-1] <= miss[:-2]) & (miss[1:-1] <= miss[2:])) + 1
    order += [int(j) for j in interior[np.argsort(miss[interior])]]
    seen = []
    for j in order:
        if j not in seen:
            seen.append(j)
    return seen


def solve_effective_eigenvalue(ev, band, k, z_init=None, tol=None, max_iter=MAX_ITER,
                               exclude=(), max_starts=4):
    """Solve ``z = lambda_k(z)`` for band ``k`` of a :class:`BandTrack`.

    Without ``z_init`` the grid point where the band is closest to
    self-consistency on the real axis supplies the starting value
    ``lambda_k(omega_j + i eps)``; further starting points are tried when
    the iteration lands on a root listed in ``exclude`` (already claimed
    by another band) or fails to converge.
    """
    lam = band.eigenvalues[:, k]
    if z_init is None:
        starts = [(j, lam[j]) for j in _starts(ev, band, k)[:max_starts]]
    else:
        starts = [(int(np.argmin(np.abs(band.grid - z_init))), complex(z_init))]
    dup_tol = PAIR_RTOL * ev.scale
    mode = None
    last_exc = None
    for j, z0 in starts:
        lo, hi = max(j - 2, 0), min(j + 2, band.grid.size - 1)
        if band.crossing_flags[lo:hi].any():
            warnings.warn(f"band {k} has a crossing flag near the starting point",
                          ReliabilityWarning, stacklevel=2)
        try:
            cand = newton_solve(ev, z0, band.right[j, k], band.left[j, k], tol, max_iter, k)
        except ConvergenceError as exc:
            last_exc = exc
            continue
        if mode is None:
            mode = cand
        if all(abs(cand.z - z) > dup_tol for z in exclude):
            mode = cand
            break
    if mode is None:
        raise last_exc
    if mode.z.imag > UPPER_HALF_TOL:
        raise StructuralError("effective eigenvalue in the upper half-plane",
                              "solve_effective_eigenvalue", module="modes", k=k, z=mode.z)
    smoothing = getattr(ev, "smoothing", 0.0)
    if smoothing > 0 and mode.z.imag <= -smoothing:
        warnings.warn(f"mode {k}: decay rate {-mode.z.imag:.3g} exceeds the smoothing "
                      f"width {smoothing:.3g}", ReliabilityWarning, stacklevel=2)
    return mode


def amplitude(mode, rho0):
    """Residue amplitude ``a_k = (L_k(z_k)|rho0) / (1 - lambda_k')``; stores it."""
    den = 1.0 - mode.lambda_prime
    if abs(den) <= DEFECTIVE_TOL:
        raise NearDefectivePoleError("1 - lambda' vanishes: double pole", "amplitude",
                                     k=mode.k, lambda_prime=mode.lambda_prime)
    mode.a = hs.hs_inner(mode.left, np.asarray(rho0, dtype=complex)) / den
    return mode.a


def _zero_block(dec, rtol=ZERO_RTOL):
    """Stationary state plus a traceless basis of the rest of the zero eigenspace.

    Returns ``(zm, extra)`` where ``extra`` is a list of ``(right, left)``
    pairs spanning the zero eigenspace together with ``rho_inf`` whose dual
    is the identity.
    """
    zm = zero_mode(dec, rtol)
    d = dec.dim
    if zm.unique:
        return zm, []
    idx = zm.indices
    R = dec.right_matrix()[:, idx]
    Lm = dec.left_matrix()[:, idx]
    r0 = hs.vec(zm.rho)
    traces = np.array([np.trace(dec.right[i]) for i in idx])
    D = R - np.outer(r0, traces)
    U, s, _ = np.linalg.svd(D, full_matrices=False)
    rank = len(idx) - 1
    Rn = np.column_stack([r0, U[:, :rank]])
    G = Lm.conj().T @ Rn
    Ln = Lm @ np.linalg.inv(G).conj().T
    extra = [(Rn[:, j].reshape(d, d), Ln[:, j].reshape(d, d)) for j in range(1, rank + 1)]
    return zm, extra


def _pairing(modes, scale, tol_rel=PAIR_RTOL, check=True):
    tol = tol_rel * scale
    z = np.array([m.z for m in modes], dtype=complex)
    used = set()
    pairs = []
    for i in range(z.size):
        if i in used:
            continue
        if abs(z[i].real) <= tol:
            used.add(i)
            continue
        target = -np.conj(z[i])
        cand = [j for j in range(z.size) if j not in used and j != i]
        if cand:
            j = min(cand, key=lambda j: abs(z[j] - target))
            if abs(z[j] - target) <= tol:
                pairs.append((modes[i].k, modes[j].k))
                used.update((i, j))
                continue
        if check:
            raise HermiticityViolationError("mode with finite frequency has no "
                                            "-conj partner", "assemble_mode_set",
                                            k=modes[i].k, z=z[i])
        used.add(i)
    return pairs


def _solve_from(ev, z_start, k):
    """Newton run from ``z_start`` following the eigenvalue of ``L(z_start)``
    closest to ``z_start``."""
    dec = _quiet_decompose(ev.evaluate(z_start, continuation=True), z_start)
    i = int(np.argmin(np.abs(dec.eigenvalues - z_start)))
    return newton_solve(ev, z_start, dec.right[i], dec.left[i], k=k)


def _repair_pairs(ev, modes, scale, tol_rel=PAIR_RTOL):
    """Re-solve unpaired bands from the mirror image of another unpaired root.

    A band can have several self-consistent roots; when two bands settle on
    roots that are not mirror images, one of them is moved to the mirror
    image of the other.
    """
    tol = tol_rel * scale
    for _ in range(len(modes)):
        z = np.array([m.z for m in modes])
        lonely = [i for i in range(z.size) if abs(z[i].real) > tol
                  and np.min(np.abs(np.delete(z, i) + np.conj(z[i])), initial=np.inf) > tol]
        if len(lonely) < 2:
            return modes
        fixed = False
        for a in lonely:
            for b in lonely:
                if a == b:
                    continue
                target = -np.conj(z[a])
                try:
                    cand = _solve_from(ev, target, modes[b].k)
                except (ConvergenceError, SingularResolventError):
                    continue
                if abs(cand.z - target) <= tol:
                    modes[b] = cand
                    fixed = True
                    break
            if fixed:
                break
        if not fixed:
            return modes
    return modes


def _check_degenerate(modes, scale):
    tol = ZERO_RTOL * scale
    live = [m for m in modes if abs(m.z) > tol]
    for a in range(len(live)):
        for b in range(a + 1, len(live)):
            if abs(live[a].z - live[b].z) <= tol:
                raise DegenerateSpectrumError(
                    "degenerate effective eigenvalues: power-law corrections not "
                    "supported", "assemble_mode_set", module="modes",
                    k=(live[a].k, live[b].k), z=live[a].z)


def _finish(rho_inf, modes, rho0, scale, markov, unique, floor, meta, check_pairs=True):
    for m in modes:
        if m.a is None:
            amplitude(m, rho0)
    _check_degenerate(modes, scale)
    pairs = _pairing(modes, scale, check=check_pairs)
    ms = ModeSet(rho_inf=rho_inf, modes=modes, tau=np.inf, pairing=pairs, markov=markov,
                 unique_zero=unique, scale=scale, meta=dict(meta))
    ms.meta.setdefault("amplitude_floor", floor)
    ms.meta.setdefault("rho0_norm", hs.hs_norm(rho0))
    ms.tau = relaxation_time(ms, floor)
    return ms


def relaxation_time(ms, floor=AMPLITUDE_FLOOR):
    """``1 / min gamma`` over decaying modes with ``||A_k|| > floor ||rho0||``."""
    live = ms.decaying(floor, ms.meta.get("rho0_norm", 1.0))
    if not live:
        return np.inf
    return 1.0 / min(m.gamma for m in live)


def default_grid(ev, n_points=200, width=None):
    z0 = ev.zero_point()
    lam = np.linalg.eigvals(ev.evaluate(z0))
    if width is None:
        width = 1.25 * float(np.abs(lam.real).max()) + 0.05 * ev.scale
    return np.linspace(-width, width, n_points) + 1j * z0.imag


def assemble_mode_set(ev, rho0, grid=None, amplitude_floor=AMPLITUDE_FLOOR,
                      n_points=200):
    """Full effective-mode solution for initial state ``rho0``.

    The zero eigenspace at ``z -> i0`` gives ``rho_inf`` (and, if it is
    degenerate, extra conserved modes with ``z = 0``).  Every other band is
    tracked along ``grid`` and solved self-consistently by Newton iteration.
    """
    rho0 = hs.check_density_matrix(rho0, name="rho0", op="assemble_mode_set")
    if grid is None:
        grid = default_grid(ev, n_points)
    band = track_bands(ev, grid)
    z0 = ev.zero_point()
    dec0 = _quiet_decompose(ev.evaluate(z0), z0)
    zm, extra = _zero_block(dec0)
    n_zero = zm.multiplicity
    j0 = int(np.argmin(np.abs(band.grid.real)))
    zero_bands = set(np.argsort(np.abs(band.eigenvalues[j0]))[:n_zero].tolist())
    modes = []
    for i, (R, Lv) in enumerate(extra):
        modes.append(EffectiveMode(k=-(i + 1), z=0j, right=R, left=Lv))
    for k in range(band.n_bands):
        if k in zero_bands:
            continue
        found = [m.z for m in modes]
        modes.append(solve_effective_eigenvalue(ev, band, k, exclude=found))
    modes = _repair_pairs(ev, modes, ev.scale)
    ms = _finish(zm.rho, modes, rho0, ev.scale, False, zm.unique, amplitude_floor,
                 {"smoothing": getattr(ev, "smoothing", 0.0)})
    ms.meta["band_track"] = band
    return ms


def markov_modes(L, rho0, scale=None, amplitude_floor=AMPLITUDE_FLOOR, z_star=0j,
                 check_pairs=True):
    """Mode set of a z-independent generator ``L`` (``z_k = lambda_k``, ``lambda' = 0``)."""
    rho0 = hs.check_density_matrix(rho0, name="rho0", op="markov_freeze")
    L = np.asarray(L, dtype=complex)
    if scale is None:
        scale = ConstantLiouville(L).scale
    dec = _quiet_decompose(L, z_star)
    zm, extra = _zero_block(dec)
    modes = [EffectiveMode(k=-(i + 1), z=0j, right=R, left=Lv)
             for i, (R, Lv) in enumerate(extra)]
    for k in range(dec.n):
        if k in zm.indices:
            continue
        modes.append(EffectiveMode(k=k, z=complex(dec.eigenvalues[k]), right=dec.right[k],
                                   left=dec.left[k], lambda_prime=0j))
    return _finish(zm.rho, modes, rho0, scale, True, zm.unique, amplitude_floor,
                   {"z_star": complex(z_star)}, check_pairs)


def markov_freeze(ev, rho0, z_star=None, amplitude_floor=AMPLITUDE_FLOOR):
    """Freeze the effective Liouville at ``z_star`` (default ``z -> i0``).

    Returns the generator and its mode set.  Off the imaginary axis the
    frozen generator does not preserve hermiticity, so pairing is only
    enforced for purely imaginary ``z_star``.
    """
    if z_star is None:
        z_star = ev.zero_point()
    L = ev.evaluate(z_star)
    on_axis = abs(complex(z_star).real) <= 1e-14 * ev.scale
    ms = markov_modes(L, rho0, ev.scale, amplitude_floor, z_star, check_pairs=on_axis)
    return L, ms


def quantum_map_spectrum(ms):
    """Eigenvalues ``exp(-i z_k)`` of the unit-time dynamical map, ``1`` first."""
    return np.concatenate([[1.0 + 0j], np.exp(-1j * ms.z)])
