"""Bi-orthogonal eigendecomposition of non-hermitian superoperators and
continuous tracking of eigenvalue bands across a frequency grid."""

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import hs
from .errors import (DegenerateSpectrumError, InvalidInputError, NearDegenerateWarning,
                     NonUniqueZeroModeWarning, StructuralError)

DEGENERACY_RTOL = 1e-8
BIORTHO_WARN = 1e-6
ZERO_RTOL = 1e-8
OVERLAP_CUTOFF = 0.7


@dataclass(eq=False)
class SpectralDecomposition:
    """Eigenvalues with bi-orthonormal right/left eigenmatrices.

    ``right[k]`` and ``left[k]`` are ``(d, d)`` operators with
    ``hs_inner(left[j], right[k]) == delta_jk``.  Index 0 holds the eigenvalue
    of smallest modulus (the zero-mode branch).
    """

    z: complex
    eigenvalues: np.ndarray
    right: np.ndarray
    left: np.ndarray
    condition: float
    zero_left_residual: float
    clusters: list = field(default_factory=list)

    @property
    def n(self):
        return self.eigenvalues.size

    @property
    def dim(self):
        return self.right.shape[1]

    def right_matrix(self):
        """Columns are ``vec(R_k)``."""
        return self.right.reshape(self.n, -1).T

    def left_matrix(self):
        return self.left.reshape(self.n, -1).T

    def reassemble(self):
        R, L = self.right_matrix(), self.left_matrix()
        return (R * self.eigenvalues) @ L.conj().T

    def super_unity(self):
        return self.right_matrix() @ self.left_matrix().conj().T

    def scale(self):
        return float(np.abs(self.eigenvalues).max()) if self.n else 0.0


def _clusters(w, rtol):
    scale = np.abs(w).max()
    tol = rtol * scale
    order = np.argsort(w.real, kind="stable")
    # union-find over pairs closer than tol
    parent = list(range(w.size))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a in range(w.size):
        for b in range(a + 1, w.size):
            if abs(w[order[a]].real - w[order[b]].real) > tol:
                break
            if abs(w[order[a]] - w[order[b]]) <= tol:
                parent[find(order[a])] = find(order[b])
    groups = {}
    for i in range(w.size):
        groups.setdefault(find(i), []).append(i)
    return [sorted(g) for g in groups.values()]


def decompose(Lz, z=None, warn=True):
    """General eigendecomposition of ``Lz`` with bi-orthonormal left modes.

    Left and right eigenvectors come from one LAPACK ``geev`` call, so
    pairs share an index.  Inside a degenerate cluster the left vectors are
    re-biorthogonalized against the right ones; a cluster whose right
    vectors do not span (a defective eigenvalue) raises
    :class:`DegenerateSpectrumError`.  Every pair is then rescaled by
    ``1/sqrt((L_k|R_k))`` on both sides.
    """
    Lz = np.asarray(Lz, dtype=complex)
    n = Lz.shape[0]
    d = int(round(np.sqrt(n)))
    if Lz.ndim != 2 or Lz.shape != (n, n) or d * d != n:
        raise InvalidInputError(f"superoperator of shape {Lz.shape} is not d^2 x d^2",
                                "decompose", module="spectral")
    w, vl, vr = sla.eig(Lz, left=True, right=True)
    R = vr.astype(complex)
    L = vl.astype(complex)
    clusters = [c for c in _clusters(w, DEGENERACY_RTOL) if len(c) > 1]
    for c in clusters:
        Rc, Lc = R[:, c], L[:, c]
        sv = np.linalg.svd(Rc, compute_uv=False)
        G = Lc.conj().T @ Rc
        if sv.min() < 1e-10 * sv.max() or np.linalg.cond(G) > 1e10:
            raise DegenerateSpectrumError("defective eigenvalue (no complete eigenbasis)",
                                          "decompose", eigenvalue=w[c[0]], size=len(c))
        L[:, c] = Lc @ np.linalg.inv(G).conj().T
        # average the eigenvalue inside the cluster
        w[c] = w[c].mean()
    if warn and clusters:
        warnings.warn(f"{len(clusters)} degenerate eigenvalue cluster(s) at "
                      f"{[complex(w[c[0]]) for c in clusters]}", NearDegenerateWarning,
                      stacklevel=2)
    c = np.einsum("ik,ik->k", L.conj(), R)
    if np.min(np.abs(c)) < 1e-13:
        raise DegenerateSpectrumError("left/right pair with vanishing overlap",
                                      "decompose", overlap=float(np.min(np.abs(c))))
    root = np.sqrt(c)
    R = R / root
    L = L / root.conj()

    k0 = int(np.argmin(np.abs(w)))
    rest = [k for k in range(n) if k != k0]
    rest.sort(key=lambda k: (round(w[k].real, 12), round(w[k].imag, 12)))
    order = [k0] + rest
    w, R, L = w[order], R[:, order], L[:, order]
    inv = np.empty(n, dtype=int)
    inv[order] = np.arange(n)
    clusters = [sorted(int(inv[i]) for i in cl) for cl in clusters]

    defect = float(np.abs(L.conj().T @ R - np.eye(n)).max())
    if warn and defect > BIORTHO_WARN:
        warnings.warn(f"bi-orthogonality defect {defect:.2e}: near-degenerate spectrum",
                      NearDegenerateWarning, stacklevel=2)
    one = hs.vec(np.eye(d))
    lnorm = max(np.linalg.norm(Lz), 1e-300)
    zero_left = float(np.linalg.norm(one.conj() @ Lz) / (lnorm * np.sqrt(d)))
    return SpectralDecomposition(
        z=None if z is None else complex(z),
        eigenvalues=w,
        right=R.T.reshape(n, d, d),
        left=L.T.reshape(n, d, d),
        condition=defect,
        zero_left_residual=zero_left,
        clusters=clusters,
    )


def zero_cluster(dec, rtol=ZERO_RTOL):
    """Indices of eigenvalues within ``rtol * max|lambda|`` of zero."""
    scale = dec.scale()
    return [k for k in range(dec.n) if abs(dec.eigenvalues[k]) <= rtol * scale]


@dataclass(eq=False)
class ZeroMode:
    rho: np.ndarray
    unique: bool
    multiplicity: int
    indices: list


def zero_mode(dec, rtol=ZERO_RTOL, warn=True):
    """Stationary state from the zero eigenvalue of a decomposition.

    For a simple zero eigenvalue this is the right zero-mode, hermitized and
    normalized to unit trace.  If the zero eigenvalue is degenerate the
    maximally mixed state is projected onto the zero eigenspace, which picks
    a definite stationary state; ``unique`` is then False.
    """
    if abs(dec.eigenvalues[0]) > rtol * dec.scale():
        raise StructuralError("no eigenvalue near zero: probability conservation "
                              "violated upstream", "zero_mode", module="spectral",
                              smallest=dec.eigenvalues[0])
    idx = zero_cluster(dec, rtol)
    d = dec.dim
    R = dec.right_matrix()[:, idx]
    Lm = dec.left_matrix()[:, idx]
    x = R @ (Lm.conj().T @ hs.vec(np.eye(d) / d))
    rho = hs.hermitize(hs.unvec(x, d))
    tr = np.trace(rho).real
    if abs(tr) < 1e-12:
        raise StructuralError("zero-mode has vanishing trace", "zero_mode",
                              module="spectral", trace=tr)
    rho = rho / tr
    unique = len(idx) == 1
    if warn and not unique:
        warnings.warn(f"zero eigenvalue is {len(idx)}-fold degenerate: stationary "
                      "state is not unique", NonUniqueZeroModeWarning, stacklevel=2)
    return ZeroMode(rho=rho, unique=unique, multiplicity=len(idx), indices=idx)


def traceless_check(dec, rtol=1e-9):
    """Report right eigenmatrices outside the zero cluster whose trace is not zero.

    Inside a degenerate zero cluster any combination of stationary states is
    an eigenmatrix, so only eigenvalues away from zero are tested.
    """
    zero = set(zero_cluster(dec)) if abs(dec.eigenvalues[0]) <= ZERO_RTOL * dec.scale() else {0}
    zero.add(0)
    ks = [k for k in range(dec.n) if k not in zero]
    ratios = np.array([abs(np.trace(dec.right[k])) / max(hs.hs_norm(dec.right[k]), 1e-300)
                       for k in ks])
    violations = [ks[i] for i in np.nonzero(ratios > rtol)[0]]
    return {
        "passed": not violations,
        "violations": violations,
        "max_ratio": float(ratios.max()) if ratios.size else 0.0,
        "zero_mode_trace": complex(np.trace(dec.right[0])),
    }


@dataclass(eq=False)
class BandTrack:
    grid: np.ndarray
    eigenvalues: np.ndarray     # (n_grid, n)
    right: np.ndarray           # (n_grid, n, d, d)
    left: np.ndarray
    crossing_flags: np.ndarray  # (n_grid - 1,)
    failure_flags: np.ndarray
    min_overlap: np.ndarray

    @property
    def n_bands(self):
        return self.eigenvalues.shape[1]

    def to_csv(self, path):
        write_band_csv(self, path)


def _pair_overlap(L1, R1, L2, R2):
    """Symmetric overlap score between modes at two neighbouring points."""
    A = np.abs(L1.conj().T @ R2)
    B = np.abs(L2.conj().T @ R1)
    return np.sqrt(A * B.T), L1.conj().T @ R2


def _greedy_match(S):
    S = S.copy()
    n = S.shape[0]
    perm = np.empty(n, dtype=int)
    best = np.empty(n)
    for _ in range(n):
        i, j = np.unravel_index(np.argmax(S), S.shape)
        perm[i] = j
        best[i] = S[i, j]
        S[i, :] = -1.0
        S[:, j] = -1.0
    return perm, best


def track_bands(ev, grid, cutoff=OVERLAP_CUTOFF, continuation=False):
    """Eigenvalue bands ``lambda_k(z)`` matched continuously along ``grid``.

    Consecutive points are matched greedily on the overlap matrix of the
    left modes at one point with the right modes at the next.  Intervals
    where a best overlap falls below ``cutoff`` carry a crossing flag;
    intervals with a near-singular overlap matrix also carry a failure flag.
    """
    grid = np.asarray(grid, dtype=complex)
    if grid.size < 2:
        raise InvalidInputError("grid needs at least two points", "track_bands",
                                module="spectral")
    if np.any(np.diff(grid.real) < 0):
        raise InvalidInputError("grid must be sorted by real part", "track_bands",
                                module="spectral")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NearDegenerateWarning)
        decs = [decompose(ev.evaluate(z, continuation=continuation), z) for z in grid]
    n = decs[0].n
    ng = grid.size
    lam = np.empty((ng, n), dtype=complex)
    right = np.empty((ng, n) + decs[0].right.shape[1:], dtype=complex)
    left = np.empty_like(right)
    crossing = np.zeros(ng - 1, dtype=bool)
    failure = np.zeros(ng - 1, dtype=bool)
    min_overlap = np.ones(ng - 1)
    lam[0], right[0], left[0] = decs[0].eigenvalues, decs[0].right, decs[0].left
    for j in range(1, ng):
        dec = decs[j]
        R1 = right[j - 1].reshape(n, -1).T
        L1 = left[j - 1].reshape(n, -1).T
        R2, L2 = dec.right_matrix(), dec.left_matrix()
        S, raw = _pair_overlap(L1, R1, L2, R2)
        perm, best = _greedy_match(S)
        sv = np.linalg.svd(raw, compute_uv=False)
        failure[j - 1] = sv.min() < 1e-8 * max(sv.max(), 1e-300)
        min_overlap[j - 1] = best.min()
        crossing[j - 1] = failure[j - 1] or best.min() < cutoff
        lam[j] = dec.eigenvalues[perm]
        right[j] = dec.right[perm]
        left[j] = dec.left[perm]
    return BandTrack(grid=grid, eigenvalues=lam, right=right, left=left,
                     crossing_flags=crossing, failure_flags=failure,
                     min_overlap=min_overlap)


def write_band_csv(track, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["z_re", "z_im", "k", "lambda_re", "lambda_im", "crossing_flag"])
        for j, z in enumerate(track.grid):
            flag = bool(track.crossing_flags[j - 1]) if j > 0 else False
            for k in range(track.n_bands):
                lam = track.eigenvalues[j, k]
                w.writerow([_fmt(z.real), _fmt(z.imag), k, _fmt(lam.real), _fmt(lam.imag),
                            int(flag)])


def _fmt(x):
    return format(float(x), ".17g")
