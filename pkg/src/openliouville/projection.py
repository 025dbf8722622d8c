"""Projectors onto the system, block partition of the total Liouvillian and
the frequency dependent effective Liouville.

All system-space objects live in the reduced ``d_sys**2`` representation
obtained from the identification ``X <-> X (x) rho_env``: the block
``L_P`` is ``Tr_E L_tot (. (x) rho_env)``.  Q-space objects are expressed
in an orthonormal basis of ``range(Q)``, which is the kernel of the partial
trace and therefore independent of ``rho_env``.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from . import hs
from .errors import InvalidInputError, SingularResolventError

PROJECTOR_TOL = 1e-12
EPS_MIN_FACTOR = 1e-6


@dataclass(frozen=True, eq=False)
class ProjectorPair:
    P: np.ndarray
    Q: np.ndarray
    dims: hs.HilbertDims
    rho_env: np.ndarray
    trace_map: np.ndarray   # vec(X) -> vec(Tr_E X)
    embed_map: np.ndarray   # vec(x) -> vec(x (x) rho_env)

    def defects(self):
        """Norms of P^2 - P, Q^2 - Q, PQ, QP and P + Q - 1."""
        P, Q = self.P, self.Q
        eye = np.eye(P.shape[0])
        return {
            "P2-P": hs.hs_norm(P @ P - P),
            "Q2-Q": hs.hs_norm(Q @ Q - Q),
            "PQ": hs.hs_norm(P @ Q),
            "QP": hs.hs_norm(Q @ P),
            "P+Q-1": hs.hs_norm(P + Q - eye),
        }


def build_projectors(dims, rho_env):
    """Projector ``P = Tr_E(.) (x) rho_env`` and its complement ``Q = 1 - P``.

    ``P`` is idempotent but only hermitian under the HS product when
    ``rho_env`` is proportional to the identity.
    """
    rho_env = hs.check_density_matrix(rho_env, name="rho_env", op="build_projectors")
    if rho_env.shape != (dims.d_env, dims.d_env):
        raise InvalidInputError("rho_env does not match d_env", "build_projectors",
                                module="projection", shape=rho_env.shape)
    T = hs.partial_trace_matrix(dims)
    E = hs.embedding_matrix(dims, rho_env)
    P = E @ T
    Q = np.eye(P.shape[0]) - P
    return ProjectorPair(P=P, Q=Q, dims=dims, rho_env=rho_env, trace_map=T, embed_map=E)


@dataclass(eq=False)
class PartitionedLiouville:
    """Blocks of ``L_tot`` with respect to ``P`` and ``Q``.

    ``L_P`` acts on the reduced system space, ``L_Q`` on coordinates in
    ``q_basis``; ``L_PQ`` and ``L_QP`` connect the two.
    """

    L_P: np.ndarray
    L_PQ: np.ndarray
    L_QP: np.ndarray
    L_Q: np.ndarray
    q_basis: np.ndarray
    projectors: ProjectorPair
    L_tot: np.ndarray = field(repr=False)

    @property
    def dims(self):
        return self.projectors.dims

    @cached_property
    def spectral_scale(self):
        """Largest modulus in the spectrum of ``L_tot`` (never below 1e-300)."""
        ev = np.linalg.eigvalsh(hs.hermitize(self.L_tot))
        return max(float(np.abs(ev).max()), 1e-300)

    @cached_property
    def _schur(self):
        T, U = sla.schur(self.L_Q, output="complex")
        return T, U

    def reassemble(self):
        """``PLP + PLQ + QLP + QLQ`` rebuilt from the stored blocks."""
        proj = self.projectors
        E, T, V = proj.embed_map, proj.trace_map, self.q_basis
        VhQ = V.conj().T @ proj.Q
        return (E @ self.L_P @ T + E @ self.L_PQ @ VhQ
                + V @ self.L_QP @ T + V @ self.L_Q @ VhQ)


def partition_liouville(L_tot, proj):
    L_tot = np.asarray(L_tot, dtype=complex)
    n = proj.dims.d_tot ** 2
    if L_tot.shape != (n, n):
        raise InvalidInputError(f"L_tot has shape {L_tot.shape}, expected {(n, n)}",
                                "partition_liouville", module="projection")
    T, E, Q = proj.trace_map, proj.embed_map, proj.Q
    V = sla.null_space(T)
    LV = L_tot @ V
    L_P = T @ L_tot @ E
    L_PQ = T @ LV
    Vh = V.conj().T
    L_QP = Vh @ (Q @ (L_tot @ E))
    L_Q = Vh @ (Q @ LV)
    return PartitionedLiouville(L_P=L_P, L_PQ=L_PQ, L_QP=L_QP, L_Q=L_Q, q_basis=V,
                                projectors=proj, L_tot=L_tot)


def _triangular_resolvent(partition, w, B, power=1):
    """``(w - L_Q)^{-power} B`` for coordinate vectors/matrices ``B``."""
    T, U = partition._schur
    diag = w - np.diag(T)
    tiny = 1e-14 * partition.spectral_scale
    if np.min(np.abs(diag)) <= tiny:
        raise SingularResolventError("frequency lies on the spectrum of L_Q",
                                     "q_resolvent_apply", z=w,
                                     distance=float(np.min(np.abs(diag))))
    A = w * np.eye(T.shape[0]) - T
    Y = U.conj().T @ B
    for _ in range(power):
        Y = sla.solve_triangular(A, Y, lower=False, check_finite=False)
    return U @ Y


def q_resolvent_apply(partition, z, b):
    """Solve ``(z - L_Q) y = b`` for a full-space vector ``b`` in ``range(Q)``."""
    b = np.asarray(b, dtype=complex)
    proj = partition.projectors
    if b.shape != (proj.dims.d_tot ** 2,):
        raise InvalidInputError("b must be a vectorized total-space operator",
                                "q_resolvent_apply", module="projection")
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros_like(b)
    if np.linalg.norm(proj.P @ b) > 1e-10 * nb:
        raise InvalidInputError("b is not in range(Q)", "q_resolvent_apply",
                                module="projection")
    V = partition.q_basis
    return V @ _triangular_resolvent(partition, complex(z), V.conj().T @ b)


class EffectiveLiouville:
    """Evaluator ``z -> L(z) = L_P + L_PQ [z - L_Q]^{-1} L_QP``.

    Parameters
    ----------
    partition : PartitionedLiouville
    smoothing : float
        Width ``eps`` added to the argument: ``evaluate(z)`` returns the
        exact finite-model ``L(z + i eps)``.  With ``eps > 0`` the evaluator
        stays analytic down to ``Im z > -eps``, which is how a finite
        environment emulates a smooth continuum.
    eps_min : float, optional
        Smallest admissible ``Im(z) + eps`` for ordinary evaluation.
        Defaults to ``1e-6`` times the spectral scale of ``L_tot``.
    """

    def __init__(self, partition, smoothing=0.0, eps_min=None):
        if smoothing < 0:
            raise InvalidInputError("smoothing must be non-negative", "EffectiveLiouville",
                                    module="projection", smoothing=smoothing)
        self.partition = partition
        self.smoothing = float(smoothing)
        self.scale = partition.spectral_scale
        self.eps_min = EPS_MIN_FACTOR * self.scale if eps_min is None else float(eps_min)
        self.dim = partition.L_P.shape[0]

    def _shift(self, z, continuation):
        w = complex(z) + 1j * self.smoothing
        if not continuation and w.imag < self.eps_min:
            raise InvalidInputError("frequency below the admissible half-plane",
                                    "effective_liouville", module="projection",
                                    z=complex(z), smoothing=self.smoothing,
                                    eps_min=self.eps_min)
        return w

    def evaluate(self, z, continuation=False):
        w = self._shift(z, continuation)
        p = self.partition
        return p.L_P + p.L_PQ @ _triangular_resolvent(p, w, p.L_QP)

    def derivative(self, z, continuation=False):
        """Analytic ``dL/dz = -L_PQ [z - L_Q]^{-2} L_QP``."""
        w = self._shift(z, continuation)
        p = self.partition
        return -p.L_PQ @ _triangular_resolvent(p, w, p.L_QP, power=2)

    def zero_point(self):
        """Argument standing for ``z -> i0`` in this evaluator."""
        return 0j if self.smoothing >= self.eps_min else 1j * self.eps_min

    __call__ = evaluate


class ConstantLiouville:
    """A z-independent generator dressed up with the evaluator interface."""

    smoothing = 0.0

    def __init__(self, L, scale=None):
        self.L = np.asarray(L, dtype=complex)
        self.dim = self.L.shape[0]
        if scale is None:
            scale = float(np.abs(np.linalg.eigvals(self.L)).max())
        self.scale = max(scale, 1e-300)
        self.eps_min = EPS_MIN_FACTOR * self.scale

    def evaluate(self, z, continuation=False):
        return self.L.copy()

    def derivative(self, z, continuation=False):
        return np.zeros_like(self.L)

    def zero_point(self):
        return 0j

    __call__ = evaluate


def effective_liouville(ev, z):
    return ev.evaluate(z)


def effective_liouville_derivative(ev, z):
    return ev.derivative(z)


def antihermitian_part(ev, omega, eps):
    """``(L - L^dagger)/2`` at ``omega + i eps``.

    Returns the superoperator ``A``; the dissipative content is the hermitian
    matrix ``i A`` (``A = -i C`` with ``C`` expected to be positive).
    """
    if eps <= 0:
        raise InvalidInputError("eps must be positive", "antihermitian_part",
                                module="projection", eps=eps)
    L = ev.evaluate(complex(omega, eps))
    return 0.5 * (L - L.conj().T)


def reduced_resolvent_state(ev, rho0, z):
    """``rho(w) = i [w - L(w)]^{-1} rho0`` at ``w = z + i eps`` as a system operator."""
    w = complex(z) + 1j * ev.smoothing
    rho0 = np.asarray(rho0, dtype=complex)
    L = ev.evaluate(z)
    x = np.linalg.solve(w * np.eye(L.shape[0]) - L, hs.vec(rho0))
    return hs.unvec(1j * x, rho0.shape[0])


def exact_reduced_resolvent_state(partition, rho0, z):
    """``Tr_E( i [z - L_tot]^{-1} (rho0 (x) rho_env) )`` by one dense solve.

    Independent of the block machinery; used as the oracle for the
    effective Liouville.
    """
    proj = partition.projectors
    L = partition.L_tot
    total0 = hs.embed_system(rho0, proj.rho_env)
    x = np.linalg.solve(complex(z) * np.eye(L.shape[0]) - L, hs.vec(total0))
    return hs.partial_trace_env(hs.unvec(1j * x, proj.dims.d_tot), proj.dims)


def frequency_identity_residual(ev, rho0, z):
    """Relative HS distance between the effective and the exact ``rho(z)``.

    For a smoothed evaluator both sides are taken at ``z + i eps``.
    """
    w = complex(z) + 1j * ev.smoothing
    lhs = reduced_resolvent_state(ev, rho0, z)
    rhs = exact_reduced_resolvent_state(ev.partition, rho0, w)
    return hs.hs_norm(lhs - rhs) / hs.hs_norm(rhs)
