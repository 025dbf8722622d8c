"""Hilbert-Schmidt space algebra.

Conventions used everywhere in the package:

* Operators are dense ``(d, d)`` complex arrays and are vectorized
  row-major: element ``(m, n)`` goes to flat index ``m * d + n``.  With this
  convention ``vec(A @ X @ B) == kron(A, B.T) @ vec(X)``.
* Superoperators are ``(d**2, d**2)`` arrays acting on such vectors.
* Composite system/environment indices are system-major: basis state
  ``|s> (x) |e>`` has index ``s * d_env + e``, which is what ``np.kron``
  produces for ``kron(X_sys, X_env)``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

HERMITIAN_RTOL = 1e-12
TRACE_ATOL = 1e-12


@dataclass(frozen=True)
class HilbertDims:
    d_sys: int
    d_env: int

    def __post_init__(self):
        if int(self.d_sys) != self.d_sys or int(self.d_env) != self.d_env:
            raise InvalidInputError("dimensions must be integers", "HilbertDims",
                                    module="hs", d_sys=self.d_sys, d_env=self.d_env)
        if self.d_sys < 2 or self.d_env < 1:
            raise InvalidInputError("need d_sys >= 2 and d_env >= 1", "HilbertDims",
                                    module="hs", d_sys=self.d_sys, d_env=self.d_env)

    @property
    def d_tot(self):
        return self.d_sys * self.d_env


def vec(X):
    """Row-major vectorization of a square operator."""
    X = np.asarray(X)
    return X.reshape(-1)


def unvec(v, dim=None):
    v = np.asarray(v)
    if dim is None:
        dim = int(round(np.sqrt(v.size)))
    if dim * dim != v.size:
        raise InvalidInputError(f"vector of length {v.size} is not a vectorized "
                                f"{dim}x{dim} operator", "unvec", module="hs")
    return v.reshape(dim, dim)


def hs_norm(A):
    return float(np.linalg.norm(A))


def hs_inner(A, B):
    """Hilbert-Schmidt scalar product ``Tr(A^dagger B)``."""
    A = np.asarray(A)
    B = np.asarray(B)
    if A.shape != B.shape:
        raise InvalidInputError(f"shape mismatch {A.shape} vs {B.shape}", "hs_inner",
                                module="hs")
    return complex(np.vdot(A, B))


def is_hermitian(A, rtol=HERMITIAN_RTOL):
    A = np.asarray(A)
    scale = max(hs_norm(A), np.finfo(float).tiny)
    return hs_norm(A - A.conj().T) <= rtol * scale


def hermitize(A):
    """Hermitian part; works on stacks of matrices along the leading axes."""
    A = np.asarray(A)
    return 0.5 * (A + np.swapaxes(A, -1, -2).conj())


def _square(A, name, op):
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"{name} must be a square matrix, got shape {A.shape}",
                                op, module="hs")
    return A


def check_hermitian(A, name="operator", op="check_hermitian"):
    A = _square(A, name, op)
    if not is_hermitian(A):
        raise InvalidInputError(f"{name} is not hermitian", op, module="hs",
                                defect=hs_norm(A - A.conj().T))
    return A


def check_density_matrix(rho, tol_pos=1e-10, name="rho", op="check_density_matrix"):
    """Validate a density matrix and return it as a complex array.

    Hermiticity is checked relative to the HS norm (1e-12), the trace to
    1e-12 absolute, positivity as ``min eigenvalue >= -tol_pos``.
    """
    rho = check_hermitian(rho, name, op)
    tr = np.trace(rho)
    if abs(tr - 1.0) > TRACE_ATOL:
        raise InvalidInputError(f"{name} does not have unit trace", op, module="hs",
                                trace=tr)
    lo = float(np.linalg.eigvalsh(hermitize(rho)).min())
    if lo < -tol_pos:
        raise InvalidInputError(f"{name} is not positive semidefinite", op, module="hs",
                                min_eigenvalue=lo)
    return rho


def liouvillian(H):
    """Commutator superoperator ``X -> [H, X]`` for hermitian ``H``."""
    H = check_hermitian(H, "H", "liouvillian")
    eye = np.eye(H.shape[0])
    return np.kron(H, eye) - np.kron(eye, H.T)


def commutator_superop(H):
    """Same as :func:`liouvillian` without the hermiticity check."""
    H = np.asarray(H, dtype=complex)
    eye = np.eye(H.shape[0])
    return np.kron(H, eye) - np.kron(eye, H.T)


def apply_superop(S, X):
    X = np.asarray(X)
    return unvec(S @ vec(X), X.shape[0])


def partial_trace_env(X, dims):
    """Trace out the environment factor of an operator on ``d_sys * d_env``."""
    X = np.asarray(X)
    if X.shape != (dims.d_tot, dims.d_tot):
        raise InvalidInputError(f"operator of shape {X.shape} does not match "
                                f"d_tot={dims.d_tot}", "partial_trace_env", module="hs")
    ds, de = dims.d_sys, dims.d_env
    return np.trace(X.reshape(ds, de, ds, de), axis1=1, axis2=3)


def embed_system(X, rho_env):
    """Tensor a system operator with an environment state: ``X (x) rho_env``."""
    X = np.asarray(X)
    rho_env = np.asarray(rho_env)
    if X.ndim != 2 or rho_env.ndim != 2:
        raise InvalidInputError("operators must be 2-d", "embed_system", module="hs")
    return np.kron(X, rho_env)


def partial_trace_matrix(dims):
    """Matrix of the linear map ``vec(X) -> vec(Tr_E X)``, shape (d_sys**2, d_tot**2)."""
    ds, de = dims.d_sys, dims.d_env
    T = np.zeros((ds, ds, ds, de, ds, de))
    for s in range(ds):
        for sp in range(ds):
            T[s, sp, s, :, sp, :] = np.eye(de)
    return T.reshape(ds * ds, dims.d_tot ** 2)


def embedding_matrix(dims, rho_env):
    """Matrix of ``vec(X) -> vec(X (x) rho_env)``, shape (d_tot**2, d_sys**2)."""
    ds, de = dims.d_sys, dims.d_env
    rho_env = np.asarray(rho_env, dtype=complex)
    E = np.zeros((ds, de, ds, de, ds, ds), dtype=complex)
    for s in range(ds):
        for sp in range(ds):
            E[s, :, sp, :, s, sp] = rho_env
    return E.reshape(dims.d_tot ** 2, ds * ds)


def random_hermitian(dim, rng):
    X = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return 0.5 * (X + X.conj().T)


def random_density_matrix(dim, rng, rank=None):
    rank = dim if rank is None else rank
    G = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    rho = G @ G.conj().T
    return rho / np.trace(rho).real
