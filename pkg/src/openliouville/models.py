"""Model families (system + finite environment) and the phenomenological
two-level density-matrix evolution with its positivity constraints."""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import hs
from .dynamics import Trajectory
from .errors import InvalidInputError, ReliabilityWarning
from .modes import EffectiveMode, ModeSet
from .projection import EffectiveLiouville, build_projectors, partition_liouville

FAMILIES = ("random-generic", "pure-dephasing", "two-environment", "decoupled-pair", "closed")
STATIONARY_TOL = 1e-12
TWO_ENV_RATIO = 20.0
# gamma ~ coupling**2; the fast dephasing channel is this much more
# efficient than the slow generic one at equal coupling (set empirically)
TWO_ENV_CALIBRATION = 1.0


@dataclass(eq=False)
class ModelSpec:
    dims: hs.HilbertDims
    H_S: np.ndarray
    H_E: np.ndarray
    H_int: np.ndarray
    rho_env: np.ndarray
    rho0: np.ndarray
    seed: int = 0
    family: str = "random-generic"
    coupling_strength: float = 0.0
    beta: float = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    @property
    def H_tot(self):
        de, ds = self.dims.d_env, self.dims.d_sys
        return (np.kron(self.H_S, np.eye(de)) + np.kron(np.eye(ds), self.H_E) + self.H_int)

    def validate(self):
        ds, de, dt = self.dims.d_sys, self.dims.d_env, self.dims.d_tot
        for name, M, n in (("H_S", self.H_S, ds), ("H_E", self.H_E, de), ("H_int", self.H_int, dt)):
            M = hs.check_hermitian(M, name, "ModelSpec")
            if M.shape != (n, n):
                raise InvalidInputError(f"{name} has shape {M.shape}, expected {(n, n)}",
                                        "ModelSpec", module="models")
            setattr(self, name, M)
        self.rho_env = hs.check_density_matrix(self.rho_env, name="rho_env", op="ModelSpec")
        self.rho0 = hs.check_density_matrix(self.rho0, name="rho0", op="ModelSpec")
        if self.rho_env.shape != (de, de) or self.rho0.shape != (ds, ds):
            raise InvalidInputError("state dimensions do not match dims", "ModelSpec",
                                    module="models")
        comm = hs.hs_norm(self.H_E @ self.rho_env - self.rho_env @ self.H_E)
        if comm > STATIONARY_TOL * max(1.0, hs.hs_norm(self.H_E)):
            raise InvalidInputError("rho_env is not stationary under H_E", "ModelSpec",
                                    module="models", commutator=comm)
        if self.family not in FAMILIES:
            raise InvalidInputError(f"unknown family {self.family!r}", "ModelSpec",
                                    module="models")

    def to_config(self, matrices=True):
        cfg = {"family": self.family,
               "dims": {"d_sys": self.dims.d_sys, "d_env": self.dims.d_env},
               "seed": int(self.seed),
               "coupling_strength": float(self.coupling_strength),
               "beta": None if self.beta is None else float(self.beta)}
        if matrices:
            cfg["matrices"] = {k: flatten_complex(getattr(self, k))
                               for k in ("H_S", "H_E", "H_int", "rho_env", "rho0")}
        return cfg


def flatten_complex(M):
    """Row-major flat list with real and imaginary parts interleaved."""
    M = np.asarray(M, dtype=complex).reshape(-1)
    return np.column_stack([M.real, M.imag]).reshape(-1).tolist()


def unflatten_complex(values, dim, name="matrix"):
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size != 2 * dim * dim:
        raise InvalidInputError(f"{name} needs {2 * dim * dim} numbers, got {v.size}",
                                "model_from_config", module="models")
    return (v[0::2] + 1j * v[1::2]).reshape(dim, dim)


def gue(dim, rng):
    """Hermitized complex Gaussian matrix scaled to spectral radius 1."""
    H = hs.random_hermitian(dim, rng)
    r = np.abs(np.linalg.eigvalsh(H)).max()
    return H / r if r > 0 else H


def thermal_state(H, beta):
    w, V = np.linalg.eigh(H)
    p = np.exp(-beta * (w - w.min()))
    p /= p.sum()
    return (V * p) @ V.conj().T


def _factor_env(d_env):
    for a in range(2, int(np.sqrt(d_env)) + 1):
        if d_env % a == 0:
            return a, d_env // a
    raise InvalidInputError("two-environment family needs a composite d_env >= 4",
                            "make_model", module="models", d_env=d_env)


def make_model(family, dims, seed, coupling_strength, beta=None, rho0=None,
               ratio=TWO_ENV_RATIO):
    """Draw a model of the given family from a seeded generator.

    Every Hamiltonian block is a GUE draw normalized to spectral radius 1
    and only ``H_int`` is multiplied by ``coupling_strength``.  The
    environment starts in the thermal state of ``H_E`` at ``beta``
    (default: inverse spectral radius of ``H_E``).
    """
    if family not in FAMILIES:
        raise InvalidInputError(f"unknown family {family!r}", "make_model", module="models")
    if coupling_strength < 0 or not np.isfinite(coupling_strength):
        raise InvalidInputError("coupling_strength must be non-negative", "make_model",
                                module="models", coupling_strength=coupling_strength)
    if not isinstance(dims, hs.HilbertDims):
        dims = hs.HilbertDims(*dims)
    ds, de, dt = dims.d_sys, dims.d_env, dims.d_tot
    rng = np.random.default_rng(seed)
    g = float(coupling_strength)
    meta = {}
    if family == "decoupled-pair" and ds % 2:
        raise InvalidInputError("decoupled-pair needs an even d_sys", "make_model",
                                module="models", d_sys=ds)
    if family == "two-environment":
        da, db = _factor_env(de)
        H_a, H_b = gue(da, rng), gue(db, rng)
        H_E = np.kron(H_a, np.eye(db)) + np.kron(np.eye(da), H_b)
        H_E /= np.abs(np.linalg.eigvalsh(H_E)).max()
    else:
        H_E = gue(de, rng)
    if family == "decoupled-pair":
        h = ds // 2
        H_S = np.zeros((ds, ds), dtype=complex)
        H_S[:h, :h], H_S[h:, h:] = gue(h, rng), gue(h, rng)
        H_S /= np.abs(np.linalg.eigvalsh(H_S)).max()
    else:
        H_S = gue(ds, rng)

    if family == "random-generic":
        H_int = g * gue(dt, rng)
    elif family == "pure-dephasing":
        H_int = g * np.kron(H_S, gue(de, rng))
    elif family == "closed":
        H_int = np.zeros((dt, dt), dtype=complex)
    elif family == "decoupled-pair":
        h = ds // 2
        H_int = np.zeros((dt, dt), dtype=complex)
        for block in (range(h), range(h, ds)):
            idx = np.array([s * de + e for s in block for e in range(de)])
            H_int[np.ix_(idx, idx)] = gue(idx.size, rng)
        H_int *= g
    else:
        da, db = _factor_env(de)
        fast = np.kron(np.kron(H_S, gue(da, rng)), np.eye(db))
        # generic coupling of system and the b factor, identity on a
        G = gue(ds * db, rng).reshape(ds, db, ds, db)
        slow = np.einsum("sbtc,ij->sibtjc", G, np.eye(da)).reshape(dt, dt)
        g_slow = g / np.sqrt(ratio * TWO_ENV_CALIBRATION)
        H_int = g * fast + g_slow * slow
        meta.update({"d_a": da, "d_b": db, "g_fast": g, "g_slow": g_slow, "ratio": ratio})

    if beta is None:
        beta = 1.0 / max(np.abs(np.linalg.eigvalsh(H_E)).max(), 1e-300)
    rho_env = thermal_state(H_E, beta)
    if rho0 is None:
        rho0 = hs.random_density_matrix(ds, rng)
    return ModelSpec(dims=dims, H_S=H_S, H_E=H_E, H_int=hs.hermitize(H_int), rho_env=rho_env,
                     rho0=rho0, seed=seed, family=family, coupling_strength=g, beta=beta,
                     meta=meta)


def partition_model(spec):
    """Projectors and block partition of the model's total Liouvillian."""
    proj = build_projectors(spec.dims, spec.rho_env)
    return partition_liouville(hs.liouvillian(spec.H_tot), proj)


def evaluator(spec, smoothing=0.0, partition=None):
    """Effective Liouville evaluator of a model."""
    if partition is None:
        partition = partition_model(spec)
    return EffectiveLiouville(partition, smoothing=smoothing)


def model_from_config(cfg):
    """Build a ModelSpec from a mapping as written by :meth:`ModelSpec.to_config`.

    Explicit matrices, if present, override the generated ones.
    """
    try:
        family = cfg.get("family", "random-generic")
        dims_cfg = cfg["dims"]
        dims = hs.HilbertDims(int(dims_cfg["d_sys"]), int(dims_cfg["d_env"]))
        seed = int(cfg.get("seed", 0))
        g = float(cfg.get("coupling_strength", 0.1))
        beta = cfg.get("beta")
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed model configuration: {exc}", "model_from_config",
                                module="models") from exc
    spec = make_model(family, dims, seed, g, beta=None if beta is None else float(beta))
    mats = cfg.get("matrices") or {}
    if mats:
        sizes = {"H_S": dims.d_sys, "H_E": dims.d_env, "H_int": dims.d_tot,
                 "rho_env": dims.d_env, "rho0": dims.d_sys}
        kw = {k: getattr(spec, k) for k in sizes}
        for k, v in mats.items():
            if k not in sizes:
                raise InvalidInputError(f"unknown matrix {k!r}", "model_from_config",
                                        module="models")
            kw[k] = unflatten_complex(v, sizes[k], k)
        spec = ModelSpec(dims=dims, seed=seed, family=family, coupling_strength=g,
                         beta=spec.beta, **kw)
    return spec


# -- phenomenological two-level system -------------------------------------

@dataclass(frozen=True)
class TwoLevelPhenomenology:
    """``rho11 = p + s e^{-g1 t} + 2 r cos(w t + phi0) e^{-g2 t}``,
    ``rho12 = s e^{-g1 t} + i r e^{-i w t - i phi0 - g2 t}``."""

    gamma1: float
    gamma2: float
    omega: float
    r: float
    s: float
    phi0: float
    p_inf: float

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise InvalidInputError("decay rates must be non-negative", "TwoLevelPhenomenology",
                                    module="models")
        if not 0.0 <= self.p_inf <= 1.0:
            raise InvalidInputError("p_inf must lie in [0, 1]", "TwoLevelPhenomenology",
                                    module="models", p_inf=self.p_inf)

    def elements(self, t):
        t = np.asarray(t, dtype=float)
        e1 = np.exp(-self.gamma1 * t)
        e2 = np.exp(-self.gamma2 * t)
        rho11 = self.p_inf + self.s * e1 + 2 * self.r * np.cos(self.omega * t + self.phi0) * e2
        rho12 = self.s * e1 + 1j * self.r * np.exp(-1j * (self.omega * t + self.phi0)) * e2
        return rho11, rho12

    def states(self, t):
        rho11, rho12 = self.elements(t)
        out = np.empty((np.size(t), 2, 2), dtype=complex)
        out[:, 0, 0] = rho11
        out[:, 1, 1] = 1 - rho11
        out[:, 0, 1] = rho12
        out[:, 1, 0] = np.conj(rho12)
        return out

    def validation_grid(self, n=10_000):
        g = min(self.gamma1, self.gamma2)
        if g > 0:
            t_max = 10.0 / g
        else:
            if self.r != 0 or self.s != 0:
                warnings.warn("undamped amplitudes: constraint check on a finite window",
                              ReliabilityWarning, stacklevel=3)
            t_max = 1e3 / abs(self.omega) if self.omega else 1e3
        return np.linspace(0.0, t_max, n + 2)

    def mode_set(self):
        """The same evolution written as a mode set (stationary state plus modes)."""
        rho_inf = np.diag([self.p_inf, 1 - self.p_inf]).astype(complex)
        s, r, ph = self.s, self.r, self.phi0
        A1 = np.array([[s, s], [s, -s]], dtype=complex)
        A = 2 * r * np.exp(-1j * ph) * np.array([[1, 1j], [0, -1]])
        parts = [(-1j * self.gamma1, A1)]
        if self.omega == 0:
            parts.append((-1j * self.gamma2, 0.5 * (A + A.conj().T)))
        else:
            parts += [(self.omega - 1j * self.gamma2, 0.5 * A),
                      (-self.omega - 1j * self.gamma2, 0.5 * A.conj().T)]
        modes = []
        for k, (z, Ak) in enumerate(parts, start=1):
            nrm = hs.hs_norm(Ak)
            R = Ak / nrm if nrm > 0 else Ak
            modes.append(EffectiveMode(k=k, z=complex(z), right=R, left=None, a=complex(nrm)))
        pairing = [(2, 3)] if self.omega != 0 else []
        ms = ModeSet(rho_inf=rho_inf, modes=modes, tau=np.inf, pairing=pairing, markov=True,
                     scale=max(abs(self.omega), self.gamma1, self.gamma2, 1e-300),
                     meta={"rho0_norm": hs.hs_norm(self.states(0.0)[0])})
        live = ms.decaying(rho0_norm=ms.meta["rho0_norm"])
        ms.tau = 1.0 / min(m.gamma for m in live) if live else np.inf
        return ms


def constraint_validate(p, n=10_000, tol=1e-12):
    """Check ``0 <= rho11 <= 1`` and ``det rho >= 0`` on a dense grid and at ``t -> inf``.

    Returns a dict with ``verdict`` (PASS or FAIL) and, on failure, the
    first violating time and the violated constraint.
    """
    t = p.validation_grid(n)
    rho11, rho12 = p.elements(t)
    det = rho11 * (1 - rho11) - np.abs(rho12) ** 2
    checks = (("rho11 >= 0", rho11 < -tol), ("rho11 <= 1", rho11 > 1 + tol),
              ("det >= 0", det < -tol))
    first = None
    for name, bad in checks:
        if bad.any():
            i = int(np.argmax(bad))
            if first is None or t[i] < first[0]:
                first = (float(t[i]), name)
    if first is None and not 0.0 <= p.p_inf <= 1.0:
        first = (np.inf, "rho11 in [0, 1]")
    if first is None:
        return {"verdict": "PASS", "t": None, "constraint": None,
                "min_det": float(det.min()), "t_max": float(t[-1])}
    return {"verdict": "FAIL", "t": first[0], "constraint": first[1],
            "min_det": float(det.min()), "t_max": float(t[-1])}


def two_level_trajectory(p, times):
    """Closed-form trajectory of a validated two-level parameter set."""
    verdict = constraint_validate(p)
    if verdict["verdict"] != "PASS":
        raise InvalidInputError("parameters violate the positivity constraints",
                                "two_level_trajectory", module="models", t=verdict["t"],
                                constraint=verdict["constraint"])
    return Trajectory(np.asarray(times, dtype=float), p.states(times), "stationary-eigenbasis")
