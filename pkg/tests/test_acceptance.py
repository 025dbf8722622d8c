"""Acceptance criteria.

Every test carries a ``criterion`` marker; the terminal summary prints one
PASS/FAIL line per criterion with the measured figures.  Tolerances are the
stated ones and are not adjusted to the outcome.
"""

import time
import warnings

import numpy as np
import pytest
import scipy.linalg as sla

from openliouville import hs
from openliouville.dynamics import (Trajectory, nz_integrate, oracle_exact, reconstruct,
                                    relaxation_report, stationary_basis)
from openliouville.entropy import (entropy, entropy_series, lyapunov_check,
                                   overdamped_production)
from openliouville.models import (TwoLevelPhenomenology, constraint_validate, make_model,
                                  partition_model, two_level_trajectory)
from openliouville.modes import assemble_mode_set, markov_freeze, markov_modes
from openliouville.projection import (EffectiveLiouville, exact_reduced_resolvent_state,
                                      reduced_resolvent_state)

from _support import generic, lindblad_qubit

ZOO_DIMS = {"random-generic": (2, 3), "pure-dephasing": (2, 3), "two-environment": (2, 4),
            "decoupled-pair": (2, 3), "closed": (2, 3)}
EPS = 0.05


def _quiet(fn, *args, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fn(*args, **kw)


def _hs_rel(a, b):
    return np.linalg.norm(a - b, axis=(-2, -1)) / np.linalg.norm(b, axis=(-2, -1))


@pytest.fixture(scope="module")
def zoo():
    """Mode sets of 50 seeded models: 5 families times seeds 1..10."""
    out = {}
    for fam, dims in ZOO_DIMS.items():
        for seed in range(1, 11):
            spec = make_model(fam, dims, seed, 0.3)
            ev = EffectiveLiouville(partition_model(spec), smoothing=EPS)
            out[fam, seed] = (ev, _quiet(assemble_mode_set, ev, spec.rho0))
    return out


def _frequencies(rng, n=20):
    return rng.uniform(-2.0, 2.0, n) + 1j * rng.uniform(0.05, 1.0, n)


# -- 1, 2 --------------------------------------------------------------------

@pytest.mark.criterion(1, "frequency-domain exactness")
def test_frequency_domain_exactness(record_property):
    rng = np.random.default_rng(101)
    worst = 0.0
    t0 = time.perf_counter()
    for seed in range(1, 11):
        spec, part, ev = generic(seed, eps=0.0)
        for z in _frequencies(rng):
            lhs = reduced_resolvent_state(ev, spec.rho0, z)
            rhs = exact_reduced_resolvent_state(part, spec.rho0, z)
            worst = max(worst, hs.hs_norm(lhs - rhs) / hs.hs_norm(rhs))
    runtime = time.perf_counter() - t0
    record_property("detail", f"max rel err {worst:.2e}, {runtime:.2f} s")
    assert worst <= 1e-9
    assert runtime < 10.0


@pytest.mark.criterion(2, "left zero eigenvector and i/z law")
def test_left_zero_and_trace_law(record_property):
    rng = np.random.default_rng(101)
    left = trace = 0.0
    one = hs.vec(np.eye(2))
    for seed in range(1, 11):
        spec, _, ev = generic(seed, eps=0.0)
        for z in _frequencies(rng):
            left = max(left, np.linalg.norm(one @ ev.evaluate(z)))
            trace = max(trace, abs(np.trace(reduced_resolvent_state(ev, spec.rho0, z)) - 1j / z))
    record_property("detail", f"left {left:.1e}, trace {trace:.1e}")
    assert left <= 1e-10
    assert trace <= 1e-10


# -- 3 -----------------------------------------------------------------------

@pytest.mark.criterion(3, "lower half-plane confinement")
def test_lower_half_plane(zoo, record_property):
    im = max(float(np.max(ms.z.imag, initial=-np.inf)) for _, ms in zoo.values())
    record_property("detail", f"{len(zoo)} models, max Im z {im:.1e}")
    assert len(zoo) == 50
    assert im <= 1e-9


# -- 4 -----------------------------------------------------------------------

@pytest.mark.criterion(4, "Markov semigroup equivalence")
def test_markov_semigroup_equivalence(record_property):
    worst = first = 0.0
    for seed in range(1, 6):
        spec, _, ev = generic(seed, eps=EPS)
        L, ms = markov_freeze(ev, spec.rho0)
        t = np.linspace(0, 3 * ms.tau, 100)
        rec = reconstruct(ms, t).states
        ref = np.array([hs.unvec(sla.expm(-1j * L * s) @ hs.vec(spec.rho0)) for s in t])
        worst = max(worst, np.linalg.norm(rec - ref, axis=(1, 2)).max())
        first = max(first, hs.hs_norm(rec[0] - spec.rho0))
    record_property("detail", f"HS err {worst:.1e}, rho(0) err {first:.1e}")
    assert worst <= 1e-9
    assert first <= 1e-9


# -- 5 -----------------------------------------------------------------------

@pytest.mark.criterion(5, "Nakajima-Zwanzig exactness")
@pytest.mark.parametrize("dims", [(2, 2), (2, 3), (2, 4)])
def test_nz_exactness(dims, record_property):
    spec, part, _ = generic(1, *dims)
    h = 1e-3 / part.spectral_scale
    n = 2500
    errs = []
    for step, npts in ((h, n), (h / 2, 2 * n)):
        t = np.arange(npts + 1) * step
        nz = nz_integrate(part, spec.rho0, t)
        ref = oracle_exact(spec.H_tot, spec.rho0, spec.rho_env, t)
        errs.append(float(_hs_rel(nz.states, ref.states).max()))
    ratio = errs[0] / errs[1]
    record_property("detail", f"d_tot={dims[0] * dims[1]}: err {errs[0]:.1e}, ratio {ratio:.2f}")
    assert errs[0] <= 1e-5
    assert ratio >= 3.5


# -- 6 -----------------------------------------------------------------------

@pytest.mark.criterion(6, "mode reconstruction vs oracle (calibrated eps)")
def test_mode_reconstruction_vs_oracle(record_property):
    spec = make_model("random-generic", (2, 8), 1, 0.1)
    part = partition_model(spec)
    best = (np.inf, None)
    for eps in (0.01, 0.02, 0.05, 0.1, 0.2, 0.5):
        ev = EffectiveLiouville(part, smoothing=eps)
        ms = _quiet(assemble_mode_set, ev, spec.rho0)
        t = np.linspace(0, 3 * ms.tau, 600)
        rec = _quiet(reconstruct, ms, t).states
        ref = oracle_exact(spec.H_tot, spec.rho0, spec.rho_env, t).states
        err = float(np.linalg.norm(rec - ref, axis=(1, 2)).max())
        best = min(best, (err, eps))
    record_property("detail", f"best eps {best[1]}: max HS err {best[0]:.2e}")
    assert best[0] <= 5e-2


# -- 7 -----------------------------------------------------------------------

@pytest.mark.criterion(7, "stationary-state independence")
def test_stationary_state_independence(record_property):
    spec, _, ev = generic(1)
    rng = np.random.default_rng(7)
    sets = [_quiet(assemble_mode_set, ev, hs.random_density_matrix(2, rng)) for _ in range(5)]
    spread = max(hs.hs_norm(ms.rho_inf - sets[0].rho_inf) for ms in sets)
    late = max(hs.hs_norm(reconstruct(ms, [50 * ms.tau]).states[0] - ms.rho_inf)
               for ms in sets)
    pair = make_model("decoupled-pair", (4, 2), 3, 0.3)
    ms_pair = _quiet(assemble_mode_set, EffectiveLiouville(partition_model(pair), EPS),
                     pair.rho0)
    record_property("detail", f"spread {spread:.1e}, |rho(50 tau) - rho_inf| {late:.1e}, "
                              f"pair unique={ms_pair.unique_zero}")
    assert spread <= 1e-10
    assert late <= 1e-9
    assert not ms_pair.unique_zero


# -- 8 -----------------------------------------------------------------------

@pytest.mark.criterion(8, "hermitian pairing and odd-N rule")
def test_pairing_and_odd_rule(zoo, record_property):
    n_models = 0
    worst_mirror = 0.0
    missing_zero = []
    for key, (ev, ms) in zoo.items():
        if ms.rho_inf.shape[0] != 2:
            continue
        n_models += 1
        z = ms.z
        tol = 1e-6 * ms.scale
        if not np.any(np.abs(z.real) <= tol):
            missing_zero.append(key)
        for zk in z:
            worst_mirror = max(worst_mirror, float(np.min(np.abs(z + np.conj(zk)))) / ms.scale)
    record_property("detail", f"{n_models} two-level models, worst mirror miss "
                              f"{worst_mirror:.1e}, no omega=0 mode: {missing_zero}")
    assert n_models == 50
    assert not missing_zero
    assert worst_mirror <= 1e-6


# -- 9 -----------------------------------------------------------------------

@pytest.mark.criterion(9, "pure dephasing")
@pytest.mark.parametrize("seed", [1, 2, 3])
def test_pure_dephasing(seed, record_property):
    spec, _, ev = generic(seed, d_env=6, g=1.0, family="pure-dephasing")
    ms = _quiet(assemble_mode_set, ev, spec.rho0)
    t = np.linspace(0, 5 * ms.tau, 2000)
    _, U = np.linalg.eigh(spec.H_S)
    traj = oracle_exact(spec.H_tot, spec.rho0, spec.rho_env, t).in_basis(U, "computational")
    pops = np.real(np.diagonal(traj.states, axis1=1, axis2=2))
    drift = float(np.abs(pops - pops[0]).max())
    coh = np.abs(traj.states[:, 0, 1])
    low = float(coh.min() / coh[0])
    record_property("detail", f"seed {seed}: population drift {drift:.1e}, "
                              f"min |rho01|/|rho01(0)| {low:.3f}")
    assert drift <= 1e-9
    assert low <= 0.1


# -- 10 ----------------------------------------------------------------------

@pytest.mark.criterion(10, "common timescale")
def test_common_timescale(record_property):
    ratios = []
    for seed in range(1, 11):
        spec, _, ev = generic(seed)
        ms = _quiet(assemble_mode_set, ev, spec.rho0)
        t = np.linspace(0, 4 * ms.tau, 4000)
        rep = relaxation_report(_quiet(reconstruct, ms, t), ms)
        taus = [e["tau_mn"] for e in rep["elements"] if e["touched"] and e["tau_mn"]]
        ratios.append(max(taus) / min(taus))
    record_property("detail", f"max tau_mn ratio {max(ratios):.2f} over 10 models")
    assert max(ratios) <= 3.0


# -- 11 ----------------------------------------------------------------------

def _groups(ms):
    g = np.sort([m.gamma for m in ms.decaying(rho0_norm=ms.meta["rho0_norm"])])
    cut = int(np.argmax(np.diff(np.log(g)))) + 1
    return g[:cut], g[cut:]


@pytest.mark.criterion(11, "two-environment separation")
@pytest.mark.parametrize("seed", [1, 2, 3])
def test_two_environment_separation(seed, record_property):
    spec, _, ev = generic(seed, d_env=4, family="two-environment")
    ms = _quiet(assemble_mode_set, ev, spec.rho0)
    slow, fast = _groups(ms)
    ratio = fast.min() / slow.max()
    tau1, tau2 = 1 / fast.min(), 1 / slow.min()
    t = np.concatenate([[0.0], np.linspace(2 * tau1, tau2 / 2, 2000)])
    U = stationary_basis(ms.rho_inf)
    traj = _quiet(reconstruct, ms, t).in_basis(U, "stationary-eigenbasis")
    # coherence deviation from its final value, on the scale of its initial size
    c = np.abs(traj.states[:, 0, 1] - (U.conj().T @ ms.rho_inf @ U)[0, 1])
    change = float((c[1:].max() - c[1:].min()) / c[0])
    record_property("detail", f"seed {seed}: gamma ratio {ratio:.0f}, "
                              f"plateau change {100 * change:.1f}%")
    assert ratio >= 10
    assert change < 0.05


# -- 12 ----------------------------------------------------------------------

@pytest.mark.criterion(12, "entropy suite")
def test_closed_system_entropy_constant(record_property):
    spec = make_model("closed", (3, 2), 1, 0.0)
    t = np.linspace(0, 50, 501)
    traj = oracle_exact(spec.H_tot, spec.rho0, spec.rho_env, t)
    S = np.array([entropy(r) for r in traj.states])
    record_property("detail", f"closed drift {np.abs(S - S[0]).max():.1e}")
    assert np.abs(S - S[0]).max() <= 1e-9


def _generic_series(seed):
    spec, _, ev = generic(seed)
    ms = _quiet(assemble_mode_set, ev, spec.rho0)
    t = np.linspace(0, 5 * ms.tau, 1001)
    rec = _quiet(entropy_series, _quiet(reconstruct, ms, t), ms.rho_inf)
    orc = _quiet(entropy_series, oracle_exact(spec.H_tot, spec.rho0, spec.rho_env, t),
                 ms.rho_inf)
    return rec, orc


@pytest.fixture(scope="module")
def generic_series():
    return {seed: _generic_series(seed) for seed in range(1, 11)}


@pytest.mark.criterion(12, "entropy suite")
def test_entropy_reaches_stationary_value(generic_series, record_property):
    dev = [abs(rec.S[-1] - rec.S_inf) for rec, _ in generic_series.values()]
    bad = sum(d > 1e-3 for d in dev)
    record_property("detail", f"|S(5tau) - S_inf| max {max(dev):.1e} ({bad}/10 above 1e-3)")
    assert max(dev) <= 1e-3


@pytest.mark.criterion(12, "entropy suite")
def test_relative_entropies_non_negative(generic_series, record_property):
    low = min(min(s.S_rel_fwd.min(), s.S_rel_bwd.min())
              for pair in generic_series.values() for s in pair)
    record_property("detail", f"min relative entropy {low:.1e}")
    assert low >= -1e-9


def _overdamped():
    rho0 = np.array([[0.75, 0.15 - 0.1j], [0.15 + 0.1j, 0.25]])
    ms = markov_modes(lindblad_qubit(), rho0)
    t = np.arange(1001) * (ms.tau / 200)
    return ms, entropy_series(reconstruct(ms, t), ms.rho_inf)


@pytest.mark.criterion(12, "entropy suite")
def test_overdamped_lyapunov(record_property):
    ms, ser = _overdamped()
    out = lyapunov_check(ser, ms, (ms.tau, 5 * ms.tau))
    record_property("detail", f"overdamped {out['verdict']} (max production "
                              f"{out['max_production']:.1e})")
    assert out["verdict"] == "PASS"
    assert out["max_production"] <= 1e-6


@pytest.mark.criterion(12, "entropy suite")
def test_underdamped_not_applicable(record_property):
    p = TwoLevelPhenomenology(gamma1=1.0, gamma2=0.2, omega=1.0, r=0.1, s=0.1, phi0=0.0,
                              p_inf=0.5)
    ms = p.mode_set()
    t = np.arange(1001) * (ms.tau / 200)
    ser = entropy_series(Trajectory(t, p.states(t)), ms.rho_inf)
    out = lyapunov_check(ser, ms, (ms.tau, 5 * ms.tau))
    record_property("detail", f"underdamped Omega tau {out['omega_tau']:.1f}: "
                              f"{out['verdict']}, {out['sign_changes']} sign changes")
    assert out["verdict"] == "NOT-APPLICABLE"
    assert out["sign_changes"] > 0


@pytest.mark.criterion(12, "entropy suite")
def test_two_sided_production_formula(record_property):
    ms, ser = _overdamped()
    sel = (ser.times >= ms.tau) & (ser.times <= 5 * ms.tau)
    pred = overdamped_production(ser, ms.tau)[sel]
    rel_pt = float((np.abs(ser.production_fwd[sel] - pred) / np.abs(pred)).max())
    record_property("detail", f"two-sided formula rel err {rel_pt:.1e}")
    assert rel_pt <= 1e-4


# -- 13 ----------------------------------------------------------------------

@pytest.mark.criterion(13, "two-level phenomenology")
def test_two_level_phenomenology(record_property):
    bad = TwoLevelPhenomenology(gamma1=1.0, gamma2=0.5, omega=1.0, r=0.0, s=0.6, phi0=0.0,
                                p_inf=0.5)
    verdict = constraint_validate(bad)
    good = TwoLevelPhenomenology(gamma1=0.5, gamma2=0.2, omega=1.3, r=0.1, s=0.1, phi0=0.4,
                                 p_inf=0.3)
    tau = good.mode_set().tau
    traj = two_level_trajectory(good, [0.0, 10 * tau, 30 * tau])
    dist = hs.hs_norm(traj.states[-1] - np.diag([0.3, 0.7]))
    record_property("detail", f"s=0.6 -> {verdict['verdict']} at t={verdict['t']}, "
                              f"valid set distance {dist:.1e}")
    assert verdict["verdict"] == "FAIL" and verdict["t"] == 0.0
    assert dist <= 1e-9
