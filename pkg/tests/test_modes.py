import json
import warnings

import numpy as np
import pytest
import scipy.linalg as sla

from openliouville import hs
from openliouville.errors import (DegenerateSpectrumError, NearDefectivePoleError,
                                  StructuralError)
from openliouville.modes import (EffectiveMode, amplitude, assemble_mode_set, lambda_prime,
                                 markov_freeze, markov_modes, newton_solve,
                                 quantum_map_spectrum, solve_effective_eigenvalue)
from openliouville.spectral import track_bands

from _support import generic, lindblad_qubit


class ScalarBands:
    """Diagonal toy generator with bands ``a_k + g^2 / (z - mu_k)`` and a zero band.

    The self-consistent roots solve a quadratic and the residue is known in
    closed form, which makes it an oracle for the Newton iteration.
    """

    smoothing = 0.0
    dim = 4
    scale = 1.0
    eps_min = 1e-6

    def __init__(self, a, mu, g):
        self.a = np.asarray(a, dtype=complex)
        self.mu = np.asarray(mu, dtype=complex)
        self.g = g

    def bands(self, z):
        return self.a + self.g ** 2 / (z - self.mu)

    def evaluate(self, z, continuation=False):
        return np.diag(np.concatenate([[0], self.bands(z)]))

    def derivative(self, z, continuation=False):
        return np.diag(np.concatenate([[0], -self.g ** 2 / (z - self.mu) ** 2]))

    def zero_point(self):
        return 0j

    def roots(self, k):
        a, mu, g = self.a[k], self.mu[k], self.g
        disc = np.sqrt((a - mu) ** 2 + 4 * g ** 2)
        return np.array([(a + mu + disc) / 2, (a + mu - disc) / 2])


def _unit(k):
    E = np.zeros((2, 2), dtype=complex)
    E.reshape(-1)[k] = 1.0
    return E


TOY = ScalarBands(a=[1.0 - 0.1j, -1.0 - 0.1j, -0.3j], mu=[0.4 - 1j, -0.4 - 1j, -2j], g=0.3)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_newton_finds_quadratic_root(k):
    mode = newton_solve(TOY, TOY.a[k], _unit(k + 1), _unit(k + 1))
    # stopping rule is |z - lambda(z)| <= 1e-10 scale
    assert np.min(np.abs(TOY.roots(k) - mode.z)) < 2e-10
    assert mode.iterations <= 10


def test_lambda_prime_matches_finite_difference_and_residue():
    k = 0
    mode = newton_solve(TOY, TOY.a[k], _unit(1), _unit(1))
    h = 1e-6
    fd = (TOY.bands(mode.z + h)[k] - TOY.bands(mode.z - h)[k]) / (2 * h)
    assert abs(mode.lambda_prime - fd) < 1e-8
    # residue of 1 / (z - lambda(z)) at the root
    dz = 1e-7
    res = dz / ((mode.z + dz) - TOY.bands(mode.z + dz)[k])
    assert abs(res - 1 / (1 - mode.lambda_prime)) < 1e-6
    assert abs(lambda_prime(TOY, mode.z, _unit(1), _unit(1)) - mode.lambda_prime) < 1e-15


def test_band_solver_refuses_upper_half_plane():
    up = ScalarBands(a=[0.5 + 0.3j, -0.5 - 0.2j, -0.4j], mu=[0.1 + 2j, -1 - 1j, -2j], g=0.1)
    grid = np.linspace(-2, 2, 81) + 0j
    band = track_bands(up, grid)
    k = int(np.argmin(np.abs(band.eigenvalues[40] - up.a[0])))
    with pytest.raises(StructuralError):
        solve_effective_eigenvalue(up, band, k)


def test_double_pole_amplitude_raises():
    m = EffectiveMode(k=1, z=-1j, right=_unit(1), left=_unit(1), lambda_prime=1.0)
    with pytest.raises(NearDefectivePoleError):
        amplitude(m, np.eye(2) / 2)


def test_markov_modes_of_lindblad_qubit():
    g, a, c = 0.4, 0.05, 4.0
    L = lindblad_qubit(g, a, c)
    rho0 = np.array([[0.7, 0.2 - 0.1j], [0.2 + 0.1j, 0.3]])
    ms = markov_modes(L, rho0)
    assert np.allclose(sorted(ms.gammas), sorted([g + 2 * a, g / 2 + 2 * c, g / 2 + 2 * c + 2 * a]))
    assert np.allclose(ms.z.real, 0.0)
    assert np.isclose(ms.tau, 1 / (g + 2 * a))
    # amplitudes reproduce the initial state exactly
    rho_t0 = ms.rho_inf + sum(m.A for m in ms.modes)
    assert np.abs(rho_t0 - rho0).max() < 1e-12


def test_quantum_map_spectrum_is_exp_of_generator():
    L = lindblad_qubit(H=np.array([[0.5, 0.2], [0.2, -0.5]]))
    rho0 = np.eye(2) / 2
    ms = markov_modes(L, rho0)
    phi = quantum_map_spectrum(ms)
    ref = np.linalg.eigvals(sla.expm(-1j * L))
    assert phi[0] == 1
    for p in phi:
        assert np.min(np.abs(ref - p)) < 1e-12
    assert np.abs(phi).max() <= 1 + 1e-12


def test_degenerate_effective_eigenvalues_abort():
    L = lindblad_qubit(g=0.0, a=0.0, c=1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(DegenerateSpectrumError):
            markov_modes(L, np.eye(2) / 2)


@pytest.mark.parametrize("seed", range(1, 6))
def test_effective_modes_are_distinct_paired_and_decaying(seed):
    spec, _, ev = generic(seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ms = assemble_mode_set(ev, spec.rho0)
    z = ms.z
    assert len(z) == 3
    assert np.all(z.imag <= 1e-9)
    assert np.min(np.abs(z[:, None] - z[None, :]) + np.eye(3)) > 1e-6
    for m in ms.modes:
        lam = np.linalg.eigvals(ev.evaluate(m.z, continuation=True))
        assert np.min(np.abs(lam - m.z)) < 1e-9 * ev.scale
        assert abs(np.trace(m.right)) < 1e-9 * hs.hs_norm(m.right)
    paired = {k for p in ms.pairing for k in p}
    for m in ms.modes:
        assert m.k in paired or abs(m.omega) <= 1e-6 * ev.scale
    assert np.isclose(np.trace(ms.rho_inf).real, 1.0)


def test_markov_freeze_matches_zero_frequency_generator():
    spec, _, ev = generic(2)
    L, ms = markov_freeze(ev, spec.rho0)
    assert np.allclose(L, ev.evaluate(ev.zero_point()))
    assert ms.markov and ms.unique_zero
    assert np.abs(ms.rho_inf + sum(m.A for m in ms.modes) - spec.rho0).max() < 1e-9


def test_mode_set_json_has_full_precision(tmp_path):
    spec, _, ev = generic(3)
    _, ms = markov_freeze(ev, spec.rho0)
    ms.dump(tmp_path / "m.json")
    d = json.load(open(tmp_path / "m.json"))
    assert d["dim"] == 2 and len(d["modes"]) == 3
    assert d["modes"][0]["gamma"] == ms.modes[0].gamma
    flat = np.array(d["rho_infinity"]).reshape(-1, 2)
    assert np.array_equal(flat[:, 0] + 1j * flat[:, 1], ms.rho_inf.reshape(-1))
