"""Frequency-dependent effective Liouville analysis of open quantum systems.

A finite system coupled to a finite environment is reduced by projection to
an effective Liouville superoperator ``L(z)``.  Its bi-orthogonal spectrum,
the self-consistent effective eigenvalues ``z_k = lambda_k(z_k)`` and the
residue amplitudes give the reduced dynamics as a sum of damped
oscillations, which is checked against exact unitary evolution of the
total system.
"""

from .dynamics import (ObservableSeries, Trajectory, nz_integrate, observable_series,
                       oracle_exact, reconstruct, relaxation_report, stationary_basis)
from .entropy import (EntropySeries, entropy, entropy_series, lyapunov_check,
                      relative_entropy)
from .errors import OpenLiouvilleError
from .hs import HilbertDims, hs_inner, liouvillian, partial_trace_env, vec, unvec
from .models import (ModelSpec, TwoLevelPhenomenology, constraint_validate, evaluator,
                     make_model, partition_model, two_level_trajectory)
from .modes import (EffectiveMode, ModeSet, amplitude, assemble_mode_set, markov_freeze,
                    markov_modes, quantum_map_spectrum, solve_effective_eigenvalue)
from .projection import (ConstantLiouville, EffectiveLiouville, build_projectors,
                         effective_liouville, effective_liouville_derivative,
                         partition_liouville)
from .spectral import SpectralDecomposition, decompose, track_bands, zero_mode

__version__ = "0.1.0"
