"""mflab: a numerical laboratory for mean-field interacting particle systems.

Simulates the N-particle dynamics on the torus, extracts direct and dual
cumulants through cancellation-projected cluster expansions, and measures
convergence rates toward the mean-field limit.
"""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    DensityModel,
    InteractionObservable,
    PhaseConfig,
    TrigKernel,
    kernel_eval,
    kernel_mollify,
    rough_kernel,
    smooth_kernel,
    zero_kernel,
)
from .dynamics import IntegratorSpec, ParticleEnsemble  # noqa: F401
from .observables import Observable, parse_observable  # noqa: F401
