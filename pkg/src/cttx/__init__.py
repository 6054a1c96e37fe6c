"""Continuous-time transfer entropy toolkit.

Sample paths and simulators (:mod:`cttx.paths`), comb grids (:mod:`cttx.comb`),
discrete and plug-in TE (:mod:`cttx.dte`), the lagged-Poisson closed forms
(:mod:`cttx.poisson`), Girsanov pathwise TE for jump processes
(:mod:`cttx.markov`), convergence and rate checks (:mod:`cttx.limits`) and the
``cttx`` command line (:mod:`cttx.cli`).
"""

__version__ = "0.1.0"

from .comb import CombGrid, build_grid, refines  # noqa: E402
from .dte import Pmf, TEEstimate, kl_divergence, schreiber_te, te_comb_sum  # noqa: E402
from .exceptions import (AbsoluteContinuityError, ConfigError, CttxError,  # noqa: E402
                         EstimationError, ModelError, NumericalError, ParameterError)
from .paths import ProcessPair, SamplePath, lag_path, simulate_ctmc, simulate_thppp  # noqa: E402

__all__ = [
    "AbsoluteContinuityError", "CombGrid", "ConfigError", "CttxError", "EstimationError",
    "ModelError", "NumericalError", "ParameterError", "Pmf", "ProcessPair", "SamplePath",
    "TEEstimate", "build_grid", "kl_divergence", "lag_path", "refines", "schreiber_te",
    "simulate_ctmc", "simulate_thppp", "te_comb_sum",
]
