"""Conditional-variance blocks for every model family."""

from __future__ import annotations

import numpy as np

from ..model import Family
from . import regimes, student_t, sv
from .regimes import (
    RegimeError,
    ffbs_states,
    filter_regimes,
    sample_mixture_allocations,
    sample_regime_variances,
    sample_transition_matrix,
)
from .student_t import sample_t_dof, sample_t_latent_variances
from .sv import sample_aux_indicators, sample_log_volatility, sample_sv_parameters

__all__ = [
    "RegimeError",
    "ffbs_states",
    "filter_regimes",
    "initialise_volatility",
    "sample_aux_indicators",
    "sample_log_volatility",
    "sample_mixture_allocations",
    "sample_regime_variances",
    "sample_sv_parameters",
    "sample_t_dof",
    "sample_t_latent_variances",
    "sample_transition_matrix",
    "update_homoskedastic",
    "update_volatility",
]


def update_homoskedastic(state, spec=None, U=None, rng=None):
    """Set every conditional variance to one."""
    state.sigma2 = np.ones_like(state.sigma2) if state.sigma2 is not None else None
    return state


def update_volatility(state, spec, U, rng) -> None:
    """One update of the family-specific variance block given shocks ``U``."""
    fam = spec.family
    if fam is Family.HOMO:
        update_homoskedastic(state)
    elif fam.is_sv:
        sv.sample_sv_parameters(state, spec, U, rng)
    elif fam.is_markov:
        regimes.update_msh(state, spec, U, rng)
    elif fam.is_regime:
        regimes.update_mix(state, spec, U, rng)
    elif fam is Family.T:
        student_t.update_t(state, spec, U, rng)
    else:  # pragma: no cover
        raise ValueError(f"unsupported family {fam}")


def initialise_volatility(state, spec, rng) -> None:
    fam = spec.family
    state.sigma2 = np.ones((spec.N, spec.T))
    if fam.is_sv:
        sv.initialise(state, spec, rng)
    elif fam.is_regime:
        regimes.initialise(state, spec, rng)
    elif fam is Family.T:
        student_t.initialise(state, spec, rng)
