"""Base registrars: the ICP family and the Gaussian-mixture registrar."""
from dataclasses import replace
from typing import Optional

from .base import BaseRegistrar, IterationRecord, RegistrationResult
from .gmm import (
    GaussianMixture,
    GmmParams,
    GmmRegistrar,
    Responsibilities,
    fit_gmm,
    register_gmm,
    responsibilities,
    reweight_model,
)
from .icp import IcpParams, IcpRegistrar, IcpVariant, ficp_select, irls_weights, register_icp, trim_pairs

__all__ = [
    'BaseRegistrar',
    'GaussianMixture',
    'GmmParams',
    'GmmRegistrar',
    'IcpParams',
    'IcpRegistrar',
    'IcpVariant',
    'IterationRecord',
    'RegistrationResult',
    'Responsibilities',
    'ficp_select',
    'fit_gmm',
    'irls_weights',
    'register_gmm',
    'register_icp',
    'responsibilities',
    'reweight_model',
    'trim_pairs',
    'make_registrar',
]


def make_registrar(name: str, icp_params: Optional[IcpParams] = None,
                   gmm_params: Optional[GmmParams] = None,
                   **variant_params) -> BaseRegistrar:
    """Build a registrar from a config algorithm name ('icp', 'trimmed', 'fractional', 'irls', 'gmm')."""
    if name == 'gmm':
        return GmmRegistrar(gmm_params)
    kinds = {'icp': 'plain', 'plain': 'plain', 'trimmed': 'trimmed',
             'fractional': 'fractional', 'irls': 'irls'}
    if name not in kinds:
        raise ValueError(f"Unknown algorithm '{name}'. Must be one of: {sorted(set(kinds) | {'gmm'})}")
    variant = IcpVariant(kind=kinds[name], **variant_params)
    return IcpRegistrar(replace(icp_params or IcpParams(), variant=variant))
