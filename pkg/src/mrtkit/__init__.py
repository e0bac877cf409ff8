"""Monte Carlo toolkit for chaos expansions, Malliavin derivatives and martingale representations."""
from .chaos import ChaosExpansion, ChaosTerm, StepFunction, chaos_norm, chaos_sample, doleans_exp, hermite
from .clark_ocone import (IntegrandEstimate, ReconstructionReport, co_integrand_closed, co_integrand_regress, co_levy,
                          co_reconstruct, replicate_bs)
from .errors import (DomainError, EstimationError, InvalidArgumentError, MrtkitError, UnsupportedConfigurationError,
                     UnsupportedFunctionalError, UnsupportedOrderError)
from .girsanov import density_path, drifted_bm, gco_integrand, gco_levy_reduced, gco_reconstruct
from .malliavin import CylinderFunctional, functional_from_config, malliavin_cylinder, poisson_difference
from .paths import LevySpec, PathBundle, TimeGrid, gen_brownian, gen_compensated_poisson, gen_levy
from .teugels import gram_matrix, orthogonalize, power_jump_paths, prp_residual

__version__ = "0.1.0"
