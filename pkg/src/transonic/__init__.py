"""Numerical solver for Keldysh-type degenerate mixed PDEs and accelerating
transonic flows of the steady Euler-Poisson system in a flat nozzle."""

from .params import PhysicalParams
from .background import (BackgroundState, eval_H, hamiltonian, eval_F,
                         find_umax, integrate_background, kappa_functions,
                         nozzle_length)
from .coefficients import (KeldyshField, check_kz_condition,
                           extend_coefficients, kz_coefficient,
                           mollify_coefficients)
from .cutoffs import CutoffFamily, admissible_r
from .galerkin import (GalerkinOdeSystem, GalerkinSolution, SpectralBasis,
                       continuation_solve, project_coefficients,
                       solve_viscous_galerkin, weak_form_residual)
from .linearized import (EnergyLedger, LinearizedCoefficients, SonicInterface,
                         alpha_limit_value, build_coefficients,
                         energy_decomposition, large_momentum_margin_bound,
                         multiplier_ledger, small_momentum_margin_bound,
                         solve_coupled, sonic_interface)
from .transport import (LagrangianMap, TransportField, build_stream_function,
                        lagrangian_map, transport_entropy,
                        transport_residual)
from .nonlinear import (BoundaryData, SineBasis, SolutionBundle,
                        assemble_physical, coefficient_interface,
                        ep_residual, fixed_point_solve, helmholtz_decompose,
                        mach_and_interface, mach_number, make_boundary_data,
                        solve_vorticity_poisson)

__version__ = "0.1.0"
