"""Spectral Stokes/Navier-Stokes toolkit for 2D channels with mixed
Dirichlet/do-nothing boundary conditions, plus the corner pencil analysis."""

from .mesh import ChannelMesh, build_channel_mesh, refine
from .fem import DiscreteSpaces, assemble, inner_L2, inner_V
from .stokes import (EigenBasis, SteadySolution, compute_eigenbasis,
                     solve_steady_stokes, norm_D)
from .evolution import (DataPair, SpectralField, TimeGrid, make_time_grid,
                        expand_data, solve_mode_ode, solve_stokes_evolution,
                        apply_S, verify_energy_inequalities, norm_X, norm_Y)
from .navier_stokes import (NewtonOptions, ContinuationReport, trilinear_b,
                            convection_data, apply_N, apply_B_u, apply_G_u,
                            solve_linearized, solve_navier_stokes,
                            perturbation_experiment)
from .corner import (reduced_characteristic, real_imag_system, general_solution,
                     pencil_matrix, count_roots, find_root, singular_basis,
                     fit_singular_expansion)

__version__ = "0.1.0"
