"""Random walks on crystal lattices: drift, harmonic realization, Albanese
metric, exponential change of measure and limit-theorem checks."""

from .analysis import AnalysisReport, analyze
from .girsanov import ChangedKernel, change_kernel, free_energy_context, interpolation_family, minimize_free_energy
from .harmonic import AlbaneseMetric, OneForm, Realization, albanese, modified_harmonic_realization, to_orthonormal_coords
from .lattice import (
    CrystalLattice, LatticeError, LatticeState, NumericalError, TransitionKernel, build_lattice, builtin,
    lift_step, load_lattice,
)
from .stationary import cycle_basis, homological_direction, is_symmetric, stationary_measure

__version__ = "0.1.0"
