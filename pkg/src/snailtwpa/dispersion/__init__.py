"""Linear dispersion of periodically loaded SNAIL ladders."""

from .network import (
    OMEGA_MAX,
    Band,
    BlochMode,
    CellSpec,
    ChainSpec,
    DispersionError,
    DispersionResult,
    SupercellSpec,
    abcd_to_s,
    band_gaps,
    band_index,
    bloch,
    bloch_gamma,
    bloch_mode,
    cell_matrix,
    chain_matrix,
    chain_sparams,
    cutoff_frequency,
    find_bands,
    half_trace,
    matrix_det,
    scaled_matrix_power,
    supercell_matrix,
)
from .device import (
    CalibrationError,
    CalibrationResult,
    CalibrationTargets,
    Device,
    calibrate,
    first_gap_lower_edge,
    s21_flux_map,
)
