"""Simulation and estimation toolkit for NV-center spin thermometry."""

__version__ = "0.1.0"

from nvthermo.spin_model import (
    FieldEnvironment,
    NVEnsembleParams,
    SpinState,
    evolve,
    ground_hamiltonian,
    zfs_at_temperature,
)
from nvthermo.pulse_engine import (
    Delay,
    Drive,
    PulseSequence,
    Readout,
    SequenceResult,
    SwapPM,
    echo_fringe,
    parse_sequence,
    run_sequence,
)
from nvthermo.measurement import (
    ESRSpectrumModel,
    PhotonModel,
    esr_rate,
    readout_signal,
    sample_counts,
    simulate_esr_scan,
)
from nvthermo.thermometry import (
    EchoEstimatorConfig,
    EstimationError,
    EstimatorOutput,
    FitError,
    FourPointConfig,
    LinearFitReport,
    SensitivityReport,
    choose_probe_points,
    echo_delta_T,
    fit_dip_centers,
    fit_echo_beats,
    four_point_delta_T,
    linear_fit_accuracy,
    sensitivity,
)
from nvthermo.heat_model import (
    HeatScene,
    HeatSource,
    LaserSpot,
    fit_heat_profile,
    laser_to_heat,
    solution_heating,
    steady_state_dT,
)
