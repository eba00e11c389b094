"""Vehicle-reflection (NLoS) visible light communication toolkit.

Channel models for reflector-to-receiver path loss and impulse-response
tails, VNA sweep post-processing, least-squares model fitting, and a
DCO-OFDM Monte Carlo link simulator.
"""

__version__ = "0.1.0"

from .channel_models import (
    BLACK_CAR,
    ORANGE_CAR,
    SURFACE_PRESETS,
    WHITE_CAR,
    LambertianScene,
    PathLossModel,
    SurfaceParams,
    WdgfParams,
    channel_gain_amplitude,
    concentrator_gain,
    db_to_amplitude,
    lambertian_gain,
    lambertian_gain_total,
    path_loss_db,
    wdgf_eval,
    wdgf_fwhm,
)
from .measurement_pipeline import (
    AveragedSweep,
    Cir,
    ParseError,
    SweepMeta,
    SweepRecord,
    average_realizations,
    cir_from_sweep,
    fwhm,
    parse_sweep_csv,
    parse_touchstone,
    path_loss_from_sweep,
    reflection_coefficient,
)
from .model_fitting import FitReport, PathLossDataset, fit_path_loss, fit_wdgf, rmse
from .dco_ofdm import (
    ChannelSpec,
    Frame,
    OfdmConfig,
    apply_channel,
    build_frame,
    known_channel_estimate,
    qam_ber_awgn,
    qam_demap,
    qam_map,
    receive,
    transmit,
)
from .simulation_harness import (
    BerCurve,
    BerPoint,
    ScenarioConfig,
    TargetNotBracketedError,
    achievable_distance,
    calibrate_los_ref_gain,
    gain_table_from_measurements,
    pl_ref_for_surface,
    run_ber_vs_distance,
    scenario_preset,
)
