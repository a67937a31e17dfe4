"""CAN sender authentication via per-ECU power side-channel monitoring.

Simulates a multi-ECU CAN bus, extracts spectral features from per-ECU
power traces around each decoded transmission, trains one binary linear
SVM per source address, and classifies traffic as authentic or as an
impersonation (compromised ECU / added module) attack.
"""

from .authenticate import (
    Decision,
    ModelBundle,
    SaEntry,
    Verdict,
    attribute,
    authenticate_all,
    detect_attack,
    softmax,
)
from .bus import (
    AttackKind,
    AttackSpec,
    BusConfig,
    EcuSpec,
    GroundTruthEntry,
    GroundTruthLog,
    MessageSchedule,
    PowerProfile,
    ProgramActivity,
    Scenario,
    lab_scenario,
    simulate,
    synth_power,
    synth_voltage,
    truck_scenario,
)
from .config import RunConfig, parse_config, parse_config_text
from .evaluate import (
    ConfusionMatrix,
    FactorCell,
    FactorGrid,
    MetricReport,
    SeparabilityReport,
    confusion,
    factor_sweep,
    grid_cells,
    metrics,
    separability,
    student_t_sf,
)
from .features import (
    FeatureDataset,
    NormStats,
    PcaBasis,
    Tau,
    TukeyParams,
    build_datasets,
    estimate_norm_stats,
    estimate_tau,
    extract_feature,
    fit_pca,
    spectrum,
    tukey_window,
)
from .frames import (
    CanFrame,
    DecodedTransmission,
    DerivationRule,
    FrameFormat,
    SourceAddressMap,
    arbitrate,
    compute_crc15,
    decode_transmissions,
    serialize_frame,
    stuff_bits,
    unstuff_bits,
)
from .svm import (
    BootstrapSummary,
    LearningCurve,
    SvmModel,
    TrainConfig,
    bootstrap_accuracy,
    predict_proba,
    train,
)
from .trace import SampledTrace
from .workflow import PipelineConfig, TrainResult, build_bundle

__version__ = "0.1.0"
