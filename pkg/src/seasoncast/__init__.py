"""Seasonal temperature forecasting: data pipeline, circular-convolution
encoder-decoder networks, training, and forecast verification."""

__version__ = "0.1.0"

from .dataio import (
    NormStats,
    SyntheticConfig,
    compute_norm_stats,
    denormalize,
    ensemble_mean,
    generate_synthetic,
    normalize,
    read_cgt,
    write_cgt,
)
from .evaluation import (
    BinStats,
    EvalReport,
    RankTable,
    RegressionStats,
    binned_abs_error,
    emit_heatmap,
    evaluate,
    persistence_forecast,
    rank_cases,
    regression_stats,
)
from .grid import (
    Climatology,
    GridSeries,
    MonthStamp,
    RegionMask,
    anomaly_series,
    area_weighted_mae,
    mae,
    masked_mae,
    month_index,
    monthly_climatology,
    row_latitudes,
)
from .model import ModelConfig, build_model, load_checkpoint, save_checkpoint
from .stacking import (
    Sample,
    SampleSet,
    TemporalCase,
    assemble_sample,
    build_samples,
    case_by_id,
    channel_count,
    enumerate_cases,
    offsets,
    valid_targets,
)
from .training import TrainConfig, TrainHistory, finetune, predict, train
