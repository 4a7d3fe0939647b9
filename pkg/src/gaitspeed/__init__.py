"""Walking/running speed from wrist-worn accelerometer and gyroscope windows."""

from .evaluation import EvalReport, SplitSpec, leave_one_participant_out, mae, mape, r2, split_70_15_15
from .imu import CalibrationParams, ImuSample, Session, apply_calibration, parse_session, trim_session
from .spectral import fft_magnitude, speed_from_cadence, step_frequency
from .speednet import ArchSpec, SpeedNetParams, TrainConfig, build_model, forward, load_model, save_model, train
from .windowing import WindowedDataset, segment, segment_dataset

__version__ = "0.1.0"
