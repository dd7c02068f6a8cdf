"""Self-distilled time / time-frequency ECG representations with gate fusion."""
from .augment import AugmentSpec
from .config import RunConfig
from .data import EcgRecord, gen_synthetic, make_folds, read_record, write_record
from .encoders import EncoderConfig
from .errors import EcgSslError
from .estimators import GateFusionClassifier, SelfKDPretrainer, SpectrogramTransformer
from .grid import run_grid
from .metrics import RewardMatrix, evaluate
from .selfkd import SelfKdConfig
from .stft import StftConfig

__version__ = "0.1.0"

__all__ = [
    "AugmentSpec", "EcgRecord", "EcgSslError", "EncoderConfig", "GateFusionClassifier",
    "RewardMatrix", "RunConfig", "SelfKDPretrainer", "SelfKdConfig", "SpectrogramTransformer",
    "StftConfig", "evaluate", "gen_synthetic", "make_folds", "read_record", "run_grid",
    "write_record",
]
