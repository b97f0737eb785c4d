"""binprop: binary error propagation for fully binary networks."""

__version__ = "0.1.0"
__description__ = "Bit-packed binary error propagation training with a CLI and MCP tools"

from .bitcore import BitVector, GateVector, PackedBitMatrix, dot_pm1, matvec_pm1, gated_matvec_transpose
from .frames import PrototypeFrame, search_frame, load_frame, save_frame
from .bep import Layer, Network, forward, train_epoch
from .beptt import RnnModel, rnn_forward, rnn_train_epoch
from .encode import Encoder, ThermometerCodec, fit_thermometer, binarize_median
from .data import Dataset, EncodedDataset, gen_random_prototypes, gen_random_sequences
from .checkpoint import load_checkpoint, save_checkpoint
from .runner import train_run, evaluate, run_sweep
from .errors import BinpropError, ConfigError, DataError, DimensionError, InvariantError
from .types import Hyperparams, RunConfig, FrameSearchConfig, PrototypeTaskConfig, SequenceTaskConfig

__all__ = [
    # Packed kernels
    "BitVector",
    "GateVector",
    "PackedBitMatrix",
    "dot_pm1",
    "matvec_pm1",
    "gated_matvec_transpose",

    # Classifier frame
    "PrototypeFrame",
    "search_frame",
    "load_frame",
    "save_frame",

    # Engines
    "Layer",
    "Network",
    "forward",
    "train_epoch",
    "RnnModel",
    "rnn_forward",
    "rnn_train_epoch",

    # Encoding and data
    "Encoder",
    "ThermometerCodec",
    "fit_thermometer",
    "binarize_median",
    "Dataset",
    "EncodedDataset",
    "gen_random_prototypes",
    "gen_random_sequences",

    # Runs
    "load_checkpoint",
    "save_checkpoint",
    "train_run",
    "evaluate",
    "run_sweep",

    # Errors and types
    "BinpropError",
    "ConfigError",
    "DataError",
    "DimensionError",
    "InvariantError",
    "Hyperparams",
    "RunConfig",
    "FrameSearchConfig",
    "PrototypeTaskConfig",
    "SequenceTaskConfig",
]
