"""Configuration constants for binprop."""

import os

# Packed storage
WORD_BITS = 64

# Checkpoint and frame file formats
CHECKPOINT_MAGIC = b"BEPC"
CHECKPOINT_VERSION = 1
FRAME_MAGIC = b"BEPF"
FRAME_VERSION = 1

# Training defaults
DEFAULT_MARGIN = 0.5            # r
DEFAULT_GATE_THRESHOLD = 0.05   # nu
DEFAULT_REINFORCEMENT = 0.5     # p_r
DEFAULT_GROUP_SIZE = 15         # gamma_0
DEFAULT_EPOCHS = 50
DEFAULT_WEIGHT_BITS = 16        # Int16 hidden weights
DEFAULT_PATIENCE = 3
DEFAULT_VALIDATION_FRACTION = 0.1

# Hidden weights start as odd integers in [-INIT_MAGNITUDE, INIT_MAGNITUDE]
INIT_MAGNITUDE = 7

# Prototype frame search
DEFAULT_FRAME_ALPHA = 1.0
FRAME_ITERATIONS_PER_ENTRY = 200

# Random Prototypes task
DEFAULT_PROTOTYPE_TRAIN = 20000
DEFAULT_PROTOTYPE_TEST = 3000
DEFAULT_PROTOTYPE_DIM = 1000
DEFAULT_PROTOTYPE_FLIP = 0.46
DEFAULT_CLASSES = 10

# Environment
DEFAULT_WORKERS = int(os.getenv("BINPROP_WORKERS", "1"))
LOG_LEVEL = os.getenv("BINPROP_LOG_LEVEL", "INFO")
DEFAULT_OUTPUT_DIR = os.getenv("BINPROP_OUTPUT_DIR", "runs")

# Sweepable hyperparameters (CLI axis names)
SWEEP_AXES = [
    "nu",
    "r",
    "p_r",
    "bits",         # thermometer bits
    "gamma0",
    "window",       # window length
    "horizon",      # backward horizon
]
