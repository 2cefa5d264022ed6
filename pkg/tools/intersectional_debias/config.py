from __future__ import annotations

# Singular values at or below this fraction of the largest one count as zero.
RANK_TOL = 1e-10

# Tolerances for unit vectors and symmetric sums.
UNIT_NORM_TOL = 1e-8
SYMMETRY_TOL = 1e-6

# Gram-Schmidt residuals below this norm mean the bias subspace is exhausted.
RESIDUAL_TOL = 1e-8

# Group settings and INLP variants.
GROUP_KINDS = ("INDEP", "INTER", "GERRY")
INLP_VARIANTS = ("naive", "principal")
WILDCARD = "*"

# Probe defaults (plain mini-batch gradient descent on the logistic loss).
PROBE_LEARNING_RATE = 0.1
PROBE_EPOCHS = 100
PROBE_L2 = 1e-4
PROBE_BATCH_SIZE = 64
PROBE_LOSS_SLACK = 1e-6  # allowed per-epoch rise of the full-data loss
PROBE_MAX_HALVINGS = 30

# INLP defaults.
LEAKAGE_MARGIN = 0.01

# Constrained trainer defaults.
MODEL_KINDS = ("linear", "mlp")
GAMMA_MODES = ("uniform", "inverse_positive_rate")
PRIMAL_LEARNING_RATE = 1e-3
DUAL_LEARNING_RATE = 0.05
TRAIN_BATCH_SIZE = 64
MLP_HIDDEN_DIM = 300
MAX_OUTER_ITERATIONS = 500
MAX_RETAINED_ITERATES = 50
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

# Evaluation defaults.
MIN_POSITIVES = 5
DEFAULT_TRADEOFFS = (0.05, 0.10)

# Data defaults.
SPLIT_NAMES = ("train", "dev", "test")
DEFAULT_SPLIT_FRACTIONS = (0.7, 0.15, 0.15)
STRATIFY_MODES = ("label", "label_and_group")
LABEL_RATE_CLIP = (0.02, 0.98)

# File names inside dataset and run directories.
FEATURES_FILE = "features.csv"
METADATA_FILE = "metadata.jsonl"
SCHEMA_FILE = "schema.json"
SPLITS_FILE = "splits.json"
POINTS_FILE = "points.jsonl"
CELL_MANIFEST_FILE = "cell.json"
RUN_MANIFEST_FILE = "run.json"
ERROR_FILE = "error.json"
LOG_FILE = "run.log"
PROJECTOR_FILE = "projector.csv"
DIRECTIONS_FILE = "directions.csv"
AUDIT_LOG_FILE = "audit_log.jsonl"
STATE_FILE = "state.json"
ITERATE_LOG_FILE = "iterate_log.jsonl"
ITERATES_DIR = "iterates"
MAIN_PROBE_FILE = "main_probe.json"
LOG_FORMAT = "%(asctime)s | %(levelname)s | %(name)s | %(message)s"

# Experiment methods and their report labels.
METHODS = ("biased-baseline", "inlp", "constrained")
METHOD_PREFIX = {"inlp": "INLP", "constrained": "CON"}
BIASED_LABEL = "Biased model"
