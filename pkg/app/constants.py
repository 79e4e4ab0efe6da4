# app/constants.py

# Evaluation protocol
GAT_LAYERS = 2
CANDIDATE_THRESHOLD = 0.95
MAX_SEED_NEIGHBORS = 982
MAX_EPOCHS = 1500
SPLIT_RATIOS = (0.2, 0.1, 0.7)
N_FOLDS = 5
HIT_KS = (1, 5)

# Soft label screening (entity mode / relation mode)
ENTITY_SIM_THRESHOLD = 0.98
ENTITY_MATCH_THRESHOLD = 10
RELATION_SIM_THRESHOLD = 0.98
RELATION_MATCH_THRESHOLD = 600
PRUNE_LAMBDA = 0.5

# Negative mining / losses
NEGATIVES_K = 50
BETA = 1.0
DECAY_GAMMA = 1.0
MARGIN_GAMMA = 3.0
WEIGHTED_MARGIN = 3.0

# Encoder
LEAKY_RELU_SLOPE = 0.01
ATTENTION_EPSILON = 1.0

# Desk-scale preset overrides
DESK_ENTITY_MATCH_THRESHOLD = 2
DESK_RELATION_MATCH_THRESHOLD = 3
DESK_ENTITY_SIM_THRESHOLD = 0.9
DESK_EPOCHS = 500
DESK_DIM = 32

# CLI exit codes
EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_DATA_ERROR = 3
EXIT_DIVERGENCE = 4

CHECKPOINT_VERSION = 1
