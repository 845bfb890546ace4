"""
Presets - Centralized default values for networks, training and rendering.
"""

# =============================================================================
# NETWORK ARCHITECTURE
# =============================================================================

# 2D encoder: three 3x3 conv layers, overall downsampling factor 4
ENCODER_CHANNELS = (16, 32, 64)
ENCODER_STRIDES = (2, 2, 1)

# Direction encoder G: 5 layer MLP with 16-channel output
DIRECTION_CHANNELS = 16
DIRECTION_LAYERS = 5

# Volume features (local and global) carry 16 channels
VOLUME_CHANNELS = 16

# Reconstruction network J: 5 submanifold sparse conv layers
RECONSTRUCTION_LAYERS = 5

# Fusion networks M_z, M_r, M_t: 3 submanifold sparse conv layers each
FUSION_LAYERS = 3

# Hidden width of J and M_*
SPARSE_HIDDEN_CHANNELS = 16

# Decoder R
POSITIONAL_FREQUENCIES = 5
DECODER_WIDTH = 64
DECODER_TRUNK_LAYERS = 2
COLOR_WIDTH = 32


# =============================================================================
# TRAINING
# =============================================================================

LEARNING_RATE = 0.003
RAYS_PER_BATCH = 1024
PRUNE_GAMMA = 0.6
PRUNE_SAMPLES_PER_AXIS = 2
SUBDIVIDE_STRIDE = 10_000
NEIGHBOR_COUNT = 3
NEIGHBOR_ANGLE_WEIGHT = 0.5  # meters per radian
FUSION_WINDOW = 4
PRUNE_WARMUP_ITERATIONS = 1_000


# =============================================================================
# GEOMETRY AND RENDERING
# =============================================================================

VOXEL_SIZE = 0.1
MAX_DEPTH = 3.0
SAMPLES_PER_VOXEL = 4
RENDER_CHUNK = 4096
DEPTH_EPSILON = 1e-6
