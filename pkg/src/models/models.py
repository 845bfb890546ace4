"""
Network inventory: layer specs for every learnable network and the
factory that materializes their parameters.
"""

from dataclasses import dataclass

import torch

from config import ArchitectureConfig
from neural import ConvSpec, MLPSpec, ParameterStore, SparseConvSpec

# Parameter name prefixes
ENCODER = "encoder"
DIRECTION = "G"
RECONSTRUCTION = "J"
UPDATE_GATE = "Mz"
RESET_GATE = "Mr"
CANDIDATE = "Mt"
DECODER_TRUNK = "R.trunk"
DECODER_SIGMA = "R.sigma"
DECODER_COLOR = "R.color"

DECODER_PREFIX = "R."
FUSION_PREFIXES = (UPDATE_GATE + ".", RESET_GATE + ".", CANDIDATE + ".")
RECONSTRUCTION_PREFIXES = (ENCODER + ".", DIRECTION + ".", RECONSTRUCTION + ".")


@dataclass(frozen=True)
class NetworkSpecs:
    encoder: ConvSpec
    direction: MLPSpec
    reconstruction: SparseConvSpec
    update_gate: SparseConvSpec
    reset_gate: SparseConvSpec
    candidate: SparseConvSpec
    decoder_trunk: MLPSpec
    decoder_sigma: MLPSpec
    decoder_color: MLPSpec


# ============================================================================
# 2D ENCODER
# ============================================================================

def encoder_spec(arch: ArchitectureConfig) -> ConvSpec:
    """
    Strided convolutional image encoder (RGB in, feature map out).
    Args:
        arch: Architecture widths (default channels 16/32/64, strides 2/2/1)
    Returns:
        ConvSpec

    The output map is downsampled by prod(strides) = 4 by default.
    """
    return ConvSpec(
        channels=(3, *arch.encoder_channels),
        strides=tuple(arch.encoder_strides),
        activation="relu",
        output_activation=None,
    )


# ============================================================================
# DIRECTION ENCODER G
# ============================================================================

def direction_spec(arch: ArchitectureConfig) -> MLPSpec:
    """
    MLP mapping a unit viewing direction to a direction feature.
    Args:
        arch: Architecture widths (default 5 layers, 16 channels)
    Returns:
        MLPSpec
    """
    width = arch.direction_channels
    return MLPSpec(sizes=(3, *([width] * arch.direction_layers)), activation="relu")


# ============================================================================
# SPARSE 3D NETWORKS J, M_z, M_r, M_t
# ============================================================================

def reconstruction_spec(arch: ArchitectureConfig) -> SparseConvSpec:
    """
    Sparse conv stack J regressing local volume features from [mean || var].
    Args:
        arch: Architecture widths (default 5 layers, 160 -> 16)
    Returns:
        SparseConvSpec
    """
    hidden = [arch.sparse_hidden_channels] * (arch.reconstruction_layers - 1)
    return SparseConvSpec(channels=(arch.aggregated_channels, *hidden, arch.volume_channels))


def fusion_spec(arch: ArchitectureConfig) -> SparseConvSpec:
    """Shared shape of the gate networks: [global || local] in, one volume-width gate out."""
    hidden = [arch.sparse_hidden_channels] * (arch.fusion_layers - 1)
    return SparseConvSpec(channels=(2 * arch.volume_channels, *hidden, arch.volume_channels))


# ============================================================================
# RADIANCE DECODER R
# ============================================================================

def decoder_specs(arch: ArchitectureConfig) -> tuple[MLPSpec, MLPSpec, MLPSpec]:
    """
    Radiance decoder heads.
    Args:
        arch: Architecture widths
    Returns:
        (trunk, sigma head, color head)

    trunk:  encoded feature (C * (2L + 1)) -> width, relu throughout
    sigma:  width -> 1, softplus
    color:  [trunk || direction] -> color_width -> 3, sigmoid
    """
    trunk = MLPSpec(
        sizes=(arch.encoded_feature_channels, *([arch.decoder_width] * arch.decoder_trunk_layers)),
        activation="relu",
        output_activation="relu",
    )
    sigma = MLPSpec(sizes=(arch.decoder_width, 1), output_activation="softplus")
    color = MLPSpec(
        sizes=(arch.decoder_width + 3, arch.color_width, 3),
        activation="relu",
        output_activation="sigmoid",
    )
    return trunk, sigma, color


def network_specs(arch: ArchitectureConfig) -> NetworkSpecs:
    gate = fusion_spec(arch)
    trunk, sigma, color = decoder_specs(arch)
    return NetworkSpecs(
        encoder=encoder_spec(arch),
        direction=direction_spec(arch),
        reconstruction=reconstruction_spec(arch),
        update_gate=gate,
        reset_gate=gate,
        candidate=gate,
        decoder_trunk=trunk,
        decoder_sigma=sigma,
        decoder_color=color,
    )


def build_parameter_store(
    arch: ArchitectureConfig,
    seed: int = 0,
    dtype: torch.dtype | None = None,
) -> ParameterStore:
    """
    Create every network's parameters from one seed.
    Args:
        arch: Architecture widths
        seed: Initialization seed (recorded on the store)
        dtype: Parameter dtype (default: torch default dtype)
    Returns:
        ParameterStore with encoder, G, J, Mz, Mr, Mt and R.* tensors
    """
    specs = network_specs(arch)
    store = ParameterStore(seed=seed, dtype=dtype)
    store.register(ENCODER, specs.encoder)
    store.register(DIRECTION, specs.direction)
    store.register(RECONSTRUCTION, specs.reconstruction)
    store.register(UPDATE_GATE, specs.update_gate)
    store.register(RESET_GATE, specs.reset_gate)
    store.register(CANDIDATE, specs.candidate)
    store.register(DECODER_TRUNK, specs.decoder_trunk)
    store.register(DECODER_SIGMA, specs.decoder_sigma)
    store.register(DECODER_COLOR, specs.decoder_color)
    return store
