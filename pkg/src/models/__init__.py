from .models import (
    CANDIDATE,
    DECODER_COLOR,
    DECODER_PREFIX,
    DECODER_SIGMA,
    DECODER_TRUNK,
    DIRECTION,
    ENCODER,
    FUSION_PREFIXES,
    RECONSTRUCTION,
    RECONSTRUCTION_PREFIXES,
    RESET_GATE,
    UPDATE_GATE,
    NetworkSpecs,
    build_parameter_store,
    decoder_specs,
    direction_spec,
    encoder_spec,
    fusion_spec,
    network_specs,
    reconstruction_spec,
)

__all__ = [
    "CANDIDATE",
    "DECODER_COLOR",
    "DECODER_PREFIX",
    "DECODER_SIGMA",
    "DECODER_TRUNK",
    "DIRECTION",
    "ENCODER",
    "FUSION_PREFIXES",
    "RECONSTRUCTION",
    "RECONSTRUCTION_PREFIXES",
    "RESET_GATE",
    "UPDATE_GATE",
    "NetworkSpecs",
    "build_parameter_store",
    "decoder_specs",
    "direction_spec",
    "encoder_spec",
    "fusion_spec",
    "network_specs",
    "reconstruction_spec",
]
