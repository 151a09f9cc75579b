"""Group-testing misbehavior detection."""

from .decode import (
    BACKEND,
    ChannelModel,
    LlrScores,
    accumulate_llr,
    decode_marginals,
    posterior_from_llr,
    posterior_marginals,
    test_groups,
)
from .matrix import build_assignment, isolated_clients, privacy_ok, validate

__all__ = [
    "BACKEND",
    "ChannelModel",
    "LlrScores",
    "accumulate_llr",
    "build_assignment",
    "decode_marginals",
    "isolated_clients",
    "posterior_from_llr",
    "posterior_marginals",
    "privacy_ok",
    "test_groups",
    "validate",
]
