"""Monte Carlo comparison of random multi-head attention with its infinite-width law."""

__version__ = "0.1.0"

from .attention import (  # noqa: E402
    AttentionConfig,
    ScalingRule,
    forward,
    sample_inputs,
    sample_output_batch,
    sample_score_batch,
    softmax_row,
)
from .limitlaw import (  # noqa: E402
    LimitLawSpec,
    build_limit_spec,
    clip_second_moment,
    fourth_moment_isserlis,
    nonlin_second_moment,
    sample_limit,
)
from .stats import SampleSet, compare, kde, kl_divergence, ks_two_sample, moments  # noqa: E402

__all__ = [
    "AttentionConfig",
    "LimitLawSpec",
    "SampleSet",
    "ScalingRule",
    "build_limit_spec",
    "clip_second_moment",
    "compare",
    "forward",
    "fourth_moment_isserlis",
    "kde",
    "kl_divergence",
    "ks_two_sample",
    "moments",
    "nonlin_second_moment",
    "sample_inputs",
    "sample_limit",
    "sample_output_batch",
    "sample_score_batch",
    "softmax_row",
]
