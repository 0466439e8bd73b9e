"""Best-of-N test-time scaling harness."""

__version__ = "0.1.0"

from .answers import CanonicalAnswer, canonicalize, extract_answer
from .core import (
    BackendError,
    Candidate,
    HarnessError,
    ParseError,
    Problem,
    RunConfig,
    ValidationError,
    load_problems,
    read_candidates,
    validate_config,
    write_candidates,
)
from .aggregation import AccEstimate, VotingResult, acc_maj_at, best_of_n_by_score, majority_vote
from .generation import (
    EarlyStopPolicy,
    HttpBackend,
    MockBackend,
    RoundPolicy,
    generate_multi_round,
    generate_pool,
    generate_with_early_stop,
)
from .metrics import (
    AccuracyCurve,
    DiversityReport,
    ScalingReport,
    answer_entropy,
    build_report,
    distinct_n,
    gain_per_doubling,
    improvement,
    min_n_to_threshold,
    self_bleu,
)
from .curation import CuratedRecord, CurationConfig, apply_diversity_prompt, curate, mix, split, truncate_prefix
from .scoring import ConstantScorer, ExactMatchScorer, HttpScorer, score_pool
from .simulate import AnswerDistribution, exact_maj_accuracy, mc_maj_accuracy, scaling_curve

__all__ = [name for name in dir() if not name.startswith("_")]
