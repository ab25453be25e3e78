"""Conversational emotion recognition toolkit.

Core pieces: label domains and cross-corpus unification (`labels`),
corpus parsing and history windows (`corpus`), prompt assembly
(`prompts`), pluggable chat-completion backends (`backend`), the
self-negotiation decision loop and corpus driver (`negotiation`), its
Monte-Carlo/closed-form verification harness (`consensus`), evaluation
metrics (`metrics`), and mixing experiments (`mixing`).
"""

from .backend import (
    BackendError,
    BackendRequest,
    BackendResponse,
    HttpBackend,
    LabelExtraction,
    Message,
    MockBackend,
    extract_label,
)
from .consensus import SimParams, SimReport, SimStats, closed_form_consensus, simulate_consensus
from .corpus import (
    Conversation,
    Corpus,
    EmotionalDeduction,
    HistoryWindow,
    Utterance,
    history_window,
    load_corpus,
    parse_corpus,
    save_corpus,
    serialize_corpus,
)
from .errors import SentixrlError
from .labels import (
    LabelDomain,
    MappingConfig,
    MappingReport,
    SentimentMap,
    build_domain,
    coarsen_to_sentiment,
    default_mapping_config,
    load_mapping_config,
    map_label,
    unified_domain,
    validate_mapping,
)
from .metrics import (
    AbstentionMode,
    ConfusionMatrix,
    FocalParams,
    MetricsReport,
    class_weights,
    compute_metrics,
    confusion,
    focal_loss,
    mean_focal_loss,
)
from .mixing import CategoryHistogram, MixSpec, Strategy, equal_mix, histogram, random_mix
from .negotiation import (
    Judgment,
    NegotiationConfig,
    NegotiationTrace,
    Outcome,
    Policy,
    PredictionSet,
    RoundRecord,
    Verdict,
    evaluate_corpus,
    negotiate,
)
from .prompts import (
    DEFAULT_INSTRUCTION,
    Instruction,
    PromptBundle,
    PromptTemplate,
    TemplateSet,
    render_discriminator_prompt,
    render_generator_prompt,
    request_deduction,
)

__version__ = "0.1.0"
