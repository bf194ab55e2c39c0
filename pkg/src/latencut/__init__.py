"""Latency-adjustable transformer inference with attention-guided word-vector elimination."""

from .acc import AccProfile, acc_of_layer, fit_quadratic, profile_model, score_vector
from .attention import (
    EliminationOutcome,
    attention_context,
    attention_probs,
    proposed_attention_forward,
    sort_eliminate,
)
from .cost import (
    CostReport,
    analytic_flops,
    closed_form_pw,
    estimate_speedup,
    instrumented_count,
    processed_words,
)
from .model_io import Model, ModelConfig, WeightStore, generate_random_model, load_model, save_model
from .runner import RunReport, forward_baseline, forward_pruned, measure_latency, measure_speedup
from .schedule import (
    PruneSchedule,
    RetentionPlan,
    elimination_profile,
    make_schedule,
    retention_plan,
)

__version__ = "0.1.0"
