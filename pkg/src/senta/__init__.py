"""Two-stage sentiment adjustment for aspect-based sentiment analysis.

Stage one trains a plain (confounding) classifier; stage two decomposes its
class-level features into a bank of per-class means and trains an
interventional model over representations augmented with the
probability-weighted mixture of those means.  The package also ships an
executable backdoor-criterion checker and a robustness evaluation harness
for original-versus-perturbed test splits.
"""

from .adjustment import (
    AdjustedRepresentation,
    FeatureBank,
    adjust,
    build_feature_bank,
    compute_alpha,
    distill_loss,
    predict,
    train_distill,
    train_senta,
)
from .bundles import ModelBundle
from .causal import (
    BackdoorQuery,
    BackdoorResult,
    CausalDag,
    ancestors,
    build_dag,
    descendants,
    satisfies_backdoor,
)
from .confounder import (
    ConfounderOutput,
    ModelConfig,
    confounder_infer,
    train_confounder,
)
from .corpus import (
    Instance,
    POLARITIES,
    SplitStats,
    SynthConfig,
    generate_synthetic,
    parse_arts,
    parse_semeval_xml,
    select_revnon,
    split_stats,
)
from .encoder import EncodedInput, EncoderConfig, EncoderOutput, encode_qa, run_encoder
from .evalharness import (
    EvalReport,
    PredictionRecord,
    case_table,
    evaluate,
    evaluate_revnon,
    render_report,
)
from .pipeline import RunConfig, run_pipeline

__version__ = "0.1.0"
