"""Cross-domain cognitive diagnosis with decoupled student states, cold-start
adaptation via simulated practice logs, evaluation, and question
recommendation — verifiable end to end on a built-in synthetic benchmark."""

from .adapt import (
    AdaptResult,
    SimulatedLog,
    SimulatedLogSet,
    TargetStates,
    diagnose,
    finetune_cold_start,
    finetune_early_birds,
    init_target_states,
    peer_set,
    pick_reference_domain,
    run_adaptation,
    simulate_logs,
)
from .config import RunConfig, config_from_dict, load_config
from .data import (
    DomainDataset,
    PracticeLog,
    Question,
    TargetSplit,
    load_corpus,
    make_target_split,
    q_mask,
    write_corpus,
)
from .embed import EmbeddingTable, build_concept_vecs, build_table, encode_question_text, init_student_vecs
from .errors import DataValidationError, NumericError, UsageError
from .metrics import EvalReport, acc, auc, auc_bruteforce, oracle_mode, random_baseline, rmse, score_all
from .models import (
    DiagnosticModel,
    Prediction,
    grad,
    init_model,
    loss,
    predict,
    predict_from_mastery,
    project_monotone,
)
from .pretrain import (
    DecoupleHeads,
    PretrainedBundle,
    decouple,
    init_heads,
    loss_shared,
    loss_specific,
    pretrain,
)
from .recommend import Recommendation, RecommendationList, recommend
from .synth import GroundTruth, SynthConfig, export_truth, generate, load_truth, true_prob

__version__ = "0.1.0"
