"""Latent alignment between candidate answers and procedure steps for
recipe-style textual cloze: similarity matrices, constrained max-pooling,
hinge objectives, cross-modal fusion, and a desk-scale training harness.
"""

from .autodiff import Graph, ShapeError, Tensor, grad_check, tensor_op
from .alignment import (
    AlignmentResult,
    SimilarityMatrix,
    build_similarity_matrix,
    constrained_max_pool,
    cosine,
    greedy_trace_oracle,
    optimal_assignment,
    row_max_pool,
)
from .data import (
    ClozeExample,
    Dataset,
    DatasetError,
    GeneratorConfig,
    Recipe,
    generate_synthetic,
    load_dataset,
    save_dataset,
    validate_example,
)
from .encoders import (
    EmbeddingTable,
    LstmParams,
    MlpParams,
    embed_tokens,
    encode_instruction,
    encode_positioned_text,
    encode_question,
    lstm_encode,
    mlp_project,
    one_hot_position,
)
from .fusion import (
    CrossAttnParams,
    cross_attention_block,
    encode_step_concat,
    encode_step_lxmert,
    softmax_rows,
)
from .model import ModelConfig, ModelParams, model_grad_check, similarity_for_example
from .objectives import ObjectiveConfig, loss_obj1, loss_obj2, predict, sample_wrong_candidate
from .training import (
    EvalReport,
    SgdConfig,
    TrainState,
    evaluate,
    hasty_baseline,
    load_checkpoint,
    lr_at,
    save_checkpoint,
    sgd_step,
    train,
)

__version__ = "0.1.0"
