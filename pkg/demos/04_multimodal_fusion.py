"""When the answer is only visible in the images.

image_only data makes every step's text uninformative filler; the step
identity lives solely in its image feature vector. A text-only model is
stuck near chance, while either fusion variant (image-LSTM concat, or the
bidirectional cross-attention exchange) can align candidates with steps
through the image channel.

Runs in a few minutes.
"""

from stepalign import (
    GeneratorConfig,
    ModelConfig,
    ModelParams,
    ObjectiveConfig,
    SgdConfig,
    evaluate,
    generate_synthetic,
    train,
)

FEATURE_DIM = 16
DIMS = 16

gen = dict(
    num_steps_range=(4, 6),
    tokens_per_step=4,
    distractor_mode="image_only",
    with_images=True,
    feature_dim=FEATURE_DIM,
)
train_set = generate_synthetic(GeneratorConfig(num_examples=200, seed=1, split="train", **gen))
test_set = generate_synthetic(GeneratorConfig(num_examples=100, seed=2, split="test", **gen))

for fusion in ("none", "concat", "lxmert"):
    config = ModelConfig(
        vocab_size=train_set.vocab_size,
        embedding_dim=DIMS,
        item_hidden_dim=DIMS,
        step_hidden_dim=DIMS,
        question_hidden_dim=DIMS,
        mlp_hidden_dims=(DIMS,),
        fusion=fusion,
        feature_dim=FEATURE_DIM if fusion != "none" else None,
        image_hidden_dim=DIMS,
        attention_dim=DIMS,
    )
    params = ModelParams(config, seed=3)
    train(
        params,
        train_set,
        ObjectiveConfig(objective_kind="obj1"),
        SgdConfig(epochs=15),
        pooling_mode="constrained",
    )
    report = evaluate(params, test_set)
    print(f"{fusion:7s}: accuracy {report.accuracy:.3f}   p@2 {report.p_at_2:.3f}")
