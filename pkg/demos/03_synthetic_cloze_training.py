"""Train the full unimodal model on easy synthetic cloze data.

Generates a small corpus whose wrong candidates share no tokens with any
recipe step, trains with objective 1 under the two-phase LR schedule, and
compares against the question-similarity baseline (which is blind to the
recipe and stuck near chance by construction).

Runs in about a minute.
"""

from stepalign import (
    GeneratorConfig,
    ModelConfig,
    ModelParams,
    ObjectiveConfig,
    SgdConfig,
    evaluate,
    generate_synthetic,
    hasty_baseline,
    train,
)

train_set = generate_synthetic(
    GeneratorConfig(num_examples=200, num_steps_range=(4, 8), seed=1, split="train")
)
test_set = generate_synthetic(
    GeneratorConfig(num_examples=100, num_steps_range=(4, 8), seed=2, split="test")
)

params = ModelParams(ModelConfig(vocab_size=train_set.vocab_size), seed=0)
print("untrained accuracy:", f"{evaluate(params, test_set).accuracy:.3f}")
print("hasty baseline accuracy:", f"{hasty_baseline(test_set).accuracy:.3f}")

history, _ = train(
    params,
    train_set,
    ObjectiveConfig(objective_kind="obj1"),
    SgdConfig(lr_first_half=0.4, lr_second_half=0.08, momentum=0.9, epochs=10),
    pooling_mode="constrained",
)
for h in history[:3] + history[-2:]:
    print(f"  epoch {h.epoch:2d}: mean loss {h.mean_loss:.5f} (lr {h.lr})")

report = evaluate(params, test_set)
print(f"trained accuracy: {report.accuracy:.3f}   p@2: {report.p_at_2:.3f}")

record = report.records[0]
print("\nfirst test example:", record.id)
print("  selected scores m:", [round(v, 3) for v in record.m])
print("  ranking:", record.ranking, "predicted:", record.predicted, "gold:", record.gold)
