"""Dataset schema, JSON loading/saving, validation, and synthetic generation.

The interchange format is a single JSON document::

    {"split": str, "vocab_size": int, "feature_dim": int|null,
     "examples": [{"id": str,
                   "steps": [{"tokens": [int], "image_features": [[float]]|null}],
                   "question_items": [{"tokens": [int], "position": int}],
                   "placeholder_position": int,
                   "candidates": [[int]],
                   "answer": int}]}

Tokens are integer ids (tokenization happens upstream); image features are
inline arrays of reals. The four question slots 0..3 correspond to the
first four recipe steps in order: the three question items describe their
slot's step and the placeholder slot's step is what the gold candidate
describes.

The synthetic generator gives each step a disjoint "signature" token block.
Question items and the gold candidate are subsets of their step's
signature; wrong candidates depend on distractor_mode:

* easy: tokens from a reserved pool that matches no step anywhere;
* adversarial: subsets of steps already covered by question items, so only
  the disjointness constraint separates them from the gold answer;
* image_only: step text is uninformative filler and candidates are
  signature subsets of identities that may or may not be in the recipe;
  only the per-step image features (fixed-projection sums of signature
  tokens plus noise) identify the gold candidate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

MIN_STEPS = 4
NUM_CANDIDATES = 4
NUM_QUESTION_ITEMS = 3
NUM_POSITIONS = 4

DISTRACTOR_MODES = ("easy", "adversarial", "image_only")


class DatasetError(ValueError):
    """Schema or invariant violation, with example id and field path."""


@dataclass(frozen=True)
class Step:
    tokens: tuple
    image_features: tuple | None = None  # tuple of per-image float tuples, or None


@dataclass(frozen=True)
class Recipe:
    id: str
    steps: tuple


@dataclass(frozen=True)
class QuestionItem:
    tokens: tuple
    position: int


@dataclass(frozen=True)
class ClozeExample:
    recipe: Recipe
    question_items: tuple
    placeholder_position: int
    candidates: tuple
    answer: int

    @property
    def id(self) -> str:
        return self.recipe.id


@dataclass(frozen=True)
class Dataset:
    split: str
    vocab_size: int
    feature_dim: int | None
    examples: tuple


def validate_example(ex: ClozeExample, vocab_size: int, feature_dim=None) -> list:
    """All invariant violations for one example; empty list means valid."""
    v = []
    steps = ex.recipe.steps
    if len(steps) < MIN_STEPS:
        v.append(f"steps: expected at least {MIN_STEPS}, got {len(steps)}")
    for si, step in enumerate(steps):
        if len(step.tokens) < 1:
            v.append(f"steps[{si}].tokens: expected at least 1 token")
        for t in step.tokens:
            if not 0 <= t < vocab_size:
                v.append(f"steps[{si}].tokens: id {t} out of range [0, {vocab_size})")
        if step.image_features is not None and feature_dim is not None:
            for fi, feat in enumerate(step.image_features):
                if len(feat) != feature_dim:
                    v.append(
                        f"steps[{si}].image_features[{fi}]: dim {len(feat)} != feature_dim {feature_dim}"
                    )
    if len(ex.question_items) != NUM_QUESTION_ITEMS:
        v.append(f"question_items: expected {NUM_QUESTION_ITEMS}, got {len(ex.question_items)}")
    positions = sorted([item.position for item in ex.question_items] + [ex.placeholder_position])
    if positions != list(range(NUM_POSITIONS)):
        v.append(
            f"positions: question positions plus placeholder must be a permutation of "
            f"0..{NUM_POSITIONS - 1}, got {positions}"
        )
    for qi, item in enumerate(ex.question_items):
        if len(item.tokens) < 1:
            v.append(f"question_items[{qi}].tokens: expected at least 1 token")
        for t in item.tokens:
            if not 0 <= t < vocab_size:
                v.append(f"question_items[{qi}].tokens: id {t} out of range [0, {vocab_size})")
    if len(ex.candidates) != NUM_CANDIDATES:
        v.append(f"candidates: expected {NUM_CANDIDATES}, got {len(ex.candidates)}")
    for ci, cand in enumerate(ex.candidates):
        if len(cand) < 1:
            v.append(f"candidates[{ci}]: expected at least 1 token")
        for t in cand:
            if not 0 <= t < vocab_size:
                v.append(f"candidates[{ci}]: id {t} out of range [0, {vocab_size})")
    if not 0 <= ex.answer < NUM_CANDIDATES:
        v.append(f"answer: expected an index in [0, {NUM_CANDIDATES}), got {ex.answer}")
    return v


def _expect_keys(obj: dict, required: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise DatasetError(f"{where}: expected an object, got {type(obj).__name__}")
    missing = required - obj.keys()
    unknown = obj.keys() - required
    if missing:
        raise DatasetError(f"{where}: missing keys {sorted(missing)}")
    if unknown:
        raise DatasetError(f"{where}: unknown keys {sorted(unknown)}")


def _parse_example(raw: dict, index: int) -> ClozeExample:
    where = f"examples[{index}]"
    _expect_keys(
        raw,
        {"id", "steps", "question_items", "placeholder_position", "candidates", "answer"},
        where,
    )
    where = f"examples[{index}] (id={raw['id']})"
    steps = []
    for si, s in enumerate(raw["steps"]):
        _expect_keys(s, {"tokens", "image_features"}, f"{where}.steps[{si}]")
        feats = s["image_features"]
        steps.append(
            Step(
                tokens=tuple(int(t) for t in s["tokens"]),
                image_features=None
                if feats is None
                else tuple(tuple(float(x) for x in f) for f in feats),
            )
        )
    items = []
    for qi, q in enumerate(raw["question_items"]):
        _expect_keys(q, {"tokens", "position"}, f"{where}.question_items[{qi}]")
        items.append(QuestionItem(tuple(int(t) for t in q["tokens"]), int(q["position"])))
    return ClozeExample(
        recipe=Recipe(id=str(raw["id"]), steps=tuple(steps)),
        question_items=tuple(items),
        placeholder_position=int(raw["placeholder_position"]),
        candidates=tuple(tuple(int(t) for t in c) for c in raw["candidates"]),
        answer=int(raw["answer"]),
    )


def load_dataset(path) -> Dataset:
    """Parse and fully validate a dataset file; any violation is rejected."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path}: parse error: {e}") from e
    _expect_keys(raw, {"split", "vocab_size", "feature_dim", "examples"}, str(path))
    vocab_size = int(raw["vocab_size"])
    feature_dim = None if raw["feature_dim"] is None else int(raw["feature_dim"])
    examples = []
    for i, raw_ex in enumerate(raw["examples"]):
        ex = _parse_example(raw_ex, i)
        violations = validate_example(ex, vocab_size, feature_dim)
        if violations:
            raise DatasetError(f"example {ex.id}: " + "; ".join(violations))
        examples.append(ex)
    return Dataset(
        split=str(raw["split"]),
        vocab_size=vocab_size,
        feature_dim=feature_dim,
        examples=tuple(examples),
    )


def save_dataset(dataset: Dataset, path) -> None:
    """Write the exact interchange schema; loading it back reproduces the dataset."""
    doc = {
        "split": dataset.split,
        "vocab_size": dataset.vocab_size,
        "feature_dim": dataset.feature_dim,
        "examples": [
            {
                "id": ex.recipe.id,
                "steps": [
                    {
                        "tokens": list(s.tokens),
                        "image_features": None
                        if s.image_features is None
                        else [list(f) for f in s.image_features],
                    }
                    for s in ex.recipe.steps
                ],
                "question_items": [
                    {"tokens": list(q.tokens), "position": q.position} for q in ex.question_items
                ],
                "placeholder_position": ex.placeholder_position,
                "candidates": [list(c) for c in ex.candidates],
                "answer": ex.answer,
            }
            for ex in dataset.examples
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, ensure_ascii=False)


@dataclass
class GeneratorConfig:
    num_examples: int
    num_steps_range: tuple = (4, 8)
    vocab_size: int = 160
    tokens_per_step: int = 4
    distractor_mode: str = "easy"
    with_images: bool = False
    feature_dim: int = 64
    seed: int = 0
    split: str = "train"
    feature_seed: int = 101  # shared across splits: images must mean the same thing

    def __post_init__(self):
        lo, hi = self.num_steps_range
        if self.num_examples < 1:
            raise ValueError(f"generator: num_examples must be >= 1, got {self.num_examples}")
        if lo < MIN_STEPS:
            raise ValueError(
                f"generator: num_steps_range minimum must be >= {MIN_STEPS} "
                f"(alignment needs {MIN_STEPS} distinct steps), got {lo}"
            )
        if hi < lo:
            raise ValueError(f"generator: empty num_steps_range {self.num_steps_range}")
        if self.tokens_per_step < 2:
            raise ValueError(f"generator: tokens_per_step must be >= 2, got {self.tokens_per_step}")
        if self.distractor_mode not in DISTRACTOR_MODES:
            raise ValueError(
                f"generator: unknown distractor_mode '{self.distractor_mode}' "
                f"(expected one of {DISTRACTOR_MODES})"
            )
        if self.distractor_mode == "image_only" and not self.with_images:
            raise ValueError("generator: distractor_mode 'image_only' requires with_images")
        if self.with_images and self.feature_dim < 1:
            raise ValueError(f"generator: feature_dim must be >= 1, got {self.feature_dim}")
        needed = self.required_vocab
        if self.vocab_size < needed:
            raise ValueError(
                f"generator: vocab_size {self.vocab_size} too small for layout "
                f"(needs >= {needed}: {self.identity_count} identity blocks of "
                f"{self.tokens_per_step} plus distractor and filler pools)"
            )

    @property
    def identity_count(self) -> int:
        # Extra identities beyond max steps feed image_only absent-identity
        # distractors; harmless otherwise.
        return self.num_steps_range[1] + 4

    @property
    def required_vocab(self) -> int:
        return (self.identity_count + 4) * self.tokens_per_step


def _identity_block(cfg: GeneratorConfig, identity: int) -> np.ndarray:
    start = identity * cfg.tokens_per_step
    return np.arange(start, start + cfg.tokens_per_step)


def _pools(cfg: GeneratorConfig):
    base = cfg.identity_count * cfg.tokens_per_step
    distractor = np.arange(base, base + 2 * cfg.tokens_per_step)
    filler = np.arange(base + 2 * cfg.tokens_per_step, base + 4 * cfg.tokens_per_step)
    return distractor, filler


def _subset(rng: np.random.Generator, pool: np.ndarray, size: int) -> tuple:
    size = min(size, len(pool))
    return tuple(int(t) for t in rng.choice(pool, size=size, replace=False))


def signature_features(cfg: GeneratorConfig) -> np.ndarray:
    """Fixed per-token projection used to synthesize image features.

    The image feature of a step is the sum of its signature tokens'
    projections plus noise. Seeded by ``feature_seed``, not ``seed``: train
    and test splits drawn with different example seeds must still agree on
    what a given signature "looks like", the way a shared pretrained
    extractor would.
    """
    feat_rng = np.random.default_rng([cfg.feature_seed, 9241])
    scale = 1.0 / np.sqrt(cfg.tokens_per_step)
    return feat_rng.normal(0.0, scale, size=(cfg.vocab_size, cfg.feature_dim))


def generate_synthetic(cfg: GeneratorConfig) -> Dataset:
    """Deterministic synthetic cloze dataset; solvable by construction.

    In easy mode a token-overlap oracle recovers the gold answer on every
    example (see :func:`token_overlap_predict`).
    """
    rng = np.random.default_rng([cfg.seed, 17])
    proj = signature_features(cfg) if cfg.with_images else None
    distractor_pool, filler_pool = _pools(cfg)
    sub_len = max(1, (cfg.tokens_per_step + 1) // 2)
    lo, hi = cfg.num_steps_range
    examples = []
    for i in range(cfg.num_examples):
        n = int(rng.integers(lo, hi + 1))
        identities = rng.choice(cfg.identity_count, size=n, replace=False)
        steps = []
        for k in range(n):
            block = _identity_block(cfg, int(identities[k]))
            if cfg.distractor_mode == "image_only":
                tokens = tuple(int(t) for t in rng.choice(filler_pool, size=cfg.tokens_per_step))
            else:
                tokens = tuple(int(t) for t in rng.permutation(block))
            feats = None
            if cfg.with_images:
                vec = proj[block].sum(axis=0) + 0.1 * rng.normal(size=cfg.feature_dim)
                feats = (tuple(float(x) for x in vec),)
            steps.append(Step(tokens=tokens, image_features=feats))
        placeholder = int(rng.integers(0, NUM_POSITIONS))
        questioned = [q for q in range(NUM_POSITIONS) if q != placeholder]
        items = []
        for q in questioned:
            if cfg.distractor_mode == "image_only":
                pool = np.unique(np.asarray(steps[q].tokens))
            else:
                pool = _identity_block(cfg, int(identities[q]))
            items.append(QuestionItem(_subset(rng, pool, sub_len), q))
        gold = _subset(rng, _identity_block(cfg, int(identities[placeholder])), sub_len)
        answer = int(rng.integers(0, NUM_CANDIDATES))
        # image_only wrongs get pairwise-distinct absent identities: with
        # repeats, constrained pooling suppresses colliding wrongs and the
        # untrained model lands above chance.
        wrong_identities = None
        if cfg.distractor_mode == "image_only":
            absent = np.setdiff1d(np.arange(cfg.identity_count), identities)
            wrong_identities = rng.choice(absent, size=NUM_CANDIDATES - 1, replace=False)
        candidates = []
        wrong_slot = 0
        for c in range(NUM_CANDIDATES):
            if c == answer:
                candidates.append(gold)
                continue
            if cfg.distractor_mode == "easy":
                candidates.append(_subset(rng, distractor_pool, sub_len))
            elif cfg.distractor_mode == "adversarial":
                q = questioned[int(rng.integers(0, len(questioned)))]
                candidates.append(_subset(rng, _identity_block(cfg, int(identities[q])), sub_len))
            else:
                j = int(wrong_identities[wrong_slot])
                candidates.append(_subset(rng, _identity_block(cfg, j), sub_len))
            wrong_slot += 1
        examples.append(
            ClozeExample(
                recipe=Recipe(id=f"{cfg.split}-{i:04d}", steps=tuple(steps)),
                question_items=tuple(items),
                placeholder_position=placeholder,
                candidates=tuple(candidates),
                answer=answer,
            )
        )
    return Dataset(
        split=cfg.split,
        vocab_size=cfg.vocab_size,
        feature_dim=cfg.feature_dim if cfg.with_images else None,
        examples=tuple(examples),
    )


def token_overlap_predict(ex: ClozeExample) -> int:
    """Greedy assignment on candidate-step shared-token counts; returns the pick.

    Independent solvability oracle: counts shared tokens between each
    candidate and each step's text, assigns candidates to steps greedily
    with the usual row/column deletion, and predicts the candidate with the
    highest selected count (ties to the lower index).
    """
    steps = [set(s.tokens) for s in ex.recipe.steps]
    counts = np.array(
        [[len(set(c) & s) for s in steps] for c in ex.candidates], dtype=np.float64
    )
    selected = [0.0] * NUM_CANDIDATES
    for _ in range(NUM_CANDIDATES):
        flat = int(np.argmax(counts))
        row, col = divmod(flat, counts.shape[1])
        selected[row] = float(counts[row, col])
        counts[row, :] = -np.inf
        counts[:, col] = -np.inf
    return int(np.argmax(selected))
