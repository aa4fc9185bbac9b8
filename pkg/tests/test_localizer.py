import math

import numpy as np
import pytest

from charedit.corpus import build_corpus, load_corpus, save_corpus, split_corpus
from charedit.localizer import (
    CorpusError,
    LabelSet,
    LocalizerModel,
    featurize,
    lexicon_lookup,
    localize,
    micro_f1,
    train,
    zlpr_loss,
)
from charedit.schema import check_mask, desk_schema
from charedit.semantic import gradient_check


def naive_zlpr(scores, positives):
    """Direct summation oracle, safe for moderate score magnitudes."""
    neg = [s for i, s in enumerate(scores) if i not in positives]
    pos = [s for i, s in enumerate(scores) if i in positives]
    return math.log(1.0 + sum(math.exp(s) for s in neg)) + math.log(
        1.0 + sum(math.exp(-s) for s in pos)
    )


def mp_zlpr(scores, positives):
    """High-precision oracle that survives scores up to +-1e4."""
    import mpmath

    with mpmath.workdps(60):
        neg = mpmath.mpf(1) + mpmath.fsum(mpmath.e**mpmath.mpf(s) for i, s in enumerate(scores) if i not in positives)
        pos = mpmath.mpf(1) + mpmath.fsum(mpmath.e**mpmath.mpf(-s) for i, s in enumerate(scores) if i in positives)
        return float(mpmath.log(neg) + mpmath.log(pos))


class TestZlprLoss:
    def test_all_positive_zero_scores_l2(self):
        # negatives empty: first term log 1 = 0; two positives at 0 give log 3
        value, _ = zlpr_loss(np.zeros(2), {0, 1})
        assert value == pytest.approx(math.log(3.0), abs=1e-15)

    def test_single_label_log2(self):
        value, _ = zlpr_loss(np.zeros(1), {0})
        assert value == pytest.approx(math.log(2.0), abs=1e-15)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(1, 12))
            scores = rng.uniform(-20, 20, n)
            positives = {int(i) for i in rng.choice(n, size=int(rng.integers(0, n + 1)), replace=False)}
            value, _ = zlpr_loss(scores, positives)
            assert value == pytest.approx(naive_zlpr(scores, positives), abs=1e-10)

    def test_extreme_scores_match_high_precision_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            scores = rng.uniform(-1e4, 1e4, 6)
            positives = {0, 3}
            value, grad = zlpr_loss(scores, positives)
            assert math.isfinite(value)
            assert np.all(np.isfinite(grad))
            oracle = mp_zlpr(scores, positives)
            assert value == pytest.approx(oracle, rel=1e-12, abs=1e-10)

    def test_limits_at_saturation(self):
        # all labels positive with huge scores -> 0; none positive with very
        # negative scores -> 0
        value, _ = zlpr_loss(np.full(5, 30.0), set(range(5)))
        assert value < 1e-9
        value, _ = zlpr_loss(np.full(5, -30.0), set())
        assert value < 1e-9

    def test_empty_sets_are_legal(self):
        value, grad = zlpr_loss(np.array([1.0, -1.0]), set())
        assert math.isfinite(value)
        value, grad = zlpr_loss(np.array([1.0, -1.0]), {0, 1})
        assert math.isfinite(value)

    def test_gradient_signs(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            scores = rng.uniform(-5, 5, 8)
            positives = {1, 4, 6}
            _, grad = zlpr_loss(scores, positives)
            for i in range(8):
                if i in positives:
                    assert grad[i] <= 0.0
                else:
                    assert grad[i] >= 0.0

    def test_gradient_finite_differences(self):
        report = gradient_check(
            lambda s: zlpr_loss(s, {1, 3}), dim=7, points=100, h=1e-5, seed=3,
            sampler=lambda rng: rng.uniform(-5, 5, 7),
        )
        assert report.passed, f"max rel error {report.max_rel_error}"


class TestFeaturizer:
    def test_deterministic_and_normalized(self):
        a = featurize("Make the nose BIGGER")
        b = featurize("make the nose bigger")
        np.testing.assert_array_equal(a, b)
        assert np.linalg.norm(a) == pytest.approx(1.0)

    def test_empty_text_zero_vector(self):
        assert np.all(featurize("") == 0.0)
        assert np.all(featurize("!!! ???") == 0.0)


class TestTrain:
    def test_separable_toy_corpus_perfect_f1(self):
        label_set = LabelSet(labels=["alpha", "beta"])
        corpus = []
        for i in range(30):
            corpus.append((f"please tune the alpha knob variant {i}", {"alpha"}))
            corpus.append((f"please tune the beta knob variant {i}", {"beta"}))
        model, curve = train(corpus, label_set, epochs=100, seed=0)
        assert micro_f1(model, corpus) == 1.0
        assert curve[-1] < curve[0]

    def test_single_example_memorized(self):
        label_set = LabelSet(labels=["only"])
        corpus = [("adjust the only thing", {"only"})] * 8
        model, curve = train(corpus, label_set, epochs=300, seed=0)
        assert curve[-1] < 0.05
        assert curve[-1] < curve[0] / 10
        assert model.predict("adjust the only thing") == ["only"]

    def test_loss_monotonically_decreasing_on_desk_corpus(self):
        label_set = LabelSet.from_schema(desk_schema())
        corpus = build_corpus(label_set, dual_count=50)
        _, curve = train(corpus, label_set, epochs=80, seed=0)
        assert all(curve[i + 1] <= curve[i] + 1e-12 for i in range(len(curve) - 1))

    def test_desk_corpus_heldout_f1(self):
        label_set = LabelSet.from_schema(desk_schema())
        corpus = build_corpus(label_set, dual_count=50)
        train_split, holdout = split_corpus(corpus, 0.2, seed=0)
        model, _ = train(train_split, label_set, seed=0)
        assert micro_f1(model, holdout) >= 0.95

    def test_shuffled_label_control_scores_low(self):
        # negative control: permuted labels must collapse the held-out F1
        label_set = LabelSet.from_schema(desk_schema())
        corpus = build_corpus(label_set, dual_count=0)
        rng = np.random.default_rng(0)
        labels = [label for _, s in corpus for label in s]
        shuffled = [(text, {labels[i]}) for i, (text, _) in enumerate(corpus)]
        perm = rng.permutation(len(shuffled))
        shuffled = [(shuffled[i][0], shuffled[int(j)][1]) for i, j in enumerate(perm)]
        train_split, holdout = split_corpus(shuffled, 0.2, seed=0)
        model, _ = train(train_split, label_set, seed=0)
        real_train, real_holdout = split_corpus(corpus, 0.2, seed=0)
        real_model, _ = train(real_train, label_set, seed=0)
        assert micro_f1(real_model, real_holdout) >= 0.95
        assert micro_f1(model, holdout) < 0.5

    def test_unknown_label_rejected(self):
        label_set = LabelSet(labels=["known"])
        with pytest.raises(CorpusError):
            train([("text", {"unknown"})], label_set)

    def test_divergence_guard_fires_on_exploding_loss(self, monkeypatch):
        # the adaptive steps make genuine blow-up on real corpora nearly
        # impossible, so drive the guard directly: feed it a loss sequence
        # that explodes and check training aborts
        import charedit.localizer as loc

        losses = iter([1.0, 1.5, 99.0])

        def exploding(scores, pos_mask):
            return next(losses), np.zeros_like(scores)

        monkeypatch.setattr(loc, "_zlpr_batch", exploding)
        label_set = LabelSet(labels=["a", "b"])
        corpus = [("tweak a here", {"a"}), ("tweak b there", {"b"})] * 10
        with pytest.raises(loc.TrainingDivergenceError):
            loc.train(corpus, label_set, epochs=5, lr=0.1, seed=0)

    def test_deterministic_given_seed(self):
        label_set = LabelSet(labels=["a", "b"])
        corpus = [("tweak a here", {"a"}), ("tweak b there", {"b"})] * 10
        m1, c1 = train(corpus, label_set, epochs=50, seed=9)
        m2, c2 = train(corpus, label_set, epochs=50, seed=9)
        np.testing.assert_array_equal(m1.weights, m2.weights)
        assert c1 == c2

    def test_serialization_round_trip(self, desk_stack):
        doc = desk_stack.localizer.to_dict()
        back = LocalizerModel.from_dict(doc)
        np.testing.assert_array_equal(back.score("bigger nose"), desk_stack.localizer.score("bigger nose"))


class TestLocalize:
    def test_nose_prompt_covers_nose_channels(self, desk_stack):
        schema = desk_stack.schema
        loc = localize("make the nose bigger", desk_stack.localizer, schema)
        expected = np.zeros(schema.size)
        expected[sorted(schema.label_channel_map["nose"])] = 1.0
        np.testing.assert_array_equal(loc.mask, expected)
        assert not loc.unlocalized

    def test_empty_prompt_all_ones_flagged(self, desk_stack):
        loc = localize("", desk_stack.localizer, desk_stack.schema)
        assert loc.unlocalized
        assert np.all(loc.mask == 1.0)

    def test_discrete_group_mask_atomic(self, desk_stack):
        loc = localize("darker eyeshadow", desk_stack.localizer, desk_stack.schema)
        members = desk_stack.schema.group_members("eyeshadow_style")
        assert np.all(loc.mask[members] == loc.mask[members][0])
        assert loc.mask[members][0] == 1.0
        check_mask(loc.mask, desk_stack.schema)

    def test_masks_always_group_uniform(self, desk_stack):
        prompts = ["anything", "eyeshadow and lipstick", "nose eyeshadow", "xyzzy", ""]
        for prompt in prompts:
            loc = localize(prompt, desk_stack.localizer, desk_stack.schema)
            check_mask(loc.mask, desk_stack.schema)

    def test_lexicon_fallback_on_unscored_phrase(self, desk_stack):
        # zeroed model scores nothing; the phrase lookup still resolves
        zeros = LocalizerModel(
            label_set=desk_stack.label_set,
            weights=np.zeros_like(desk_stack.localizer.weights),
            bias=np.zeros_like(desk_stack.localizer.bias),
        )
        loc = localize("the nose please", zeros, desk_stack.schema)
        assert loc.labels == ["nose"]
        assert loc.source == "lexicon"

    def test_synonym_lookup(self, desk_stack):
        hits = lexicon_lookup("give her fuller lips", desk_stack.label_set)
        assert "lipstick" in hits


class TestCorpusIO:
    def test_jsonl_round_trip(self, tmp_path):
        label_set = LabelSet.from_schema(desk_schema())
        corpus = build_corpus(label_set, dual_count=10)
        path = tmp_path / "corpus.jsonl"
        save_corpus(corpus, path)
        assert load_corpus(path) == corpus

    def test_paper_corpus_size(self):
        from charedit.schema import paper_scale_schema

        label_set = LabelSet.from_schema(paper_scale_schema())
        corpus = build_corpus(label_set)
        # 117 labels x 12 modifiers x 7 frames + 200 duals
        assert 9800 <= len(corpus) <= 10300
