import itertools
import math
import random

import numpy as np
import pytest
import torch

from emopalette.colorlab import LchColor, Palette, ciede2000, ciede2000_lab
from emopalette.emotion import heuristic_palette_emotion
from emopalette.errors import UsageError
from emopalette.losses import (
    Assignment,
    LossWeights,
    ciede2000_t,
    color_distance_loss,
    diversity_loss,
    emotion_consistency_loss,
    optimal_assignment,
    pairwise_ciede2000_t,
    palette_emotion_t,
    stop_loss,
    total_loss,
)


def bruteforce_min_cost(cost):
    n = cost.shape[0]
    return min(
        sum(cost[i, perm[i]] for i in range(n))
        for perm in itertools.permutations(range(n))
    )


def random_colors(rng, n):
    return [
        LchColor(rng.uniform(5, 95), rng.uniform(1, 140), rng.uniform(0, 360))
        for _ in range(n)
    ]


class TestCiede2000Torch:
    def test_matches_scalar_on_reference_pairs(self, sharma_pairs):
        for lab1, lab2, expected in sharma_pairs:
            def to_lch(lab):
                l, a, b = lab
                return (l, math.hypot(a, b), math.degrees(math.atan2(b, a)) % 360.0)

            t1 = torch.tensor([to_lch(lab1)], dtype=torch.float64)
            t2 = torch.tensor([to_lch(lab2)], dtype=torch.float64)
            got = float(ciede2000_t(t1, t2)[0])
            assert got == pytest.approx(expected, abs=1e-4)
            assert got == pytest.approx(ciede2000_lab(*lab1, *lab2), abs=1e-10)

    def test_matches_scalar_on_random_pairs(self):
        rng = random.Random(21)
        for _ in range(300):
            c1, c2 = random_colors(rng, 2)
            t = float(
                ciede2000_t(
                    torch.tensor([c1.as_tuple()], dtype=torch.float64),
                    torch.tensor([c2.as_tuple()], dtype=torch.float64),
                )[0]
            )
            assert t == pytest.approx(ciede2000(c1, c2), abs=1e-10)

    def test_identical_is_exactly_zero(self):
        t = torch.tensor([[61.0, 43.5, 201.0]], dtype=torch.float64)
        assert float(ciede2000_t(t, t)[0]) == 0.0

    def test_gradients_finite_with_achromatic_gt(self):
        pred = torch.tensor([[50.0, 30.0, 120.0]], dtype=torch.float64, requires_grad=True)
        gt = torch.tensor([[50.0, 0.0, 0.0]], dtype=torch.float64)
        ciede2000_t(gt, pred).sum().backward()
        assert torch.isfinite(pred.grad).all()


class TestOptimalAssignment:
    def test_diagonal_zero_identity(self):
        cost = np.ones((4, 4)) - np.eye(4)
        a = optimal_assignment(cost)
        assert a.permutation == (0, 1, 2, 3)
        assert a.total_cost == 0.0

    def test_2x2_example(self):
        a = optimal_assignment([[0.0, 1.0], [1.0, 0.0]])
        assert a.permutation == (0, 1)
        assert a.total_cost == 0.0

    def test_random_5x5_matches_bruteforce(self):
        rng = np.random.default_rng(22)
        for _ in range(300):
            cost = rng.uniform(0, 10, size=(5, 5))
            a = optimal_assignment(cost)
            assert sorted(a.permutation) == [0, 1, 2, 3, 4]
            assert a.total_cost == bruteforce_min_cost(cost)

    def test_tie_broken_lexicographically(self):
        # Any permutation of a constant matrix is optimal.
        a = optimal_assignment(np.ones((4, 4)))
        assert a.permutation == (0, 1, 2, 3)
        # Two optimal assignments: (0,1) and (1,0) both cost 2.
        a = optimal_assignment([[1.0, 1.0], [1.0, 1.0]])
        assert a.permutation == (0, 1)

    def test_rectangular_rejected(self):
        with pytest.raises(UsageError):
            optimal_assignment(np.ones((3, 4)))

    def test_non_finite_rejected(self):
        with pytest.raises(UsageError):
            optimal_assignment([[1.0, np.inf], [1.0, 1.0]])

    def test_never_worse_than_identity(self):
        rng = np.random.default_rng(23)
        for _ in range(100):
            cost = rng.uniform(0, 5, size=(4, 4))
            a = optimal_assignment(cost)
            assert a.total_cost <= float(np.trace(cost)) + 1e-12


class TestColorDistanceLoss:
    def test_zero_for_equal(self):
        rng = random.Random(24)
        colors = random_colors(rng, 4)
        assert color_distance_loss(colors, colors) == 0.0

    def test_zero_for_any_permutation(self):
        rng = random.Random(25)
        colors = random_colors(rng, 4)
        for perm in itertools.permutations(range(4)):
            permuted = [colors[i] for i in perm]
            assert color_distance_loss(permuted, colors) == pytest.approx(0.0, abs=1e-12)

    def test_matches_bruteforce_permutation_minimum(self):
        rng = random.Random(26)
        for _ in range(50):
            n = rng.choice([3, 4, 5])
            pred, gt = random_colors(rng, n), random_colors(rng, n)
            got = color_distance_loss(pred, gt)
            best = min(
                sum(ciede2000(g, p) for g, p in zip(gt, [pred[i] for i in perm])) / n
                for perm in itertools.permutations(range(n))
            )
            assert got == pytest.approx(best, abs=1e-9)

    def test_length_mismatch_rejected(self):
        rng = random.Random(27)
        with pytest.raises(UsageError):
            color_distance_loss(random_colors(rng, 3), random_colors(rng, 4))

    def test_differentiable_tensor_path(self):
        pred = torch.tensor(
            [[40.0, 30.0, 10.0], [60.0, 50.0, 200.0], [20.0, 20.0, 300.0]],
            dtype=torch.float64,
            requires_grad=True,
        )
        gt = torch.tensor(
            [[45.0, 25.0, 20.0], [55.0, 60.0, 190.0], [25.0, 15.0, 310.0]],
            dtype=torch.float64,
        )
        loss = color_distance_loss(pred, gt)
        loss.backward()
        assert torch.isfinite(pred.grad).all()
        assert float(loss) > 0


class TestDiversityLoss:
    def test_same_hue_gives_zero(self):
        colors = [LchColor(20, 50, 90), LchColor(50, 60, 90), LchColor(80, 20, 90)]
        assert diversity_loss(colors) == 0.0

    def test_opposite_hues_two_colors(self):
        colors = [LchColor(50, 50, 0), LchColor(50, 50, 180)]
        assert diversity_loss(colors) == pytest.approx(-0.5, abs=1e-12)

    def test_matches_double_sum_oracle(self):
        rng = random.Random(28)
        for _ in range(50):
            n = rng.choice([3, 4, 5])
            colors = random_colors(rng, n)
            h = [c.h / 360.0 for c in colors]
            expected = -sum(
                abs(h[i] - h[j]) for i in range(n) for j in range(n) if i != j
            ) / (n * (n - 1))
            assert diversity_loss(colors) == pytest.approx(expected, abs=1e-12)

    def test_circular_flag(self):
        colors = [LchColor(50, 50, 1), LchColor(50, 50, 359)]
        assert diversity_loss(colors) == pytest.approx(-358.0 / 360.0, abs=1e-12)
        assert diversity_loss(colors, circular=True) == pytest.approx(-2.0 / 360.0, abs=1e-12)

    def test_single_color_rejected(self):
        with pytest.raises(UsageError):
            diversity_loss([LchColor(50, 50, 0)])


class TestEmotionConsistencyLoss:
    def test_identical_vectors_zero(self):
        v = np.arange(1.0, 9.0)
        assert emotion_consistency_loss(v, v, v) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_pred_gives_two(self):
        em = np.zeros(8)
        em[0] = 1.0
        ep = np.zeros(8)
        ep[1] = 1.0
        assert emotion_consistency_loss(em, ep, em) == pytest.approx(2.0, abs=1e-12)

    def test_matches_direct_cosine_oracle(self):
        rng = np.random.default_rng(29)
        for _ in range(100):
            em, ep, eg = (rng.normal(size=8) + 1.5 for _ in range(3))
            def cos(a, b):
                return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
            expected = 2.0 - cos(em, ep) - cos(ep, eg)
            assert emotion_consistency_loss(em, ep, eg) == pytest.approx(expected, abs=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(30)
        em, ep, eg = (rng.uniform(0.1, 1, 8) for _ in range(3))
        base = emotion_consistency_loss(em, ep, eg)
        assert emotion_consistency_loss(em * 5, ep * 0.2, eg * 9) == pytest.approx(base, abs=1e-12)

    def test_zero_norm_rejected(self):
        with pytest.raises(UsageError):
            emotion_consistency_loss(np.zeros(8), np.ones(8), np.ones(8))


class TestPaletteEmotionTorch:
    def test_matches_numpy_heuristic(self):
        rng = random.Random(31)
        for _ in range(50):
            colors = random_colors(rng, rng.choice([3, 4, 5]))
            p = Palette(colors)
            t = torch.tensor([c.as_tuple() for c in colors], dtype=torch.float64)
            got = palette_emotion_t(t).numpy()
            assert got == pytest.approx(heuristic_palette_emotion(p), abs=1e-12)

    def test_differentiable(self):
        t = torch.tensor(
            [[50.0, 40.0, 10.0], [70.0, 90.0, 120.0], [30.0, 20.0, 250.0]],
            dtype=torch.float64,
            requires_grad=True,
        )
        palette_emotion_t(t).sum().backward()
        assert torch.isfinite(t.grad).all()


class TestStopLoss:
    def test_saturated_logits_near_zero(self):
        logits = np.array([-40.0, -40.0, -40.0, 40.0])
        assert stop_loss(logits, 3) == pytest.approx(0.0, abs=1e-12)

    def test_uniform_logits_ln2(self):
        assert stop_loss(np.zeros(4), 3) == pytest.approx(math.log(2), abs=1e-9)

    def test_matches_direct_bce_oracle(self):
        rng = np.random.default_rng(32)
        for _ in range(50):
            n = rng.integers(3, 6)
            logits = rng.normal(size=n + 1) * 3
            target = np.zeros(n + 1)
            target[-1] = 1.0
            p = 1.0 / (1.0 + np.exp(-logits))
            expected = -np.mean(target * np.log(p) + (1 - target) * np.log(1 - p))
            assert stop_loss(logits, int(n)) == pytest.approx(expected, abs=1e-9)

    def test_arity_mismatch_rejected(self):
        with pytest.raises(UsageError):
            stop_loss(np.zeros(3), 3)


class TestTotalLoss:
    def test_zero_weights(self):
        w = LossWeights(0, 0, 0, 0)
        assert total_loss((3.0, -1.0, 2.0, 0.5), w) == 0.0

    def test_color_only(self):
        w = LossWeights(1, 0, 0, 0)
        assert total_loss((3.25, -1.0, 2.0, 0.5), w) == 3.25

    def test_default_weighted_sum(self):
        rng = np.random.default_rng(33)
        w = LossWeights()
        for _ in range(20):
            parts = tuple(rng.normal() for _ in range(4))
            expected = 1.0 * parts[0] + 0.1 * parts[1] + 0.5 * parts[2] + 0.2 * parts[3]
            assert total_loss(parts, w) == pytest.approx(expected, abs=1e-12)

    def test_linear_in_each_lambda(self):
        parts = (2.0, -0.5, 1.0, 0.7)
        base = total_loss(parts, LossWeights(1, 0, 0, 0))
        doubled = total_loss(parts, LossWeights(2, 0, 0, 0))
        assert doubled == pytest.approx(2 * base, abs=1e-12)

    def test_negative_weight_rejected(self):
        with pytest.raises(UsageError):
            LossWeights(lambda_color=-0.1)
