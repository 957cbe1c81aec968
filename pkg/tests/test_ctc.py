import math

import numpy as np
import pytest

from osmargin.ctc import (
    Alphabet,
    batch_ctc_loss,
    check_feasible,
    collapse,
    ctc_brute_force,
    ctc_loss,
    greedy_decode,
    log_softmax_frames,
    log_softmax_frames_vjp,
    ocr_accuracy,
    osm_frame_log_probs,
    required_frames,
)
from osmargin.exceptions import ContractViolationError, InfeasibleTargetError, SearchSpaceTooLargeError
from osmargin.gradcheck import central_difference, relative_error
from osmargin.losses import HyperParams
from tests.utils import create_test_log_probs, create_test_rng


def _one_hot_frames(labels, width, p=0.9):
    probs = np.full((len(labels), width), (1.0 - p) / (width - 1))
    probs[np.arange(len(labels)), labels] = p
    return np.log(probs)


class TestAlphabet:
    def test_encode_decode(self):
        alphabet = Alphabet.of_size(4)
        assert alphabet.chars == '0123'
        assert alphabet.blank == 4
        assert alphabet.encode('301') == (3, 0, 1)
        assert alphabet.decode([2, 2, 0]) == '220'

    def test_invalid(self):
        test_cases = [lambda: Alphabet(''), lambda: Alphabet('aa'), lambda: Alphabet.of_size(0),
                      lambda: Alphabet.of_size(4).encode('9')]
        for make in test_cases:
            with pytest.raises(ContractViolationError):
                make()


class TestFeasibility:
    def test_required_frames(self):
        test_cases = [((), 0), ((0,), 1), ((0, 1), 2), ((0, 0), 3), ((1, 1, 1), 5), ((0, 1, 0), 3)]
        for target, expected in test_cases:
            assert required_frames(target) == expected

    def test_infeasible_error_carries_counts(self):
        with pytest.raises(InfeasibleTargetError) as e:
            check_feasible(2, (0, 0))
        assert e.value.required == 3
        assert e.value.frames == 2


class TestCtcLoss:
    def test_single_frame(self):
        log_probs = np.log([[0.2, 0.3, 0.5]])
        loss, _ = ctc_loss(log_probs, [0])
        assert loss == pytest.approx(-math.log(0.2))

    def test_uniform_two_frames(self):
        """Paths aa, a-, -a each have probability 1/9"""
        log_probs = np.log(np.full((2, 3), 1.0 / 3.0))
        loss, _ = ctc_loss(log_probs, [0])
        assert loss == pytest.approx(math.log(3.0), abs=1e-12)

    def test_repeat_needs_separator(self):
        with pytest.raises(InfeasibleTargetError):
            ctc_loss(np.log([[0.5, 0.5]]), [0, 0])

    def test_label_out_of_range(self):
        with pytest.raises(ContractViolationError):
            ctc_loss(np.log(np.full((3, 3), 1.0 / 3.0)), [2])

    def test_empty_target_prefers_blank(self):
        log_probs = np.log(np.tile([0.005, 0.005, 0.99], (4, 1)))
        loss, _ = ctc_loss(log_probs, [])
        assert loss == pytest.approx(-4 * math.log(0.99))
        assert loss < 0.05

    def test_single_path_matches_product(self):
        """T equal to the required length leaves one alignment for a repeat-free target"""
        rng = create_test_rng(3)
        log_probs = create_test_log_probs(rng, 3, 4)
        target = [2, 0, 1]
        expected = -sum(log_probs[t, c] for t, c in enumerate(target))
        assert ctc_loss(log_probs, target)[0] == pytest.approx(expected, rel=1e-12)
        assert ctc_brute_force(log_probs, target) == pytest.approx(expected, rel=1e-12)

    def test_matches_brute_force(self):
        rng = create_test_rng(4)
        checked = 0
        while checked < 200:
            frames = int(rng.integers(1, 7))
            classes = int(rng.integers(1, 4))
            target = rng.integers(0, classes, int(rng.integers(0, 4))).tolist()
            if required_frames(target) > frames:
                continue
            log_probs = create_test_log_probs(rng, frames, classes + 1)
            loss, _ = ctc_loss(log_probs, target)
            assert loss == pytest.approx(ctc_brute_force(log_probs, target), rel=1e-9)
            checked += 1

    def test_gradient_matches_finite_differences(self):
        rng = create_test_rng(5)
        for _ in range(30):
            frames = int(rng.integers(3, 7))
            target = rng.integers(0, 3, int(rng.integers(1, 3))).tolist()
            if required_frames(target) > frames:
                continue
            log_probs = create_test_log_probs(rng, frames, 4)
            _, grad = ctc_loss(log_probs, target)
            numeric = central_difference(lambda lp: ctc_loss(lp.reshape(log_probs.shape), target)[0],
                                         log_probs.ravel())
            assert relative_error(grad.ravel(), numeric) <= 1e-5

    def test_gradient_is_negative_occupancy(self):
        """Each frame's occupancies sum to one"""
        rng = create_test_rng(6)
        log_probs = create_test_log_probs(rng, 5, 4)
        _, grad = ctc_loss(log_probs, [1, 2])
        np.testing.assert_allclose(grad.sum(axis=1), -np.ones(5), atol=1e-12)
        assert np.all(grad <= 0.0)

    def test_extra_blank_frame(self):
        """A near-certain blank frame appended at the end costs about -log p(blank)"""
        rng = create_test_rng(7)
        log_probs = create_test_log_probs(rng, 3, 3)
        blank_frame = np.log([[1e-6, 1e-6, 1.0 - 2e-6]])
        extended = np.vstack([log_probs, blank_frame])
        target = [0, 1]
        gap = ctc_loss(extended, target)[0] - ctc_loss(log_probs, target)[0]
        assert gap == pytest.approx(ctc_brute_force(extended, target) - ctc_brute_force(log_probs, target),
                                    rel=1e-9, abs=1e-12)
        assert gap == pytest.approx(-math.log(1.0 - 2e-6), abs=1e-4)


class TestBruteForce:
    def test_no_matching_path(self):
        assert ctc_brute_force(np.log([[0.5, 0.5]]), [0, 0]) == math.inf

    def test_search_space_limit(self):
        with pytest.raises(SearchSpaceTooLargeError):
            ctc_brute_force(np.zeros((12, 5)), [0])


class TestCollapseAndDecode:
    def test_collapse(self):
        test_cases = [
            ((0, 0, 2, 1, 1), (0, 1)),
            ((2, 2, 2), ()),
            ((0, 2, 0), (0, 0)),
            ((0, 0, 0), (0,)),
        ]
        for path, expected in test_cases:
            assert collapse(path, 2) == expected

    def test_greedy_decode(self):
        test_cases = [
            ([0, 0, 2, 1, 1], [0, 1]),
            ([2, 2, 2], []),
            ([0, 2, 0], [0, 0]),
        ]
        for frames, expected in test_cases:
            assert greedy_decode(_one_hot_frames(frames, 3)) == expected

    def test_tie_goes_to_lowest_index(self):
        assert greedy_decode(np.zeros((1, 3))) == [0]


class TestOsmFrames:
    def test_identical_scores(self):
        log_probs = osm_frame_log_probs([[5.0, 5.0, 5.0]], HyperParams(alpha=1.0, lambda_min=1.0, lambda_max=6.0))
        np.testing.assert_allclose(log_probs[0, :3], log_probs[0, 0])

    def test_rows_normalized(self):
        rng = create_test_rng(8)
        log_probs = osm_frame_log_probs(rng.normal(300.0, 300.0, (7, 4)), HyperParams())
        assert log_probs.shape == (7, 5)
        np.testing.assert_allclose(np.exp(log_probs).sum(axis=1), 1.0, atol=1e-9)

    def test_at_negative_plane(self):
        """At s_j = lambda_max only the soft terms of each class remain"""
        hp = HyperParams()
        log_probs = osm_frame_log_probs([[600.0, 600.0]], hp)
        np.testing.assert_allclose(np.exp(log_probs).sum(), 1.0, atol=1e-12)
        assert log_probs[0, 0] == pytest.approx(log_probs[0, 1])

    def test_log_softmax_head(self):
        rng = create_test_rng(9)
        logits = rng.standard_normal((4, 3))
        np.testing.assert_allclose(np.exp(log_softmax_frames(logits)).sum(axis=1), 1.0)
        upstream = rng.standard_normal((4, 3))
        numeric = central_difference(
            lambda v: float(np.sum(upstream * log_softmax_frames(v.reshape(4, 3)))), logits.ravel()
        )
        assert relative_error(log_softmax_frames_vjp(logits, upstream).ravel(), numeric) <= 1e-6


class TestScoring:
    def test_ocr_accuracy(self):
        test_cases = [
            (['ab', 'c', 'd'], ['ab', 'c', 'x'], 2 / 3),
            (['a'], ['a'], 1.0),
            (['a', ''], ['b', 'c'], 0.0),
        ]
        for predictions, targets, expected in test_cases:
            assert ocr_accuracy(predictions, targets) == pytest.approx(expected)

    def test_ocr_accuracy_errors(self):
        test_cases = [([], []), (['a'], ['a', 'b'])]
        for predictions, targets in test_cases:
            with pytest.raises(ContractViolationError):
                ocr_accuracy(predictions, targets)

    def test_batch_loss_is_mean(self):
        rng = create_test_rng(10)
        frames = [create_test_log_probs(rng, 3, 3), create_test_log_probs(rng, 4, 3)]
        targets = [[0], [1, 0]]
        expected = (ctc_loss(frames[0], targets[0])[0] + ctc_loss(frames[1], targets[1])[0]) / 2
        assert batch_ctc_loss(frames, targets) == pytest.approx(expected)
