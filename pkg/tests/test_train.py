import numpy as np
import pytest
from freezegun import freeze_time

from osmargin.cli import main
from osmargin.constants import (
    EXIT_OK,
    LOSS_BINARY_OSM,
    LOSS_CE,
    LOSS_CTC,
    LOSS_HINGE,
    LOSS_OSM_CTC,
    LOSS_SOFT_OSM,
    MODEL_MLP,
    SCHEDULE_EXPONENTIAL,
)
from osmargin.ctc import Alphabet
from osmargin.data import LabeledDataset, SequenceDataset, SequenceExample, gen_blobs, gen_ocr_sequences, gen_rings
from osmargin.exceptions import ContractViolationError, InfeasibleTargetError
from osmargin.losses import HyperParams, get_loss
from osmargin.models import LinearModel, ModelConfig, forward, init_model
from osmargin.optim import AdamConfig, LrSchedule, SgdConfig, lr_at
from osmargin.train import (
    REPORT_COLUMNS,
    RepeatSummary,
    TrainConfig,
    TrainReport,
    accuracy,
    epochs_to_accuracy,
    head_width,
    margin_stats,
    train_classifier,
    train_ctc,
)
from tests.factories import TrainConfigFactory
from tests.utils import create_test_config, read_csv_rows


@pytest.fixture
def blobs():
    return gen_blobs(50, 2, 2, 1.0, seed=0), gen_blobs(20, 2, 2, 1.0, seed=1)


def _linear(dataset, outputs=None, seed=0):
    return init_model(ModelConfig(dataset.dim, outputs or dataset.class_count), seed)


class TestAccuracy:
    def test_examples(self):
        test_cases = [
            ([0, 1, 1, 0], [0, 1, 1, 1], 0.75),
            ([2, 0], [2, 0], 1.0),
            ([1, 1], [0, 0], 0.0),
        ]
        for predictions, truth, expected in test_cases:
            assert accuracy(predictions, truth) == expected

    def test_errors(self):
        test_cases = [([], []), ([0], [0, 1])]
        for predictions, truth in test_cases:
            with pytest.raises(ContractViolationError):
                accuracy(predictions, truth)

    def test_repeat_summary(self):
        summary = RepeatSummary.of([0.9, 1.0, 0.95])
        assert (summary.mean, summary.low, summary.high) == (pytest.approx(0.95), 0.9, 1.0)
        with pytest.raises(ContractViolationError):
            RepeatSummary.of([])


class TestTrainConfig:
    def test_invalid(self):
        test_cases = [dict(loss_kind='focal'), dict(epochs=-1), dict(batch_size=0)]
        for kwargs in test_cases:
            with pytest.raises(ContractViolationError):
                TrainConfig(**kwargs)

    def test_default_schedules(self):
        assert TrainConfig(loss_kind=LOSS_CTC).resolved_schedule.kind == SCHEDULE_EXPONENTIAL
        assert TrainConfig(loss_kind=LOSS_OSM_CTC).resolved_schedule.kind != SCHEDULE_EXPONENTIAL

    def test_for_ocr(self):
        config = TrainConfig.for_ocr()
        assert config.loss_kind == LOSS_OSM_CTC
        assert config.batch_size == 60
        assert config.optimizer.initial_lr == 0.001
        assert config.hp.alpha == 1.0
        assert (config.hp.lambda_min, config.hp.lambda_max) == (1.0, 6.0)


class TestTrainClassifier:
    def test_zero_epochs(self, blobs):
        train, held_out = blobs
        model = _linear(train)
        report = train_classifier(TrainConfigFactory(epochs=0), model, train, held_out)
        assert report.records == []
        assert report.model is model
        assert report.final_eval_accuracy is None

    def test_deterministic(self, blobs):
        train, held_out = blobs
        config = TrainConfigFactory(epochs=4, batch_size=8)
        first = train_classifier(config, _linear(train), train, held_out)
        second = train_classifier(config, _linear(train), train, held_out)
        assert first.rows() == second.rows()
        np.testing.assert_array_equal(first.model.weights, second.model.weights)

    def test_lr_trace_follows_schedule(self, blobs):
        train, held_out = blobs
        schedule = LrSchedule(period_epochs=4, warmup_epochs=1)
        config = TrainConfigFactory(epochs=9, schedule=schedule)
        report = train_classifier(config, _linear(train), train, held_out)
        assert report.lr_trace == [lr_at(schedule, 0.01, e) for e in range(9)]

    def test_full_batch_loss_is_non_increasing(self, blobs):
        """Plain gradient descent with a small constant step on a convex loss"""
        train, held_out = blobs
        config = TrainConfigFactory(
            epochs=20,
            batch_size=len(train),
            optimizer=SgdConfig(momentum=0.0, weight_decay=0.0, initial_lr=0.001),
            schedule=LrSchedule(kind=SCHEDULE_EXPONENTIAL, decay_rate=1.0),
        )
        report = train_classifier(config, _linear(train), train, held_out)
        losses = [r.train_loss for r in report.records]
        assert all(b <= a + 1e-9 for a, b in zip(losses, losses[1:]))
        assert losses[-1] < losses[0]

    def test_binary_loss_needs_two_classes(self):
        train = gen_blobs(10, 3, 2, 1.0, seed=0)
        with pytest.raises(ContractViolationError):
            train_classifier(TrainConfigFactory(loss_kind=LOSS_BINARY_OSM), _linear(train, 1), train, train)

    def test_dimension_mismatch(self, blobs):
        train, held_out = blobs
        with pytest.raises(ContractViolationError):
            train_classifier(TrainConfigFactory(), _linear(train, outputs=3), train, held_out)

    def test_binary_osm_learns_blobs(self, blobs):
        train, held_out = blobs
        config = TrainConfigFactory(loss_kind=LOSS_BINARY_OSM, epochs=60)
        report = train_classifier(config, _linear(train, 1), train, held_out)
        assert report.final_train_accuracy >= 0.95

    def test_report_csv(self, blobs, tmp_path):
        train, held_out = blobs
        report = train_classifier(TrainConfigFactory(epochs=3), _linear(train), train, held_out)
        path = tmp_path / 'report.csv'
        report.write_csv(path)
        rows = read_csv_rows(path)
        assert rows[0] == list(REPORT_COLUMNS)
        assert [row[0] for row in rows[1:]] == ['0', '1', '2']

    @freeze_time('2024-01-02 03:04:05')
    def test_summary(self, blobs):
        train, held_out = blobs
        report = train_classifier(TrainConfigFactory(epochs=2), _linear(train), train, held_out)
        summary = report.summary()
        assert 'loss_kind = soft-osm' in summary
        assert 'epochs = 2' in summary
        assert 'generated = 2024-01-02T03:04:05+00:00' in summary

    def test_epochs_to_accuracy(self, blobs):
        train, _ = blobs
        report = TrainReport(LOSS_SOFT_OSM, _linear(train))
        assert epochs_to_accuracy(report, 0.5) is None
        report = train_classifier(TrainConfigFactory(epochs=10), _linear(train), train, train)
        assert epochs_to_accuracy(report, 0.0) == 0


class TestScaleInvariance:
    def test_initial_loss_under_invertible_map(self, blobs):
        train, _ = blobs
        a = np.array([[3.0, 1.0], [-0.5, 2.0]])
        model = _linear(train)
        moved = LinearModel(model.weights @ np.linalg.inv(a), model.bias)
        loss = get_loss(LOSS_SOFT_OSM, HyperParams())
        original, _ = loss.value_and_grad(forward(model, train.features), train.labels)
        transformed, _ = loss.value_and_grad(forward(moved, train.features @ a.T), train.labels)
        np.testing.assert_allclose(transformed.mean(), original.mean(), rtol=1e-9)

    def test_rotation_preserves_training_trace(self, blobs):
        """Gradient steps commute with an orthogonal change of input coordinates"""
        train, held_out = blobs
        angle = 0.7
        a = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        rotate = lambda d: LabeledDataset(d.features @ a.T, d.labels, d.class_count)  # noqa: E731
        model = _linear(train)
        moved = LinearModel(model.weights @ a.T, model.bias)
        config = TrainConfigFactory(epochs=8)
        first = train_classifier(config, model, train, held_out)
        second = train_classifier(config, moved, rotate(train), rotate(held_out))
        np.testing.assert_allclose([r.train_loss for r in second.records],
                                   [r.train_loss for r in first.records], rtol=1e-8)
        assert [r.eval_accuracy for r in second.records] == [r.eval_accuracy for r in first.records]


class TestMarginStats:
    def test_margin_satisfying_scores(self):
        labels = np.array([0, 1, 2, 1])
        dataset = LabeledDataset(np.eye(3)[labels], labels, 3)
        model = LinearModel(-650.0 * np.eye(3), np.full(3, 700.0))
        stats = margin_stats(model, dataset, HyperParams())
        assert stats.true_quantiles[50] == pytest.approx(50.0)
        assert stats.off_quantiles[50] == pytest.approx(700.0)
        assert stats.in_band_fraction == 1.0
        assert stats.beyond_fraction == 1.0

    def test_untrained_model(self, blobs):
        train, _ = blobs
        stats = margin_stats(_linear(train), train, HyperParams())
        assert set(stats.true_quantiles) == {5, 25, 50, 75, 95}
        assert all(abs(v) < 100.0 for v in stats.off_quantiles.values())
        assert stats.beyond_fraction == 0.0


class TestTrainCtc:
    def _ocr(self, count, seed, noise=0.0):
        return gen_ocr_sequences(count, 3, 1, 4, repeats=2, noise=noise, seed=seed)

    def _model(self, loss_kind, dataset, seed=0):
        return init_model(ModelConfig(dataset.dim, head_width(loss_kind, dataset.alphabet.size)), seed)

    def test_head_width(self):
        assert head_width(LOSS_OSM_CTC, 4) == 4
        assert head_width(LOSS_CTC, 4) == 5

    def test_rejects_classification_loss(self):
        data = self._ocr(4, 0)
        with pytest.raises(ContractViolationError):
            train_ctc(TrainConfigFactory(loss_kind=LOSS_CE), self._model(LOSS_CTC, data), data, data)

    def test_infeasible_targets_listed(self):
        alphabet = Alphabet.of_size(3)
        data = SequenceDataset(
            (SequenceExample(np.zeros((4, 3)), '01'),
             SequenceExample(np.zeros((2, 3)), '00'),
             SequenceExample(np.zeros((1, 3)), '12')),
            alphabet,
        )
        config = TrainConfigFactory(ocr=True, epochs=1)
        with pytest.raises(InfeasibleTargetError) as e:
            train_ctc(config, self._model(LOSS_OSM_CTC, data), data, data)
        assert e.value.indices == [1, 2]

    def test_deterministic(self):
        train, held_out = self._ocr(12, 0, noise=0.3), self._ocr(6, 1, noise=0.3)
        config = TrainConfigFactory(ocr=True, epochs=2, batch_size=4)
        first = train_ctc(config, self._model(LOSS_OSM_CTC, train), train, held_out)
        second = train_ctc(config, self._model(LOSS_OSM_CTC, train), train, held_out)
        assert first.rows() == second.rows()
        assert len(first.records) == 2

    @pytest.mark.slow
    def test_noiseless_sequences_are_learned(self):
        train, held_out = self._ocr(96, 0), self._ocr(32, 1)
        for loss_kind in (LOSS_OSM_CTC, LOSS_CTC):
            config = TrainConfigFactory(ocr=True, loss_kind=loss_kind, epochs=50)
            report = train_ctc(config, self._model(loss_kind, train), train, held_out)
            assert epochs_to_accuracy(report, 1.0) is not None, loss_kind


@pytest.mark.slow
class TestAcceptance:
    def test_soft_osm_realizes_the_margin_planes(self):
        """Default settings put true scores under lambda_min and the other scores near lambda_max"""
        hp = HyperParams()
        for seed in range(3):
            train, held_out = gen_blobs(100, 2, 2, 1.0, seed=seed), gen_blobs(50, 2, 2, 1.0, seed=seed + 100)
            config = TrainConfig(loss_kind=LOSS_SOFT_OSM, seed=seed, hp=hp)
            assert config.epochs == 300
            report = train_classifier(config, _linear(train, seed=seed), train, held_out)
            stats = margin_stats(report.model, train, hp)
            assert report.final_train_accuracy >= 0.99
            assert stats.true_quantiles[50] <= hp.lambda_min + 50
            assert stats.off_quantiles[50] >= hp.lambda_max - 50
            # true scores end below the zero plane, not inside [0, lambda_min]
            assert stats.in_band_fraction <= 0.5

    def test_rings_need_a_hidden_layer(self):
        """Only the MLP separates the annuli; soft OSM keeps up with hinge and CE"""
        mean_eval = {}
        for loss_kind in (LOSS_SOFT_OSM, LOSS_HINGE, LOSS_CE):
            eval_accuracies = []
            for seed in range(3):
                train, held_out = gen_rings(200, seed=seed), gen_rings(200, seed=seed + 100)
                config = TrainConfigFactory(loss_kind=loss_kind, epochs=200, seed=seed,
                                            optimizer=AdamConfig(initial_lr=0.01))
                if seed == 0:
                    linear = train_classifier(config, _linear(train), train, held_out)
                    assert linear.final_train_accuracy <= 0.65, loss_kind
                mlp_model = init_model(ModelConfig(2, 2, kind=MODEL_MLP, hidden=32), seed=seed)
                mlp = train_classifier(config, mlp_model, train, held_out)
                assert mlp.final_train_accuracy >= 0.98, loss_kind
                eval_accuracies.append(mlp.final_eval_accuracy)
            mean_eval[loss_kind] = float(np.mean(eval_accuracies))
        assert mean_eval[LOSS_SOFT_OSM] >= mean_eval[LOSS_HINGE]
        assert mean_eval[LOSS_SOFT_OSM] >= mean_eval[LOSS_CE] - 0.005

    def test_osm_ctc_keeps_up_with_ctc(self, tmp_path):
        """ocr-compare with the default OCR planes, both model widths, three seeds"""
        path = create_test_config(tmp_path, '\n'.join([
            '[data]', 'source = ocr', 'noise = 0.3',
            '[train]', 'epochs = 30', 'lr = 0.01',
            '[model]', 'hidden = 32',
            '',
        ]))
        out = tmp_path / 'out'
        assert main(['ocr-compare', '--config', str(path), '--out', str(out), '--repeat', '3']) == EXIT_OK
        rows = read_csv_rows(out / 'ocr.csv')
        assert rows[0] == ['model', 'hidden', LOSS_CTC, LOSS_OSM_CTC, 'improvement']
        assert [row[:2] for row in rows[1:]] == [['full', '32'], ['scaled-down', '8']]
        for row in rows[1:]:
            assert float(row[3]) >= float(row[2]) - 0.01, row
