from pathlib import Path

import pytest

from osmargin.constants import (
    LOSS_CE,
    LOSS_CTC,
    LOSS_HINGE,
    LOSS_OSM_CTC,
    LOSS_SOFT_OSM,
    MODEL_MLP,
    SCHEDULE_EXPONENTIAL,
    THREADS_ENV_VAR,
)
from osmargin.data import LabeledDataset, SequenceDataset
from osmargin.exceptions import ConfigError, DatasetError
from osmargin.optim import AdamConfig, SgdConfig
from osmargin.settings import DatasetSpec, hyperparams_for, load_run_config
from tests.factories import DatasetSpecFactory, HyperParamsFactory, RunConfigFactory
from tests.utils import create_test_config


class TestDefaults:
    def test_no_file(self):
        config = load_run_config()
        assert config.dataset.source == 'blobs'
        assert config.train.loss_kind == LOSS_SOFT_OSM
        assert config.train.epochs == 300
        assert config.train.batch_size == 32
        assert isinstance(config.train.optimizer, SgdConfig)
        assert config.train.optimizer.initial_lr == 0.01
        assert config.train.hp.lambda_max == 600.0
        assert config.out_dir == Path('.')
        assert config.compare_losses == (LOSS_SOFT_OSM, LOSS_CE, LOSS_HINGE)
        assert config.compare_datasets == (config.dataset,)

    def test_ocr_source_defaults(self, tmp_path):
        path = create_test_config(tmp_path, '[data]\nsource = ocr\n')
        config = load_run_config(path)
        assert config.train.loss_kind == LOSS_OSM_CTC
        assert isinstance(config.train.optimizer, AdamConfig)
        assert config.train.optimizer.initial_lr == 0.001
        assert config.train.batch_size == 60
        assert config.train.hp.alpha == 1.0
        assert (config.train.hp.lambda_min, config.train.hp.lambda_max) == (1.0, 6.0)

    def test_plain_ctc_decays_exponentially(self, tmp_path):
        path = create_test_config(tmp_path, '[data]\nsource = ocr\n[train]\nloss = ctc\n')
        config = load_run_config(path)
        assert config.train.loss_kind == LOSS_CTC
        assert config.train.resolved_schedule.kind == SCHEDULE_EXPONENTIAL


class TestFile:
    def test_full_file(self, tmp_path):
        path = create_test_config(tmp_path, '\n'.join([
            '# every section',
            '[run]', 'out = results', 'seed = 3', 'repeat = 2', 'threads = 4',
            '[data]', 'source = blobs', 'n_per_class = 10', 'classes = 3', 'dim = 4', 'spread = 0.5',
            '[model]', 'kind = mlp', 'hidden = 8',
            '[train]', 'loss = hinge', 'epochs = 7', 'batch_size = 5', 'optimizer = sgd', 'lr = 0.1',
            'momentum = 0.5', 'weight_decay = 0', 'schedule = exponential-decay', 'decay_rate = 0.5',
            '[osm]', 'alpha = 0.2', 'lambda = 2', 'lambda_min = 10', 'lambda_max = 60', 'hinge_margin = 2',
            '',
        ]))
        config = load_run_config(path)
        assert config.out_dir == Path('results')
        assert (config.seed, config.repeat, config.threads) == (3, 2, 4)
        assert config.seeds() == [3, 4]
        assert (config.dataset.n_per_class, config.dataset.classes, config.dataset.dim) == (10, 3, 4)
        assert (config.model.kind, config.model.hidden) == (MODEL_MLP, 8)
        assert config.train.loss_kind == LOSS_HINGE
        assert (config.train.epochs, config.train.batch_size) == (7, 5)
        assert config.train.optimizer == SgdConfig(momentum=0.5, weight_decay=0.0, initial_lr=0.1)
        assert config.train.resolved_schedule.decay_rate == 0.5
        assert config.train.hp == HyperParamsFactory(alpha=0.2, lam=2.0, lambda_min=10.0, lambda_max=60.0,
                                                     hinge_margin=2.0)

    def test_errors_name_the_field(self, tmp_path):
        test_cases = [
            ('[data]\nsource = csv\n', 'data.path'),
            ('[data]\nsource = parquet\n', 'data.source'),
            ('[train]\nepochs = many\n', 'train.epochs'),
            ('[train]\nloss = focal\n', 'train.loss'),
            ('[train]\noptimizer = rmsprop\n', 'train.optimizer'),
            ('[train]\nloss = ctc\n', 'train.loss'),
            ('[data]\nsource = ocr\n[train]\nloss = ce\n', 'train.loss'),
            ('[train]\nepochs = -1\n', 'train'),
            ('[train]\nlr = 0\n', 'train'),
            ('[osm]\nlambda_min = 700\n', 'osm'),
            ('[model]\nkind = cnn\n', 'model.kind'),
            ('[run]\nrepeat = 0\n', 'run.repeat'),
            ('[run]\nthreads = 0\n', 'run.threads'),
            ('[run]\ncolour = blue\n', 'run.colour'),
            ('[extras]\nx = 1\n', 'extras'),
            ('[sweep]\npairs = 600-100\n', 'sweep.pairs'),
            ('[compare]\nlosses = ctc\n', 'compare.losses'),
            ('[compare]\ndatasets = other\n', 'data.other'),
            ('[ocr]\nlosses = ce\n', 'ocr.losses'),
            ('[run\n', '--config'),
        ]
        for i, (body, field) in enumerate(test_cases):
            path = create_test_config(tmp_path, body, name=f'case{i}.cfg')
            with pytest.raises(ConfigError) as e:
                load_run_config(path)
            assert e.value.field == field, body

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError) as e:
            load_run_config(tmp_path / 'absent.cfg')
        assert e.value.field == '--config'

    def test_compare_datasets(self, tmp_path):
        path = create_test_config(tmp_path, '\n'.join([
            '[compare]', 'losses = soft-osm, ce', 'datasets = easy, rings', 'target = 0.9',
            '[data.easy]', 'source = blobs', 'spread = 0.5',
            '[data.rings]', 'source = rings', 'n_per_class = 30',
            '',
        ]))
        config = load_run_config(path)
        assert config.compare_losses == (LOSS_SOFT_OSM, LOSS_CE)
        assert [spec.name for spec in config.compare_datasets] == ['easy', 'rings']
        assert config.compare_datasets[0].spread == 0.5
        assert config.compare_datasets[1].n_per_class == 30
        assert config.compare_target == 0.9


class TestOverrides:
    def test_flags_win_over_file(self, tmp_path):
        path = create_test_config(tmp_path, '[run]\nseed = 1\nout = a\n[train]\nloss = hinge\nepochs = 9\nlr = 0.2\n')
        test_cases = [
            ({'loss': LOSS_CE}, lambda c: c.train.loss_kind, LOSS_CE),
            ({'seed': 5}, lambda c: c.seed, 5),
            ({'epochs': 2}, lambda c: c.train.epochs, 2),
            ({'out': Path('b')}, lambda c: c.out_dir, Path('b')),
            ({'lr': 0.5}, lambda c: c.train.optimizer.initial_lr, 0.5),
            ({'batch_size': 4}, lambda c: c.train.batch_size, 4),
            ({'repeat': 3}, lambda c: c.repeat, 3),
            ({'threads': 2}, lambda c: c.threads, 2),
            ({'loss': None}, lambda c: c.train.loss_kind, LOSS_HINGE),
        ]
        for overrides, read, expected in test_cases:
            assert read(load_run_config(path, overrides)) == expected, overrides

    def test_unknown_override(self):
        with pytest.raises(ConfigError):
            load_run_config(None, {'colour': 'blue'})


class TestDatasetSpec:
    def test_synthetic_eval_uses_offset_seed(self):
        train, held_out = DatasetSpecFactory().resolve(seed=0)
        assert isinstance(train, LabeledDataset)
        assert len(train) == len(held_out) == 40
        assert not (train.features == held_out.features).all()

    def test_ocr(self):
        train, held_out = DatasetSpecFactory(source='ocr', count=6, eval_count=3).resolve(seed=0)
        assert isinstance(train, SequenceDataset)
        assert (len(train), len(held_out)) == (6, 3)

    def test_csv_split(self, tmp_path):
        path = tmp_path / 'data.csv'
        path.write_text(''.join(f'{i % 2},{i},{-i}\n' for i in range(10)))
        train, held_out = DatasetSpec(source='csv', path=path, eval_fraction=0.3).resolve(seed=0)
        assert (len(train), len(held_out)) == (7, 3)

    def test_csv_eval_file(self, tmp_path):
        (tmp_path / 'a.csv').write_text('0,1\n1,2\n')
        (tmp_path / 'b.csv').write_text('1,5\n')
        spec = DatasetSpec(source='csv', path=tmp_path / 'a.csv', eval_path=tmp_path / 'b.csv')
        train, held_out = spec.resolve(seed=0)
        assert (len(train), len(held_out)) == (2, 1)
        assert held_out.labels.tolist() == [1]
        assert held_out.class_count == train.class_count == 2

    def test_csv_eval_file_with_unseen_label(self, tmp_path):
        (tmp_path / 'a.csv').write_text('0,1\n1,2\n')
        (tmp_path / 'b.csv').write_text('4,5\n')
        spec = DatasetSpec(source='csv', path=tmp_path / 'a.csv', eval_path=tmp_path / 'b.csv')
        with pytest.raises(DatasetError):
            spec.resolve(seed=0)

    def test_missing_csv(self, tmp_path):
        with pytest.raises(DatasetError):
            DatasetSpec(source='csv', path=tmp_path / 'absent.csv').resolve(seed=0)


class TestSweepPoints:
    def test_one_factor_rows_then_pairs(self, tmp_path):
        path = create_test_config(tmp_path, '[sweep]\nalpha = 0.05, 0.2\npairs = 500:50, 100:200\n')
        points = load_run_config(path).sweep_points()
        assert [p.values['alpha'] for p in points] == [0.05, 0.2, 0.1, 0.1]
        assert [(p.values['lambda_max'], p.values['lambda_min']) for p in points[2:]] == [(500.0, 50.0),
                                                                                        (100.0, 200.0)]
        assert [p.reason is None for p in points] == [True, True, True, False]
        assert 'lambda_max' in points[-1].reason

    def test_invalid_values_are_rejected_rows(self, tmp_path):
        path = create_test_config(tmp_path, '[sweep]\nalpha = 0.1, -0.5\nlambda = 0\npairs = 50:-10\n')
        points = load_run_config(path).sweep_points()
        assert points[0].reason is None
        assert [p.reason.split('=')[0] for p in points[1:]] == ['alpha', 'lambda', 'lambda_min']

    def test_empty_grid(self):
        with pytest.raises(ConfigError) as e:
            RunConfigFactory().sweep_points()
        assert e.value.field == 'sweep'

    def test_hyperparams_for(self):
        hp = hyperparams_for(HyperParamsFactory(hinge_margin=3.0),
                             {'alpha': 0.3, 'lambda': 2.0, 'lambda_max': 50.0, 'lambda_min': 5.0})
        assert (hp.alpha, hp.lam, hp.lambda_max, hp.lambda_min, hp.hinge_margin) == (0.3, 2.0, 50.0, 5.0, 3.0)


class TestThreads:
    def test_env_caps_workers(self, monkeypatch):
        config = RunConfigFactory(threads=8)
        monkeypatch.setenv(THREADS_ENV_VAR, '2')
        assert config.worker_count(10) == 2
        assert config.worker_count(1) == 1
        monkeypatch.delenv(THREADS_ENV_VAR)
        assert config.worker_count(10) == 8

    def test_cpu_count_default(self, monkeypatch, mocker):
        monkeypatch.delenv(THREADS_ENV_VAR, raising=False)
        mocker.patch('osmargin.settings.os.cpu_count', return_value=3)
        assert RunConfigFactory().worker_count(10) == 3

    def test_bad_env(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV_VAR, 'lots')
        with pytest.raises(ConfigError):
            RunConfigFactory().worker_count(4)
