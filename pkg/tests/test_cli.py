import csv
import json

import pytest

from elmm import main
from shared.dispatcher import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME
from shared.funcs import load_json
from shared.pipeline import ABLATION_ROWS


@pytest.fixture
def config_path(tiny_experiment, tmp_path):
    path = tmp_path / 'tiny.json'
    path.write_text(json.dumps(tiny_experiment.model_dump(mode='json')), encoding='utf-8')
    return path


def run(config_path, out, *args) -> int:
    return main([args[0], '--config', str(config_path), '--out', str(out), *args[1:]])


def read_csv(path):
    with open(path, newline='', encoding='utf-8') as file:
        return list(csv.reader(file))


def test_config_error_exit_code(config_path, tmp_path, caplog):
    code = run(config_path, tmp_path, 'train', '--set', 'model.n_heads=3')
    assert code == EXIT_CONFIG
    assert any('model.n_heads' in record.getMessage() for record in caplog.records)


def test_runtime_error_exit_code(config_path, tmp_path):
    assert run(config_path, tmp_path / 'empty', 'eval') == EXIT_RUNTIME


@pytest.mark.parametrize('seed', [str(2 ** 64), '-1'])
def test_out_of_range_seed_is_a_config_error(config_path, tmp_path, caplog, seed):
    assert run(config_path, tmp_path, 'gen-data', '--seed', seed) == EXIT_CONFIG
    assert any('seed' in record.getMessage() for record in caplog.records)
    assert not (tmp_path / 'dataset').exists()


def test_unknown_command_is_rejected():
    with pytest.raises(SystemExit):
        main(['explode'])


def test_full_pipeline(config_path, tmp_path):
    out = tmp_path / 'run'
    for command in (['gen-data'], ['train'], ['profile'], ['prune'], ['eval'],
                    ['eval', '--which', 'unpruned'], ['bench']):
        assert run(config_path, out, *command) == EXIT_OK, command

    reports = out / 'reports'
    assert (out / 'dataset' / 'manifest.json').is_file()
    assert (out / 'checkpoints' / 'model.elm').is_file()
    assert (out / 'checkpoints' / 'pruned.elm').is_file()
    assert len((reports / 'train_log.jsonl').read_text(encoding='utf-8').splitlines()) == 1

    rows = read_csv(reports / 'profile.csv')
    assert rows[0] == ['layer', 'similarity']
    assert len(rows) == 1 + 4
    assert all(-1.0 <= float(value) <= 1.0 for _, value in rows[1:])

    plan = load_json(reports / 'plan.json')
    assert len(plan['layers']) == 2
    for entry in plan['entries']:
        assert entry['objective_post'] < 0.5 * entry['objective_pre']
        assert entry['increased'] == (entry['residual_post'] > entry['residual_pre'])

    pruned = load_json(reports / 'eval_pruned_test.json')
    unpruned = load_json(reports / 'eval_unpruned_test.json')
    assert pruned['config_hash'] == unpruned['config_hash']
    assert pruned['n_queries'] == 20
    assert pruned['config']['pruned_layers'] == plan['layers']
    assert (reports / 'eval_pruned_test_ranks.csv').is_file()

    latency = load_json(reports / 'latency.json')
    assert latency['attention_flop_ratio'] == 0.5


def test_pipeline_is_deterministic(config_path, tmp_path):
    outs = [tmp_path / 'first', tmp_path / 'second']
    for out in outs:
        for command in ('gen-data', 'train', 'prune', 'eval'):
            assert run(config_path, out, command, '--seed', '7') == EXIT_OK
    first, second = outs
    for name in ('train.tsv', 'dev.tsv', 'test.tsv', 'entities.jsonl', 'relations.jsonl', 'visual.emb'):
        assert (first / 'dataset' / name).read_bytes() == (second / 'dataset' / name).read_bytes(), name
    for name in ('model.elm', 'pruned.elm'):
        assert (first / 'checkpoints' / name).read_bytes() == (second / 'checkpoints' / name).read_bytes(), name
    for name in ('eval_pruned_test.json', 'plan.json'):
        assert (first / 'reports' / name).read_bytes() == (second / 'reports' / name).read_bytes(), name


def test_seed_changes_dataset(config_path, tmp_path):
    assert run(config_path, tmp_path / 'a', 'gen-data', '--seed', '1') == EXIT_OK
    assert run(config_path, tmp_path / 'b', 'gen-data', '--seed', '2') == EXIT_OK
    assert (tmp_path / 'a' / 'dataset' / 'train.tsv').read_bytes() != (tmp_path / 'b' / 'dataset' / 'train.tsv').read_bytes()


def test_ablate_grid(config_path, tmp_path):
    out = tmp_path / 'ablate'
    assert run(config_path, out, 'gen-data') == EXIT_OK
    assert run(config_path, out, 'ablate') == EXIT_OK
    for name in ABLATION_ROWS:
        report = load_json(out / 'reports' / 'ablation' / f'{name}.json')
        assert report['n_queries'] == 20
    no_pruning = load_json(out / 'reports' / 'ablation' / 'wo_pruning.json')
    assert no_pruning['config']['pruned_layers'] == []
    rows = read_csv(out / 'reports' / 'ablation.csv')
    assert rows[0] == ['variant', 'mr', 'hits1', 'hits3', 'hits10']
    assert [row[0] for row in rows[1:]] == list(ABLATION_ROWS)


def test_prune_sweep(config_path, tmp_path):
    out = tmp_path / 'sweep'
    for command in ('gen-data', 'train'):
        assert run(config_path, out, command) == EXIT_OK
    assert run(config_path, out, 'sweep', '--kind', 'prune') == EXIT_OK
    rows = read_csv(out / 'reports' / 'sweep_prune.csv')
    assert rows[0] == ['k_p', 'mr', 'hits1', 'hits3', 'hits10', 'attention_flop_ratio']
    assert [int(row[0]) for row in rows[1:]] == [0, 1, 2, 3, 4]
    assert [float(row[-1]) for row in rows[1:]] == [1.0, 0.75, 0.5, 0.25, 0.0]


def test_learning_rate_sweep(config_path, tmp_path):
    out = tmp_path / 'sweep'
    assert run(config_path, out, 'gen-data') == EXIT_OK
    assert run(config_path, out, 'sweep', '--kind', 'lr', '--set', 'sweep.lr_grid=[0.001, 0.002]') == EXIT_OK
    rows = read_csv(out / 'reports' / 'sweep_lr.csv')
    assert rows[0] == ['lr', 'mr', 'hits1', 'hits3', 'hits10']
    assert [float(row[0]) for row in rows[1:]] == [0.001, 0.002]
