from pathlib import Path

import pytest

from shared.bench import evaluate
from shared.config import load_experiment_config
from shared.data import generate_synthetic_mkg
from shared.kgc import CompletionHead, PlainHead
from shared.numerics import SeededRng
from shared.pipeline import (ABLATION_ROWS, fresh_model, model_config_for, prune_copy, prune_pipeline, run_variant,
                             train_model, with_flags)
from shared.pruning import profile_attention_similarity

DESK_CONFIG = Path(__file__).resolve().parent.parent / 'configs' / 'desk.json'


def test_ablation_rows_cover_every_flag():
    flags = {flag for row in ABLATION_ROWS.values() for flag in row}
    assert flags == {'no_image_view', 'no_text_view', 'no_mvtc', 'no_pruning', 'no_linear_comp', 'zero_init_wc',
                     'plain_head'}
    assert ABLATION_ROWS['full'] == {}


@pytest.mark.parametrize('row, field, value', [
    ('wo_image', 'use_image_view', False),
    ('wo_text', 'use_text_view', False),
    ('wo_mvtc', 'use_mvtc', False),
    ('head_layer', 'head', 'plain'),
    ('full', 'head', 'completion'),
])
def test_model_config_follows_flags(tiny_experiment, tiny_dataset, row, field, value):
    config = model_config_for(with_flags(tiny_experiment, ABLATION_ROWS[row]), tiny_dataset)
    assert getattr(config, field) == value
    assert config.vocab_size == tiny_dataset.vocab_size
    assert config.n_entities == tiny_dataset.n_entities


def test_no_pruning_trains_for_the_same_budget(tiny_experiment, tiny_dataset, tmp_path):
    config = with_flags(tiny_experiment, ABLATION_ROWS['wo_pruning'])
    train_model(config, tiny_dataset, log_path=tmp_path / 'log.jsonl')
    lines = (tmp_path / 'log.jsonl').read_text(encoding='utf-8').splitlines()
    assert len(lines) == tiny_experiment.train.epochs + tiny_experiment.prune.finetune_epochs


def test_prune_pipeline_respects_flags(tiny_experiment, tiny_dataset):
    model = train_model(tiny_experiment, tiny_dataset)
    skipped = with_flags(tiny_experiment, ABLATION_ROWS['wo_pruning'])
    _, plan = prune_pipeline(skipped, model, tiny_dataset)
    assert plan.layers == [] and model.pruned_layers() == []

    no_linear = with_flags(tiny_experiment, ABLATION_ROWS['wo_linear'])
    profile, plan = prune_pipeline(no_linear, model, tiny_dataset)
    assert len(model.pruned_layers()) == tiny_experiment.k_p
    assert all(w_c is None for w_c in model.compensations().values())
    assert plan.init == 'none'
    assert len(profile.similarities) == tiny_experiment.model.n_layers


def test_prune_copy_leaves_source_untouched(tiny_experiment, tiny_dataset):
    model = train_model(tiny_experiment, tiny_dataset)
    profile = profile_attention_similarity(model, tiny_dataset, 16, SeededRng(0))
    pruned = prune_copy(tiny_experiment, model, tiny_dataset, profile, 3)
    assert model.pruned_layers() == []
    assert len(pruned.pruned_layers()) == 3


def test_run_variant_with_plain_head(tiny_experiment, tiny_dataset):
    config = with_flags(tiny_experiment, ABLATION_ROWS['head_layer'])
    report = run_variant(config, tiny_dataset)
    assert report.n_queries == 2 * len(tiny_dataset.splits['test'])
    assert 0 <= report.hits10 <= 1


def test_heads_match_flag(tiny_experiment, tiny_dataset):
    assert isinstance(fresh_model(tiny_experiment, tiny_dataset).head, CompletionHead)
    plain = with_flags(tiny_experiment, ABLATION_ROWS['head_layer'])
    assert isinstance(fresh_model(plain, tiny_dataset).head, PlainHead)


@pytest.fixture(scope='module')
def desk():
    config = load_experiment_config(DESK_CONFIG)
    return config, generate_synthetic_mkg(config.gen)


@pytest.mark.slow
def test_full_model_learns_and_survives_pruning(desk):
    config, dataset = desk
    model = train_model(config, dataset)
    unpruned = evaluate(model, dataset, 'test')
    assert unpruned.hits10 >= 0.25
    prune_pipeline(config, model, dataset)
    pruned = evaluate(model, dataset, 'test')
    assert pruned.hits10 >= 0.9 * unpruned.hits10


@pytest.mark.slow
def test_compression_beats_raw_visual_tokens(desk):
    config, dataset = desk
    full = run_variant(config, dataset)
    raw = run_variant(with_flags(config, ABLATION_ROWS['wo_mvtc']), dataset)
    assert raw.hits10 < full.hits10


@pytest.mark.slow
def test_sample_compensation_halves_row_residual_on_desk_model(desk):
    config, dataset = desk
    config = config.model_copy(update={'prune': config.prune.model_copy(update={'mode': 'sample', 'k_p': 4})})
    model = train_model(config, dataset)
    _, plan = prune_pipeline(config, model, dataset)
    assert len(plan.entries) == 4
    for entry in plan.entries:
        assert entry.residual_post < 0.5 * entry.residual_pre, entry.layer
