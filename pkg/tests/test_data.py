import numpy as np
import pytest

from shared.bench import evaluate_scores, rank_query
from shared.config import GenConfig, TEXT_TOKENS_PER_QUERY
from shared.data import generate_synthetic_mkg, latent_oracle_scores, load_dataset, save_dataset
from shared.exceptions import DatasetIntegrityError, InvalidArgumentError


def test_generator_counts_and_vocabulary(tiny_dataset, tiny_gen):
    assert [len(tiny_dataset.splits[s]) for s in ('train', 'dev', 'test')] == [60, 10, 10]
    assert tiny_dataset.vocab_size == 4 + tiny_gen.n_entities + 2 * tiny_gen.n_relations
    assert len(tiny_dataset.relations) == 2 * tiny_gen.n_relations
    assert tiny_dataset.visual.shape == (20, 2, 4, 6)
    assert all(r.inverse_of == r.id - 2 for r in tiny_dataset.relations[2:])


def test_splits_are_disjoint(tiny_dataset):
    seen = [set(map(tuple, tiny_dataset.splits[s].tolist())) for s in ('train', 'dev', 'test')]
    assert not (seen[0] & seen[1]) and not (seen[0] & seen[2]) and not (seen[1] & seen[2])


def test_generator_is_deterministic(tiny_gen):
    first, second = generate_synthetic_mkg(tiny_gen), generate_synthetic_mkg(tiny_gen)
    assert np.array_equal(first.visual, second.visual)
    for split in first.splits:
        assert np.array_equal(first.splits[split], second.splits[split])
    other = generate_synthetic_mkg(tiny_gen.model_copy(update={'seed': 1}))
    assert not np.array_equal(first.visual, other.visual)


def test_queries_cover_both_directions(tiny_dataset):
    h, r, t = tiny_dataset.splits['train'][0].tolist()
    tail, head = tiny_dataset.queries('train')[:2]
    assert (tail.direction, tail.known, tail.relation, tail.target) == ('tail', h, r, t)
    assert (head.direction, head.known, head.relation, head.target) == ('head', t, r + 2, h)
    assert h in tiny_dataset.known_truths[(t, r + 2)]


def test_collate_marks_spans(tiny_dataset):
    batch = tiny_dataset.collate(tiny_dataset.queries('dev')[:3])
    assert batch.token_ids.shape == (3, TEXT_TOKENS_PER_QUERY)
    assert batch.entity_mask[0].tolist() == [0, 1, 0, 0, 0, 0]
    assert batch.relation_mask[0].tolist() == [0, 0, 0, 0, 1, 0]
    assert batch.visual.shape == (3, 2, 4, 6)


def test_three_entity_dataset():
    dataset = generate_synthetic_mkg(GenConfig(n_entities=3, n_relations=1, n_train=2, n_dev=1, n_test=1,
                                               n_images=1, n_regions=1, visual_dim=2, latent_dim=2,
                                               signal_regions=1, top_k=2))
    assert dataset.n_entities == 3
    assert sum(len(v) for v in dataset.splits.values()) == 4
    for h, _, t in np.concatenate(list(dataset.splits.values())).tolist():
        assert h != t


def test_infeasible_request_is_rejected():
    with pytest.raises(InvalidArgumentError):
        generate_synthetic_mkg(GenConfig(n_entities=5, n_relations=1, n_train=20, n_dev=0, n_test=0, top_k=2))


def test_round_trip(tiny_dataset, dataset_dir):
    loaded = load_dataset(dataset_dir)
    assert loaded.entities == tiny_dataset.entities
    assert loaded.relations == tiny_dataset.relations
    assert np.array_equal(loaded.visual, tiny_dataset.visual)
    for split in tiny_dataset.splits:
        assert np.array_equal(loaded.splits[split], tiny_dataset.splits[split])
    assert loaded.gen_config == tiny_dataset.gen_config


def test_truncated_visual_file(dataset_dir):
    path = dataset_dir / 'visual.emb'
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(DatasetIntegrityError, match=r'expected \d+ bytes, found \d+'):
        load_dataset(dataset_dir)


def test_dangling_entity_id(dataset_dir):
    with open(dataset_dir / 'train.tsv', 'a', encoding='utf-8') as file:
        file.write('999\t0\t1\n')
    with pytest.raises(DatasetIntegrityError, match='dangling entity'):
        load_dataset(dataset_dir)


def test_duplicate_triple(dataset_dir):
    first_line = (dataset_dir / 'train.tsv').read_text(encoding='utf-8').splitlines()[0]
    with open(dataset_dir / 'train.tsv', 'a', encoding='utf-8') as file:
        file.write(first_line + '\n')
    with pytest.raises(DatasetIntegrityError, match='duplicate'):
        load_dataset(dataset_dir)


def test_split_overlap(dataset_dir):
    first_line = (dataset_dir / 'train.tsv').read_text(encoding='utf-8').splitlines()[0]
    with open(dataset_dir / 'test.tsv', 'a', encoding='utf-8') as file:
        file.write(first_line + '\n')
    with pytest.raises(DatasetIntegrityError, match='appears in both'):
        load_dataset(dataset_dir)


def test_manifest_hash_mismatch(dataset_dir):
    with open(dataset_dir / 'dev.tsv', 'a', encoding='utf-8') as file:
        file.write('\n')
    with pytest.raises(DatasetIntegrityError, match='does not match manifest'):
        load_dataset(dataset_dir)


def test_missing_manifest_only_warns(dataset_dir, caplog):
    (dataset_dir / 'manifest.json').unlink()
    with caplog.at_level('WARNING', logger='elmm'):
        loaded = load_dataset(dataset_dir)
    assert loaded.gen_config is None
    assert any('manifest' in record.getMessage() for record in caplog.records)


def test_missing_file(dataset_dir):
    (dataset_dir / 'entities.jsonl').unlink()
    with pytest.raises(DatasetIntegrityError, match='missing'):
        load_dataset(dataset_dir)


def test_latent_oracle_recovers_tails():
    dataset = generate_synthetic_mkg(GenConfig())
    queries = dataset.queries('test')
    scores = np.stack([latent_oracle_scores(dataset, q.known, q.relation) for q in queries])
    for query, row in zip(queries, scores):
        if query.direction == 'tail':
            # Ціль серед top_k найближчих, плюс, можливо, сама відома сутність
            assert rank_query(row, query.target) <= dataset.gen_config.top_k + 1
    report = evaluate_scores(queries, scores, dataset.known_truths, filtered=True)
    assert report.hits1 > 0.5
    assert report.hits10 >= report.hits1
    assert report.mr < (dataset.n_entities + 1) / 2


def test_oracle_needs_latents(dataset_dir):
    with pytest.raises(InvalidArgumentError):
        latent_oracle_scores(load_dataset(dataset_dir), 0, 0)
