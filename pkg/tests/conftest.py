import pytest
import torch

from shared.config import ExperimentConfig, GenConfig, ModelConfig
from shared.data import generate_synthetic_mkg, save_dataset
from shared.model import build_model
from shared.numerics import SeededRng

TINY_GEN = dict(
    n_entities=20, n_relations=2, n_train=60, n_dev=10, n_test=10,
    n_images=2, n_regions=3, visual_dim=6, latent_dim=4, signal_regions=1, top_k=3, seed=0,
)


@pytest.fixture(autouse=True)
def deterministic_torch():
    torch.use_deterministic_algorithms(True)
    yield


@pytest.fixture(scope='session')
def tiny_gen() -> GenConfig:
    return GenConfig(**TINY_GEN)


@pytest.fixture(scope='session')
def tiny_dataset(tiny_gen):
    return generate_synthetic_mkg(tiny_gen)


@pytest.fixture
def dataset_dir(tiny_dataset, tmp_path):
    return save_dataset(tiny_dataset, tmp_path / 'dataset')


def make_model_config(dataset, **overrides) -> ModelConfig:
    fields = dict(
        d_model=8, n_heads=2, n_layers=2, mlp_ratio=2, max_seq=32,
        vocab_size=dataset.vocab_size, n_images=dataset.n_images, n_regions=dataset.n_regions,
        visual_dim=dataset.visual_dim, n_entities=dataset.n_entities, n_relations=dataset.n_base_relations,
    )
    fields.update(overrides)
    return ModelConfig(**fields)


@pytest.fixture
def model_config_factory(tiny_dataset):
    return lambda **overrides: make_model_config(tiny_dataset, **overrides)


@pytest.fixture
def tiny_model(model_config_factory):
    return build_model(model_config_factory(), SeededRng(0).child('init'))


@pytest.fixture
def tiny_experiment(tmp_path) -> ExperimentConfig:
    # Експеримент, на якому кожна команда виконується за секунди
    return ExperimentConfig.model_validate({
        'model': {'d_model': 8, 'n_heads': 2, 'n_layers': 4, 'max_seq': 64},
        'train': {'epochs': 1, 'batch_size': 32, 'negatives': 5, 'dev_eval_limit': 5},
        'gen': TINY_GEN,
        'prune': {'samples': 16, 'finetune_epochs': 1},
        'bench': {'seq_len': 16, 'reps': 10, 'warmup': 1},
    })


# Центральні скінченні різниці для скалярної функції від тензора
def central_difference(fn, tensor: torch.Tensor, h: float = 1e-5) -> torch.Tensor:
    grad = torch.zeros_like(tensor)
    flat, out = tensor.data.view(-1), grad.view(-1)
    for i in range(flat.numel()):
        saved = flat[i].item()
        flat[i] = saved + h
        plus = float(fn())
        flat[i] = saved - h
        minus = float(fn())
        flat[i] = saved
        out[i] = (plus - minus) / (2 * h)
    return grad


@pytest.fixture
def finite_difference():
    return central_difference
