import copy
from pathlib import Path

from .bench import EvalReport, evaluate
from .config import AblationFlags, ExperimentConfig, ModelConfig, logger
from .data import MkgDataset
from .kgc import train
from .model import ElmmModel, build_model
from .numerics import SeededRng
from .pruning import CompensationPlan, SimilarityProfile, fit_all_compensations, prune_model, select_prune_layers

# Рядки абляції: назва варіанта -> прапорці
ABLATION_ROWS: dict[str, dict[str, bool]] = {
    'full': {},
    'wo_image': {'no_image_view': True},
    'wo_text': {'no_text_view': True},
    'wo_mvtc': {'no_mvtc': True},
    'wo_pruning': {'no_pruning': True},
    'wo_linear': {'no_linear_comp': True},
    'wo_init': {'zero_init_wc': True},
    'head_layer': {'plain_head': True},
}


def model_config_for(config: ExperimentConfig, dataset: MkgDataset) -> ModelConfig:
    arch, flags = config.model, config.ablation
    return ModelConfig(
        d_model=arch.d_model, n_heads=arch.n_heads, n_layers=arch.n_layers, mlp_ratio=arch.mlp_ratio,
        max_seq=arch.max_seq, ln_eps=arch.ln_eps,
        vocab_size=dataset.vocab_size, n_images=dataset.n_images, n_regions=dataset.n_regions,
        visual_dim=dataset.visual_dim, n_entities=dataset.n_entities, n_relations=dataset.n_base_relations,
        use_text_view=not flags.no_text_view, use_image_view=not flags.no_image_view,
        use_mvtc=not flags.no_mvtc, head='plain' if flags.plain_head else 'completion',
    )


def fresh_model(config: ExperimentConfig, dataset: MkgDataset) -> ElmmModel:
    return build_model(model_config_for(config, dataset), SeededRng(config.train.seed).child('init'))


def with_flags(config: ExperimentConfig, flags: dict[str, bool]) -> ExperimentConfig:
    return config.model_copy(update={'ablation': AblationFlags(**flags)}, deep=True)


def train_model(config: ExperimentConfig, dataset: MkgDataset, log_path: Path | None = None,
                lr: float | None = None) -> ElmmModel:
    train_config = config.train if lr is None else config.train.model_copy(update={'lr': lr})
    epochs = train_config.epochs
    if config.ablation.no_pruning:
        # Рівний бюджет навчання з варіантами, що донавчаються після прунінгу
        epochs += config.prune.finetune_epochs
    model = fresh_model(config, dataset)
    train(model, dataset, train_config, log_path=log_path, epochs=epochs)
    return model


def _init_strategy(flags: AblationFlags) -> str:
    if flags.no_linear_comp:
        return 'none'
    if flags.zero_init_wc:
        return 'zero'
    return 'least-squares'


def finetune(config: ExperimentConfig, model: ElmmModel, dataset: MkgDataset, log_path: Path | None = None) -> None:
    if config.prune.finetune_epochs > 0 and model.pruned_layers():
        train(model, dataset, config.train, log_path=log_path, epochs=config.prune.finetune_epochs, stream='finetune')


# Профілювання, прунінг з компенсацією та донавчання згідно конфігурації
def prune_pipeline(config: ExperimentConfig, model: ElmmModel, dataset: MkgDataset, k_p: int | None = None,
                   profile: SimilarityProfile | None = None,
                   log_path: Path | None = None) -> tuple[SimilarityProfile | None, CompensationPlan]:
    flags = config.ablation
    rng = SeededRng(config.train.seed).child('prune')
    k_p = config.k_p if k_p is None else k_p
    if flags.no_pruning:
        logger.info("Прунінг вимкнено (no_pruning)")
        return profile, CompensationPlan([], config.prune.mode, trainable=not config.prune.freeze_wc)
    profile, plan = prune_model(
        model, dataset, k_p, config.prune.samples, config.prune.mode, rng,
        init=_init_strategy(flags), trainable=not config.prune.freeze_wc, profile=profile,
    )
    finetune(config, model, dataset, log_path)
    return profile, plan


def prune_copy(config: ExperimentConfig, model: ElmmModel, dataset: MkgDataset, profile: SimilarityProfile,
               k_p: int) -> ElmmModel:
    pruned = copy.deepcopy(model)
    rng = SeededRng(config.train.seed).child('prune').child('compensation')
    fit_all_compensations(pruned, dataset, select_prune_layers(profile, k_p), config.prune.samples,
                          config.prune.mode, rng, _init_strategy(config.ablation), not config.prune.freeze_wc)
    finetune(config, pruned, dataset)
    return pruned


# Повний цикл одного варіанта: навчання -> прунінг -> оцінка
def run_variant(config: ExperimentConfig, dataset: MkgDataset, lr: float | None = None) -> EvalReport:
    model = train_model(config, dataset, lr=lr)
    prune_pipeline(config, model, dataset)
    return evaluate(model, dataset, config.eval.split, filtered=config.eval.filtered)
