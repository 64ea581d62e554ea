import os
import json
import logging
from pathlib import Path
from typing import Any, Literal

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .exceptions import ConfigError

# Шлях до .env файлу (необов'язковий)
env_path = '.env'

load_dotenv(env_path)


def get_env_value(key, default=None):
    if key in os.environ:
        return os.environ[key]
    if default is not None:
        return default
    raise KeyError(f"Environment variable '{key}' not found")


# Налаштування логування
logging.basicConfig(
    level=get_env_value('ELMM_LOG_LEVEL', 'INFO').upper(),
    format='%(asctime)s %(levelname)s %(name)s: %(message)s',
)
logger = logging.getLogger('elmm')

NUM_THREADS = int(get_env_value('ELMM_NUM_THREADS', '0'))

# Розмітка тексту запиту: [ENT_OPEN, ent, ENT_CLOSE, REL_OPEN, rel, REL_CLOSE]
ENT_OPEN, ENT_CLOSE, REL_OPEN, REL_CLOSE = 0, 1, 2, 3
N_SPECIAL_TOKENS = 4
TEXT_TOKENS_PER_QUERY = 6

CHECKPOINT_MAGIC = b'ELM1'
VISUAL_MAGIC = b'EMB1'

DATASET_FILES = ('train.tsv', 'dev.tsv', 'test.tsv', 'entities.jsonl', 'relations.jsonl', 'visual.emb')
SPLITS = ('train', 'dev', 'test')

SEED_LIMIT = 2 ** 64

LR_GRID = [1e-4, 2e-4, 3e-4, 5e-4, 8e-4, 1e-3]


class _Strict(BaseModel):
    model_config = ConfigDict(extra='forbid')


class ModelConfig(_Strict):
    d_model: int = Field(ge=1)
    n_heads: int = Field(ge=1)
    n_layers: int = Field(ge=0)
    mlp_ratio: int = Field(default=2, ge=1)
    max_seq: int = Field(ge=1)
    ln_eps: float = Field(default=1e-5, gt=0)
    vocab_size: int = Field(ge=1)
    n_images: int = Field(ge=1)
    n_regions: int = Field(ge=1)
    visual_dim: int = Field(ge=1)
    n_entities: int = Field(ge=1)
    n_relations: int = Field(ge=1)
    use_text_view: bool = True
    use_image_view: bool = True
    use_mvtc: bool = True
    head: Literal['completion', 'plain'] = 'completion'

    @model_validator(mode='after')
    def _check_heads(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        return self

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def n_visual_tokens(self) -> int:
        return self.n_images * (self.n_regions + 1)

    # Кількість візуальних рядків у послідовності після стиснення (або без нього)
    @property
    def n_visual_rows(self) -> int:
        if not self.use_mvtc:
            return self.n_visual_tokens
        return self.n_heads * (int(self.use_text_view) + int(self.use_image_view))


class ArchConfig(_Strict):
    d_model: int = Field(default=32, ge=1)
    n_heads: int = Field(default=4, ge=1)
    n_layers: int = Field(default=8, ge=0)
    mlp_ratio: int = Field(default=2, ge=1)
    max_seq: int = Field(default=512, ge=1)
    ln_eps: float = Field(default=1e-5, gt=0)


class TrainConfig(_Strict):
    lr: float = Field(default=3e-4, ge=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    weight_decay: float = Field(default=0.0, ge=0)
    negatives: int = Field(default=64, ge=1)
    epochs: int = Field(default=30, ge=0)
    batch_size: int = Field(default=64, ge=1)
    seed: int = Field(default=0, ge=0, lt=SEED_LIMIT)
    dev_eval_limit: int | None = Field(default=None, ge=1)


class GenConfig(_Strict):
    n_entities: int = Field(default=200, ge=3)
    n_relations: int = Field(default=8, ge=1)
    n_train: int = Field(default=3000, ge=1)
    n_dev: int = Field(default=300, ge=0)
    n_test: int = Field(default=300, ge=0)
    n_images: int = Field(default=10, ge=1)
    n_regions: int = Field(default=8, ge=1)
    visual_dim: int = Field(default=32, ge=1)
    latent_dim: int = Field(default=16, ge=1)
    noise: float = Field(default=0.5, ge=0)
    cls_noise: float = Field(default=0.1, ge=0)
    signal_regions: int = Field(default=3, ge=0)
    top_k: int = Field(default=3, ge=1)
    seed: int = Field(default=0, ge=0, lt=SEED_LIMIT)


class PruneConfig(_Strict):
    k_p: int | None = Field(default=None, ge=0)
    samples: int = Field(default=1000, ge=1)
    mode: Literal['mean', 'sample'] = 'mean'
    freeze_wc: bool = False
    finetune_epochs: int = Field(default=2, ge=0)


class BenchConfig(_Strict):
    seq_len: int = Field(default=512, ge=1)
    reps: int = Field(default=20, ge=1)
    warmup: int = Field(default=3, ge=0)


class EvalConfig(_Strict):
    split: Literal['train', 'dev', 'test'] = 'test'
    filtered: bool = True
    write_ranks_csv: bool = True


class AblationFlags(_Strict):
    no_image_view: bool = False
    no_text_view: bool = False
    no_mvtc: bool = False
    no_pruning: bool = False
    no_linear_comp: bool = False
    zero_init_wc: bool = False
    plain_head: bool = False


class SweepConfig(_Strict):
    lr_grid: list[float] = Field(default_factory=lambda: list(LR_GRID))
    k_p_values: list[int] | None = None
    max_parallel: int = Field(default=1, ge=1)


class PathsConfig(_Strict):
    dataset_dir: str = 'dataset'
    checkpoint: str = 'checkpoints/model.elm'
    pruned_checkpoint: str = 'checkpoints/pruned.elm'
    reports_dir: str = 'reports'


class ExperimentConfig(_Strict):
    paths: PathsConfig = Field(default_factory=PathsConfig)
    model: ArchConfig = Field(default_factory=ArchConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    gen: GenConfig = Field(default_factory=GenConfig)
    prune: PruneConfig = Field(default_factory=PruneConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    ablation: AblationFlags = Field(default_factory=AblationFlags)
    sweep: SweepConfig = Field(default_factory=SweepConfig)

    # Кількість шарів, що прунінгуються (за замовчуванням L/2)
    @property
    def k_p(self) -> int:
        if self.prune.k_p is None:
            return self.model.n_layers // 2
        return self.prune.k_p

    def resolve(self, root: Path, relative: str) -> Path:
        path = Path(relative)
        return path if path.is_absolute() else root / path


# Функція для перевірки узгодженості полів конфігурації між секціями
def validate_experiment(config: ExperimentConfig) -> ExperimentConfig:
    arch, gen, flags = config.model, config.gen, config.ablation
    if arch.d_model % arch.n_heads:
        raise ConfigError('model.n_heads', f"d_model={arch.d_model} is not divisible by n_heads={arch.n_heads}")
    if config.k_p > arch.n_layers:
        raise ConfigError('prune.k_p', f"cannot prune {config.k_p} of {arch.n_layers} layers")
    if config.bench.reps < 10:
        raise ConfigError('bench.reps', f"at least 10 repetitions required, got {config.bench.reps}")
    if config.train.negatives >= gen.n_entities - 1:
        raise ConfigError('train.negatives', f"{config.train.negatives} negatives need more than {gen.n_entities} entities")
    if gen.signal_regions > gen.n_regions:
        raise ConfigError('gen.signal_regions', f"{gen.signal_regions} signal regions exceed {gen.n_regions} regions")
    if flags.no_mvtc:
        needed = gen.n_images * (gen.n_regions + 1) + TEXT_TOKENS_PER_QUERY
        if arch.max_seq < needed:
            raise ConfigError('model.max_seq', f"no_mvtc needs max_seq >= {needed}, got {arch.max_seq}")
    else:
        needed = 2 * arch.n_heads + TEXT_TOKENS_PER_QUERY
        if arch.max_seq < needed:
            raise ConfigError('model.max_seq', f"sequence of {needed} tokens exceeds max_seq={arch.max_seq}")
    if flags.no_image_view and flags.no_text_view and not flags.no_mvtc:
        logger.warning("Обидва види MVTC вимкнено: голова працюватиме лише з текстом")
    if config.sweep.k_p_values is not None:
        for i, k in enumerate(config.sweep.k_p_values):
            if not 0 <= k <= arch.n_layers:
                raise ConfigError(f'sweep.k_p_values.{i}', f"k_p={k} outside [0, {arch.n_layers}]")
    return config


# Функція для розбору значення з --set (JSON, інакше рядок)
def parse_override_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_override(document: dict, assignment: str) -> None:
    if '=' not in assignment:
        raise ConfigError(assignment, "override must have the form key.path=value")
    key_path, raw = assignment.split('=', 1)
    keys = key_path.strip().split('.')
    node = document
    for key in keys[:-1]:
        child = node.setdefault(key, {})
        if not isinstance(child, dict):
            raise ConfigError(key_path, f"'{key}' is not a section")
        node = child
    node[keys[-1]] = parse_override_value(raw)


# Функція для завантаження конфігурації експерименту з JSON та перевизначень
def load_experiment_config(path: str | Path | None = None, overrides=(), seed: int | None = None) -> ExperimentConfig:
    document: dict = {}
    if path is not None:
        try:
            with open(path, 'r', encoding='utf-8') as file:
                document = json.load(file)
        except FileNotFoundError:
            raise ConfigError('--config', f"file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError('--config', f"invalid JSON: {e}")
        if not isinstance(document, dict):
            raise ConfigError('--config', "top-level JSON value must be an object")

    for assignment in overrides:
        apply_override(document, assignment)
    if seed is not None:
        document.setdefault('gen', {})['seed'] = seed
        document.setdefault('train', {})['seed'] = seed

    try:
        config = ExperimentConfig.model_validate(document)
    except ValidationError as e:
        first = e.errors()[0]
        key_path = '.'.join(str(part) for part in first['loc']) or '<root>'
        raise ConfigError(key_path, first['msg'])
    return validate_experiment(config)
