import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn
from tqdm import tqdm

from .bench import evaluate
from .config import ModelConfig, TrainConfig, logger
from .data import MkgDataset, Query, QueryBatch
from .exceptions import InvalidArgumentError, TrainingDivergedError
from .funcs import write_jsonl
from .model import DTYPE, HiddenStates
from .numerics import SeededRng

PROB_CLAMP = 1e-12


# Середнє по рядках токенів, відмічених маскою спана
def _span_mean(rows: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    weights = mask.to(DTYPE)
    counts = weights.sum(dim=-1, keepdim=True)
    if torch.any(counts == 0):
        raise InvalidArgumentError("empty entity or relation span")
    return (weights.unsqueeze(-1) * rows).sum(dim=-2) / counts


# Голова доповнення: E_m = [E_image, E_entity, E_relation] -> афінне -> GELU -> афінне -> сигмоїда
class CompletionHead(nn.Module):

    def __init__(self, config: ModelConfig):
        super().__init__()
        width = 3 * config.d_model
        self.fc1 = nn.Linear(width, width, dtype=DTYPE)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(width, config.n_entities, dtype=DTYPE)
        self._warned_fallback = False

    def fuse(self, states: HiddenStates, entity_mask: torch.Tensor, relation_mask: torch.Tensor) -> torch.Tensor:
        hidden, n_visual = states.hidden, states.n_visual
        if n_visual:
            e_image = hidden[..., :n_visual, :].max(dim=-2).values
        else:
            if not self._warned_fallback:
                logger.warning("Немає візуальних рядків: голова працює лише з текстом (E_image = 0)")
                self._warned_fallback = True
            e_image = torch.zeros_like(hidden[..., 0, :])
        text = hidden[..., n_visual:, :]
        return torch.cat([e_image, _span_mean(text, entity_mask), _span_mean(text, relation_mask)], dim=-1)

    def logits(self, states: HiddenStates, entity_mask: torch.Tensor, relation_mask: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(self.fuse(states, entity_mask, relation_mask))))

    def forward(self, states: HiddenStates, entity_mask: torch.Tensor, relation_mask: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(states, entity_mask, relation_mask))


# Звичайна голова: одне афінне відображення з останньої позиції послідовності
class PlainHead(nn.Module):

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.fc = nn.Linear(config.d_model, config.n_entities, dtype=DTYPE)

    def logits(self, states: HiddenStates, entity_mask=None, relation_mask=None) -> torch.Tensor:
        return self.fc(states.hidden[..., -1, :])

    def forward(self, states: HiddenStates, entity_mask=None, relation_mask=None) -> torch.Tensor:
        return torch.sigmoid(self.logits(states))


def completion_head(model, states: HiddenStates, entity_mask, relation_mask) -> torch.Tensor:
    return model.head(states, entity_mask, relation_mask)


# Вибірка негативів: known завжди присутній як жорсткий негатив, target виключено
def sample_negatives(query: Query, rng: SeededRng, n: int, n_entities: int) -> np.ndarray:
    if n < 1:
        raise InvalidArgumentError(f"negative count must be >= 1, got {n}")
    if n_entities < 3:
        raise InvalidArgumentError(f"negative sampling needs at least 3 entities, got {n_entities}")
    if n >= n_entities:
        raise InvalidArgumentError(f"cannot draw {n} negatives from {n_entities} entities")
    if query.known == query.target:
        raise InvalidArgumentError(f"query {query} has its known entity as target")
    candidates = np.delete(np.arange(n_entities), sorted((query.known, query.target)))
    others = rng.choice(candidates, n - 1) if n > 1 else np.empty(0, dtype=np.int64)
    return np.concatenate([[query.known], others]).astype(np.int64)


# Функція втрати: середнє по запитах від -log p_target - mean_neg log(1 - p_neg) (бінарна крос-ентропія),
# ймовірності затискаються до [1e-12, 1 - 1e-12]
def completion_loss(p: torch.Tensor, target: torch.Tensor, negatives: torch.Tensor) -> torch.Tensor:
    p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    target = torch.as_tensor(target, dtype=torch.long)
    negatives = torch.as_tensor(negatives, dtype=torch.long)
    p_target = p.gather(-1, target.unsqueeze(-1)).squeeze(-1)
    p_negative = p.gather(-1, negatives)
    per_query = -torch.log(p_target) - torch.log1p(-p_negative).mean(dim=-1)
    return per_query.mean()


def draw_negatives(batch: QueryBatch, rng: SeededRng, n: int, n_entities: int) -> torch.Tensor:
    return torch.from_numpy(np.stack([sample_negatives(q, rng, n, n_entities) for q in batch.queries]))


def batch_loss(model, batch: QueryBatch, negatives: torch.Tensor) -> torch.Tensor:
    p, _, _ = model(batch)
    return completion_loss(p, batch.target, negatives)


# Градієнти втрати за всіма параметрами, що навчаються (заморожені відсутні)
def compute_gradients(model, batch: QueryBatch, negatives: torch.Tensor) -> dict[str, torch.Tensor]:
    named = [(name, p) for name, p in model.named_parameters() if p.requires_grad]
    loss = batch_loss(model, batch, negatives)
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
    return {
        name: grad.contiguous() if grad is not None else torch.zeros_like(p)
        for (name, p), grad in zip(named, grads)
    }


@dataclass
class TrainResult:
    model: nn.Module
    log: list[dict] = field(default_factory=list)


# Функція для навчання Adam на запитах обох напрямків; негативи та порядок батчів залежать лише від config.seed
def train(model, dataset: MkgDataset, config: TrainConfig, log_path: str | Path | None = None,
          epochs: int | None = None, stream: str = 'train') -> TrainResult:
    epochs = config.epochs if epochs is None else epochs
    rng = SeededRng(config.seed).child(stream)
    parameters = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(
        parameters, lr=config.lr, betas=(config.beta1, config.beta2), eps=config.eps,
        weight_decay=config.weight_decay, foreach=False,
    )
    queries = dataset.queries('train')
    if not queries:
        raise InvalidArgumentError("train split is empty")
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        Path(log_path).write_text('', encoding='utf-8')

    result = TrainResult(model)
    last_finite = None
    for epoch in range(1, epochs + 1):
        started = time.perf_counter()
        epoch_rng = rng.child(f'epoch-{epoch}')
        order = epoch_rng.permutation(len(queries))
        negative_rng = epoch_rng.child('negatives')
        model.train()
        total, seen = 0.0, 0
        starts = range(0, len(queries), config.batch_size)
        for step, start in enumerate(tqdm(starts, desc=f'{stream} epoch {epoch}', leave=False, disable=None)):
            batch = dataset.collate([queries[i] for i in order[start:start + config.batch_size]])
            negatives = draw_negatives(batch, negative_rng, config.negatives, dataset.n_entities)
            optimizer.zero_grad(set_to_none=True)
            loss = batch_loss(model, batch, negatives)
            if not torch.isfinite(loss):
                logger.error(f"Втрата стала нескінченною на епосі {epoch}, крок {step}")
                raise TrainingDivergedError(epoch, step, last_finite)
            loss.backward()
            optimizer.step()
            last_finite = float(loss)
            total += last_finite * len(batch)
            seen += len(batch)

        record = {'epoch': epoch, 'loss': total / seen}
        if len(dataset.splits['dev']):
            report = evaluate(model, dataset, 'dev', filtered=True, limit=config.dev_eval_limit)
            record.update(dev_MR=report.mr, dev_hits1=report.hits1, dev_hits3=report.hits3, dev_hits10=report.hits10)
        else:
            record.update(dev_MR=None, dev_hits1=None, dev_hits3=None, dev_hits10=None)
        record['wall_seconds'] = time.perf_counter() - started
        result.log.append(record)
        if log_path is not None:
            write_jsonl(log_path, [record], append=True)
        logger.info(f"Епоха {epoch}: loss={record['loss']:.4f}, dev Hits@10={record['dev_hits10']}")
    model.eval()
    return result
