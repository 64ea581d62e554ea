import platform
import statistics
import time
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
import torch
from pydantic import BaseModel, Field
from tqdm import tqdm

from .config import logger
from .exceptions import InvalidArgumentError, RankingInternalError
from .funcs import write_csv
from .model import DTYPE, HiddenStates, Modality
from .numerics import SeededRng


class QueryRank(BaseModel):
    query_id: int
    direction: str
    rank: int


class EvalReport(BaseModel):
    mr: float
    hits1: float
    hits3: float
    hits10: float
    n_queries: int
    split: str
    filtered: bool
    ranks: list[QueryRank] = Field(default_factory=list)
    config: dict = Field(default_factory=dict)
    config_hash: str | None = None

    def metrics(self) -> dict:
        return {'mr': self.mr, 'hits1': self.hits1, 'hits3': self.hits3, 'hits10': self.hits10}


class LatencyStats(BaseModel):
    label: str
    seq_len: int
    reps: int
    mean_seconds: float
    median_seconds: float
    p95_seconds: float
    std_seconds: float
    attention_time_share: float | None = None
    n_pruned: int
    attention_flops: int
    compensation_flops: int
    total_flops: int


class LatencyReport(BaseModel):
    configurations: list[LatencyStats]
    speedup: float
    speedup_noise_band: float
    attention_flop_ratio: float
    environment: dict
    config_hash: str | None = None


# Ранг цілі: 1 + строго кращі + рівні з меншим id (фільтровані не конкурують)
def rank_query(scores, target: int, filter_ids: Iterable[int] = ()) -> int:
    scores = np.asarray(scores, dtype=np.float64)
    filter_ids = np.fromiter(filter_ids, dtype=np.int64)
    if np.any(filter_ids == target):
        raise RankingInternalError(f"target {target} must never be filtered")
    contenders = np.ones(scores.shape[0], dtype=bool)
    contenders[filter_ids] = False
    value = scores[target]
    higher = (scores > value) & contenders
    ties = (scores == value) & contenders & (np.arange(scores.shape[0]) < target)
    return 1 + int(higher.sum()) + int(ties.sum())


def summarize_ranks(ranks: list[int]) -> dict:
    values = np.asarray(ranks, dtype=np.float64)
    return {
        'mr': float(values.mean()),
        'hits1': float(np.mean(values <= 1)),
        'hits3': float(np.mean(values <= 3)),
        'hits10': float(np.mean(values <= 10)),
    }


# Оцінювання за довільними скорами (модель, оракул чи випадковий скорер)
def evaluate_scores(queries, scores: np.ndarray, truths: dict, filtered: bool, split: str = 'custom') -> EvalReport:
    if not len(queries):
        raise InvalidArgumentError(f"split '{split}' has no queries to evaluate")
    ranks = []
    for position, (query, row) in enumerate(zip(queries, scores)):
        filter_ids = ()
        if filtered:
            filter_ids = sorted(truths.get((query.known, query.relation), frozenset()) - {query.target})
        ranks.append(QueryRank(query_id=position // 2, direction=query.direction,
                               rank=rank_query(row, query.target, filter_ids)))
    summary = summarize_ranks([item.rank for item in ranks])
    return EvalReport(**summary, n_queries=len(ranks), split=split, filtered=filtered, ranks=ranks)


@torch.no_grad()
def score_queries(model, dataset, queries, batch_size: int = 256) -> np.ndarray:
    model.eval()
    rows = []
    for start in range(0, len(queries), batch_size):
        batch = dataset.collate(queries[start:start + batch_size])
        rows.append(model.score(batch).numpy())
    return np.concatenate(rows) if rows else np.empty((0, dataset.n_entities))


def evaluate(model, dataset, split: str, filtered: bool = True, limit: int | None = None,
             batch_size: int = 256) -> EvalReport:
    queries = dataset.queries(split)
    if limit is not None:
        queries = queries[:2 * limit]
    scores = score_queries(model, dataset, queries, batch_size)
    report = evaluate_scores(queries, scores, dataset.known_truths, filtered, split)
    report.config = {'model': model.config.model_dump(mode='json'), 'pruned_layers': model.pruned_layers()}
    logger.info(f"Оцінка {split} ({'filtered' if filtered else 'raw'}): MR={report.mr:.2f}, "
                f"Hits@1={report.hits1:.3f}, Hits@3={report.hits3:.3f}, Hits@10={report.hits10:.3f}")
    return report


def write_ranks_csv(report: EvalReport, path: str | Path) -> Path:
    return write_csv(path, ['query_id', 'direction', 'rank'],
                     ((item.query_id, item.direction, item.rank) for item in report.ranks))


# Аналітичні FLOP одного шару для послідовності довжини s
def layer_flops(d_model: int, mlp_ratio: int, seq_len: int) -> dict[str, int]:
    s, d = seq_len, d_model
    return {
        'attention': 8 * s * d * d + 4 * s * s * d,
        'mlp': 4 * s * d * mlp_ratio * d,
        'compensation': 2 * s * d * d,
    }


def model_flops(model, seq_len: int) -> dict[str, int]:
    config = model.config
    per_layer = layer_flops(config.d_model, config.mlp_ratio, seq_len)
    attention = compensation = 0
    for block in model.blocks:
        if not block.pruned:
            attention += per_layer['attention']
        elif block.compensation is not None:
            compensation += per_layer['compensation']
    mlp = per_layer['mlp'] * config.n_layers
    return {'attention': attention, 'compensation': compensation, 'total': attention + compensation + mlp}


def attention_flop_ratio(model_unpruned, model_pruned) -> float:
    n_layers = model_unpruned.config.n_layers
    if n_layers == 0:
        return 1.0
    kept = n_layers - len(model_pruned.pruned_layers())
    return kept / n_layers


def _timed(fn: Callable[[], object]) -> float:
    started = time.perf_counter()
    fn()
    return time.perf_counter() - started


# Частка часу уваги, виміряна хуками на модулях уваги
def measure_attention_share(model, states: HiddenStates, reps: int) -> float:
    spent = [0.0]
    marks = {}

    def before(module, inputs):
        marks[id(module)] = time.perf_counter()

    def after(module, inputs, output):
        spent[0] += time.perf_counter() - marks.pop(id(module))

    handles = []
    for block in model.blocks:
        if not block.pruned:
            handles.append(block.attn.register_forward_pre_hook(before))
            handles.append(block.attn.register_forward_hook(after))
    try:
        total = sum(_timed(lambda: model.forward_hidden(states)) for _ in range(reps))
    finally:
        for handle in handles:
            handle.remove()
    return spent[0] / total if total > 0 else 0.0


def _stats(label: str, model, times: list[float], seq_len: int, share: float | None) -> LatencyStats:
    flops = model_flops(model, seq_len)
    return LatencyStats(
        label=label, seq_len=seq_len, reps=len(times),
        mean_seconds=statistics.fmean(times), median_seconds=statistics.median(times),
        p95_seconds=float(np.percentile(times, 95)), std_seconds=statistics.pstdev(times),
        attention_time_share=share, n_pruned=len(model.pruned_layers()),
        attention_flops=flops['attention'], compensation_flops=flops['compensation'], total_flops=flops['total'],
    )


def environment_info() -> dict:
    return {
        'platform': platform.platform(),
        'machine': platform.machine(),
        'processor': platform.processor(),
        'python': platform.python_version(),
        'numpy': np.__version__,
        'torch': torch.__version__,
        'threads': torch.get_num_threads(),
    }


# Функція для порівняння часу проходу стеку блоків до і після прунінгу (один потік)
@torch.inference_mode()
def bench_latency(model_unpruned, model_pruned, seq_len: int, reps: int, warmup: int = 3,
                  seed: int = 0) -> LatencyReport:
    if reps < 10:
        raise InvalidArgumentError(f"at least 10 repetitions required, got {reps}")
    base = model_unpruned.config.model_dump()
    if model_pruned.config.model_dump() != base:
        raise InvalidArgumentError("benchmarked models must share one ModelConfig")

    hidden = torch.from_numpy(SeededRng(seed).child('bench-input').normal((seq_len, model_unpruned.config.d_model)))
    states = HiddenStates(hidden.to(DTYPE), (Modality.TEXT,) * seq_len)
    previous_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        for _ in range(warmup):
            model_unpruned.forward_hidden(states)
            model_pruned.forward_hidden(states)
        times_unpruned, times_pruned = [], []
        # Чергування вимірювань зменшує вплив дрейфу частоти процесора
        for _ in tqdm(range(reps), desc='bench', leave=False, disable=None):
            times_unpruned.append(_timed(lambda: model_unpruned.forward_hidden(states)))
            times_pruned.append(_timed(lambda: model_pruned.forward_hidden(states)))
        share_unpruned = measure_attention_share(model_unpruned, states, reps)
        share_pruned = measure_attention_share(model_pruned, states, reps)
        environment = environment_info()
    finally:
        torch.set_num_threads(previous_threads)

    unpruned = _stats('unpruned', model_unpruned, times_unpruned, seq_len, share_unpruned)
    pruned = _stats('pruned', model_pruned, times_pruned, seq_len, share_pruned)
    speedup = unpruned.mean_seconds / pruned.mean_seconds
    relative = np.hypot(unpruned.std_seconds / unpruned.mean_seconds, pruned.std_seconds / pruned.mean_seconds)
    report = LatencyReport(
        configurations=[unpruned, pruned],
        speedup=speedup,
        speedup_noise_band=float(speedup * relative / np.sqrt(reps)),
        attention_flop_ratio=attention_flop_ratio(model_unpruned, model_pruned),
        environment=environment,
    )
    logger.info(f"Бенчмарк seq_len={seq_len}: прискорення {speedup:.3f}x "
                f"(±{report.speedup_noise_band:.3f}), FLOP уваги {report.attention_flop_ratio:.3f}")
    return report
