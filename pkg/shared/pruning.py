import copy
from dataclasses import dataclass, field
from typing import Literal, NamedTuple

import numpy as np
import torch

from .config import logger
from .data import MkgDataset, Query
from .exceptions import InvalidArgumentError
from .mvtc import compress
from .numerics import SeededRng, lstsq_min_norm, rowwise_cosine

EstimationMode = Literal['mean', 'sample']
InitStrategy = Literal['least-squares', 'zero', 'none']


@dataclass
class SimilarityProfile:
    similarities: list[float]
    samples: int
    degenerate_rows: int = 0

    def to_json(self) -> dict:
        return {'similarities': self.similarities, 'samples': self.samples, 'degenerate_rows': self.degenerate_rows}


# Накопичувач сум косинусної подібності по шарах; merge асоціативний
class SimilarityAccumulator:

    def __init__(self, n_layers: int):
        self.sums = np.zeros(n_layers)
        self.counts = np.zeros(n_layers, dtype=np.int64)
        self.degenerate = 0
        self.samples = 0

    def update(self, trace) -> None:
        for layer in range(len(self.sums)):
            for attn_input, attn_output in trace.pairs(layer):
                values, degenerate = rowwise_cosine(attn_input.numpy(), attn_output.numpy())
                self.sums[layer] += values.sum()
                self.counts[layer] += values.shape[0]
                self.degenerate += degenerate

    def merge(self, other: 'SimilarityAccumulator') -> 'SimilarityAccumulator':
        merged = SimilarityAccumulator(len(self.sums))
        merged.sums = self.sums + other.sums
        merged.counts = self.counts + other.counts
        merged.degenerate = self.degenerate + other.degenerate
        merged.samples = self.samples + other.samples
        return merged

    def profile(self) -> SimilarityProfile:
        means = np.divide(self.sums, self.counts, out=np.zeros_like(self.sums), where=self.counts > 0)
        return SimilarityProfile([float(v) for v in np.clip(means, -1.0, 1.0)], self.samples, self.degenerate)


def similarity_from_trace(trace, n_layers: int) -> SimilarityProfile:
    accumulator = SimilarityAccumulator(n_layers)
    accumulator.update(trace)
    return accumulator.profile()


# Вибірка S запитів з навчальної частини (усі, якщо S більше)
def sample_training_queries(dataset: MkgDataset, samples: int, rng: SeededRng) -> list[Query]:
    queries = dataset.queries('train')
    if not queries:
        raise InvalidArgumentError("cannot profile on an empty train split")
    if samples < 1:
        raise InvalidArgumentError(f"sample count must be >= 1, got {samples}")
    if samples >= len(queries):
        return queries
    return [queries[i] for i in np.sort(rng.choice(len(queries), samples))]


@torch.no_grad()
def profile_attention_similarity(model, dataset: MkgDataset, samples: int, rng: SeededRng,
                                 batch_size: int = 128) -> SimilarityProfile:
    queries = sample_training_queries(dataset, samples, rng)
    accumulator = SimilarityAccumulator(model.config.n_layers)
    for start in range(0, len(queries), batch_size):
        batch = dataset.collate(queries[start:start + batch_size])
        _, trace = model.forward_hidden(compress(batch, model), trace=True)
        accumulator.update(trace)
        accumulator.samples += len(batch)
    profile = accumulator.profile()
    for layer, value in enumerate(profile.similarities):
        logger.info(f"Шар {layer}: косинусна подібність входу/виходу уваги {value:.4f}")
    return profile


# Top-K_p шарів з найбільшою подібністю; при рівності менший індекс першим
def select_prune_layers(profile: SimilarityProfile, k_p: int) -> list[int]:
    n_layers = len(profile.similarities)
    if not 0 <= k_p <= n_layers:
        raise InvalidArgumentError(f"k_p={k_p} outside [0, {n_layers}]")
    ranked = sorted(range(n_layers), key=lambda layer: (-profile.similarities[layer], layer))
    return sorted(ranked[:k_p])


@dataclass
class ErrorSample:
    design: np.ndarray      # x̄^pruning (1×D) або стос рядків (S'×D)
    target: np.ndarray      # ε̄ (1×D) або стос рядків (S'×D)
    mode: EstimationMode = 'mean'

    def __post_init__(self):
        self.design = np.atleast_2d(np.asarray(self.design, dtype=np.float64))
        self.target = np.atleast_2d(np.asarray(self.target, dtype=np.float64))
        if self.design.shape != self.target.shape:
            raise InvalidArgumentError(f"design {self.design.shape} and target {self.target.shape} differ")
        if self.mode == 'mean' and self.design.shape[0] != 1:
            raise InvalidArgumentError("mean mode expects single mean vectors")


class CompensationFit(NamedTuple):
    w_c: np.ndarray
    degenerate: bool


def mean_compensation_closed_form(x_bar, e_bar) -> np.ndarray:
    x_bar, e_bar = np.ravel(x_bar), np.ravel(e_bar)
    return np.outer(x_bar, e_bar) / (x_bar @ x_bar)


# W_c = pinv(X)·E: мінімум ||X W_c − E|| з мінімальною нормою Фробеніуса
def estimate_compensation(sample: ErrorSample) -> CompensationFit:
    if sample.mode == 'mean' and not np.any(sample.design):
        logger.warning("Середній вектор x̄ нульовий: W_c = 0")
        width = sample.design.shape[1]
        return CompensationFit(np.zeros((width, sample.target.shape[1])), True)
    return CompensationFit(lstsq_min_norm(sample.design, sample.target), False)


# residual_* рахується по всіх рядках ε (ця похибка переходить у вищі шари),
# objective_* у власній цілі оцінювача (у режимі mean це пара середніх векторів)
@dataclass
class LayerCompensation:
    layer: int
    residual_pre: float
    residual_post: float
    objective_pre: float
    objective_post: float
    rows: int
    degenerate: bool = False
    w_c: np.ndarray | None = field(default=None, repr=False)

    @property
    def increased(self) -> bool:
        return self.residual_post > self.residual_pre

    def to_json(self) -> dict:
        return {
            'layer': self.layer, 'residual_pre': self.residual_pre, 'residual_post': self.residual_post,
            'objective_pre': self.objective_pre, 'objective_post': self.objective_post,
            'rows': self.rows, 'degenerate': self.degenerate, 'increased': self.increased,
        }


@dataclass
class CompensationPlan:
    layers: list[int]
    mode: EstimationMode
    init: InitStrategy = 'least-squares'
    trainable: bool = True
    entries: list[LayerCompensation] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            'layers': self.layers, 'mode': self.mode, 'init': self.init, 'trainable': self.trainable,
            'entries': [entry.to_json() for entry in self.entries],
        }


@torch.no_grad()
def collect_error_rows(model, reference, dataset: MkgDataset, queries: list[Query], layer: int,
                       batch_size: int = 128) -> tuple[np.ndarray, np.ndarray]:
    # Рядки (x̂, ε) на межі уваги шару: x̂ є входом пруненого шляху після LN,
    # ε = оригінальний потік після половини уваги мінус прунений потік на вході шару
    designs, targets = [], []
    for start in range(0, len(queries), batch_size):
        batch = dataset.collate(queries[start:start + batch_size])
        _, pruned_trace = model.forward_hidden(compress(batch, model), trace=True, trace_layers={layer})
        _, original_trace = reference.forward_hidden(compress(batch, reference), trace=True, trace_layers={layer})
        pruned_record = pruned_trace.layers[layer][0]
        original_record = original_trace.layers[layer][0]
        width = pruned_record.attn_input.shape[-1]
        designs.append(pruned_record.attn_input.reshape(-1, width).numpy())
        targets.append((original_record.residual_out - pruned_record.residual_in).reshape(-1, width).numpy())
    return np.concatenate(designs), np.concatenate(targets)


def fit_all_compensations(model, dataset: MkgDataset, layers: list[int], samples: int, mode: EstimationMode,
                          rng: SeededRng, init: InitStrategy = 'least-squares', trainable: bool = True,
                          batch_size: int = 128) -> CompensationPlan:
    # Знизу вгору: W_c шару встановлюється до того, як збираються рядки для наступного
    if any(b <= a for a, b in zip(layers, layers[1:])):
        raise InvalidArgumentError(f"layers must be strictly increasing, got {layers}")
    if layers and not (0 <= layers[0] and layers[-1] < model.config.n_layers):
        raise InvalidArgumentError(f"layer indices {layers} outside [0, {model.config.n_layers})")
    plan = CompensationPlan(list(layers), mode, init, trainable)
    if not layers:
        return plan

    reference = copy.deepcopy(model)
    queries = sample_training_queries(dataset, samples, rng)
    for layer in layers:
        block = model.blocks[layer]
        if init == 'none':
            block.prune(None)
            logger.info(f"Шар {layer}: увагу видалено без компенсації")
            continue
        x_rows, e_rows = collect_error_rows(model, reference, dataset, queries, layer, batch_size)
        if mode == 'mean':
            sample = ErrorSample(x_rows.mean(axis=0), e_rows.mean(axis=0), 'mean')
        else:
            sample = ErrorSample(x_rows, e_rows, 'sample')
        if init == 'zero':
            fit = CompensationFit(np.zeros((x_rows.shape[1], e_rows.shape[1])), False)
        else:
            fit = estimate_compensation(sample)
        entry = LayerCompensation(
            layer=layer,
            residual_pre=float(np.linalg.norm(e_rows)),
            residual_post=float(np.linalg.norm(x_rows @ fit.w_c - e_rows)),
            objective_pre=float(np.linalg.norm(sample.target)),
            objective_post=float(np.linalg.norm(sample.design @ fit.w_c - sample.target)),
            rows=int(x_rows.shape[0]),
            degenerate=fit.degenerate,
            w_c=fit.w_c,
        )
        block.prune(torch.from_numpy(fit.w_c), trainable=trainable)
        plan.entries.append(entry)
        logger.info(f"Шар {layer}: залишок по рядках {entry.residual_pre:.4f} -> {entry.residual_post:.4f} "
                    f"(ціль оцінювача {entry.objective_pre:.4f} -> {entry.objective_post:.4f})")
        if entry.increased:
            logger.warning(f"Шар {layer}: компенсація ({mode}) збільшила залишок по рядках")
    return plan


def prune_model(model, dataset: MkgDataset, k_p: int, samples: int, mode: EstimationMode, rng: SeededRng,
                init: InitStrategy = 'least-squares', trainable: bool = True,
                profile: SimilarityProfile | None = None) -> tuple[SimilarityProfile, CompensationPlan]:
    if profile is None:
        profile = profile_attention_similarity(model, dataset, samples, rng.child('profile'))
    layers = select_prune_layers(profile, k_p)
    logger.info(f"Прунінг шарів уваги: {layers}")
    plan = fit_all_compensations(model, dataset, layers, samples, mode, rng.child('compensation'), init, trainable)
    return profile, plan
