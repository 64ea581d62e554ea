import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import torch
from torch import nn

from .config import ModelConfig, logger
from .exceptions import InvalidArgumentError
from .numerics import SeededRng

DTYPE = torch.float64


class Modality(str, Enum):
    IMAGE_VIEW = 'visual-image-view'
    TEXT_VIEW = 'visual-text-view'
    RAW_VISUAL = 'visual-uncompressed'
    TEXT = 'text'

    @property
    def is_visual(self) -> bool:
        return self is not Modality.TEXT


@dataclass
class HiddenStates:
    hidden: torch.Tensor                 # [..., seq_len, D]
    tags: tuple[Modality, ...]           # модальність кожної позиції

    @property
    def n_visual(self) -> int:
        return sum(1 for tag in self.tags if tag.is_visual)

    @property
    def seq_len(self) -> int:
        return self.hidden.shape[-2]


@dataclass
class AttentionRecord:
    attn_input: torch.Tensor     # вхід підшару уваги після LN
    attn_output: torch.Tensor    # вихід уваги до додавання залишку
    residual_in: torch.Tensor    # залишковий потік перед половиною уваги
    residual_out: torch.Tensor   # залишковий потік після половини уваги


@dataclass
class ActivationTrace:
    layers: dict[int, list[AttentionRecord]] = field(default_factory=dict)

    def record(self, layer: int, entry: AttentionRecord) -> None:
        self.layers.setdefault(layer, []).append(entry)

    # Пари (вхід, вихід) уваги по одному на кожний приклад
    def pairs(self, layer: int):
        for entry in self.layers.get(layer, []):
            inputs, outputs = entry.attn_input, entry.attn_output
            if inputs.dim() == 2:
                yield inputs, outputs
            else:
                for i in range(inputs.shape[0]):
                    yield inputs[i], outputs[i]


# Двонаправлена багатоголова увага (scaled dot-product), без маски
class SelfAttention(nn.Module):

    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.w_q = nn.Linear(d_model, d_model, dtype=DTYPE)
        self.w_k = nn.Linear(d_model, d_model, dtype=DTYPE)
        self.w_v = nn.Linear(d_model, d_model, dtype=DTYPE)
        self.w_o = nn.Linear(d_model, d_model, dtype=DTYPE)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        *lead, s, _ = x.shape
        return x.reshape(*lead, s, self.n_heads, self.head_dim).transpose(-2, -3)

    def forward(self, x: torch.Tensor, return_weights: bool = False):
        *lead, s, d_model = x.shape
        q, k, v = self._split(self.w_q(x)), self._split(self.w_k(x)), self._split(self.w_v(x))
        weights = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.head_dim), dim=-1)
        context = (weights @ v).transpose(-2, -3).reshape(*lead, s, d_model)
        out = self.w_o(context)
        if return_weights:
            return out, weights
        return out


class Block(nn.Module):

    def __init__(self, config: ModelConfig):
        super().__init__()
        d_model = config.d_model
        self.ln1 = nn.LayerNorm(d_model, eps=config.ln_eps, dtype=DTYPE)
        self.attn = SelfAttention(d_model, config.n_heads)
        self.ln2 = nn.LayerNorm(d_model, eps=config.ln_eps, dtype=DTYPE)
        self.mlp = nn.Sequential(
            nn.Linear(d_model, config.mlp_ratio * d_model, dtype=DTYPE),
            nn.GELU(),
            nn.Linear(config.mlp_ratio * d_model, d_model, dtype=DTYPE),
        )
        self.pruned = False
        self.register_parameter('compensation', None)

    # Заміна уваги на x̂·W_c (або на чистий залишковий пропуск без W_c)
    def prune(self, w_c: torch.Tensor | None, trainable: bool = True) -> None:
        self.pruned = True
        if w_c is None:
            self.compensation = None
        else:
            self.compensation = nn.Parameter(w_c.detach().to(DTYPE).clone(), requires_grad=trainable)

    def attention_half(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        x_hat = self.ln1(x)
        if not self.pruned:
            return x_hat, self.attn(x_hat)
        if self.compensation is None:
            return x_hat, torch.zeros_like(x_hat)
        return x_hat, x_hat @ self.compensation

    def forward(self, x: torch.Tensor, trace: ActivationTrace | None = None, index: int = 0) -> torch.Tensor:
        if self.pruned and self.compensation is None and trace is None:
            mid = x
        else:
            x_hat, delta = self.attention_half(x)
            mid = x + delta
            if trace is not None:
                trace.record(index, AttentionRecord(
                    x_hat.detach().clone(), delta.detach().clone(), x.detach().clone(), mid.detach().clone(),
                ))
        return mid + self.mlp(self.ln2(mid))


class ElmmModel(nn.Module):

    def __init__(self, config: ModelConfig):
        super().__init__()
        from .kgc import CompletionHead, PlainHead
        from .mvtc import MultiViewCompressor

        self.config = config
        self.token_embedding = nn.Embedding(config.vocab_size, config.d_model, dtype=DTYPE)
        self.position_embedding = nn.Parameter(torch.zeros(config.max_seq, config.d_model, dtype=DTYPE))
        self.visual_projection = nn.Linear(config.visual_dim, config.d_model, dtype=DTYPE)
        self.blocks = nn.ModuleList(Block(config) for _ in range(config.n_layers))
        self.mvtc = MultiViewCompressor(config)
        if config.head == 'plain':
            self.head = PlainHead(config)
        else:
            self.head = CompletionHead(config)

    # Вкладення текстових токенів T_t: embedding(id) + position(offset + i)
    def embed_text(self, token_ids, offset: int = 0) -> torch.Tensor:
        ids = torch.as_tensor(token_ids, dtype=torch.long)
        if ids.numel() and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise InvalidArgumentError(f"token id out of range [0, {self.config.vocab_size})")
        length = ids.shape[-1]
        if offset + length > self.config.max_seq:
            raise InvalidArgumentError(f"positions up to {offset + length} exceed max_seq={self.config.max_seq}")
        if length == 0:
            return torch.zeros(*ids.shape, self.config.d_model, dtype=DTYPE)
        return self.token_embedding(ids) + self.position_embedding[offset:offset + length]

    # Проєкція I_temp → I_t одним афінним відображенням
    def project_visual(self, visual: torch.Tensor) -> torch.Tensor:
        visual = torch.as_tensor(visual, dtype=DTYPE)
        if visual.shape[-1] != self.config.visual_dim:
            raise InvalidArgumentError(
                f"visual feature width {visual.shape[-1]} != visual_dim {self.config.visual_dim}"
            )
        if visual.dim() >= 2 and visual.shape[-2] != self.config.n_visual_tokens:
            raise InvalidArgumentError(
                f"expected {self.config.n_visual_tokens} visual rows, got {visual.shape[-2]}"
            )
        return self.visual_projection(visual)

    def forward_hidden(self, states: HiddenStates, trace: bool = False,
                       trace_layers: set[int] | None = None) -> tuple[HiddenStates, ActivationTrace | None]:
        x = states.hidden
        if x.shape[-2] > self.config.max_seq:
            raise InvalidArgumentError(f"sequence of {x.shape[-2]} tokens exceeds max_seq={self.config.max_seq}")
        activation_trace = ActivationTrace() if trace else None
        for index, block in enumerate(self.blocks):
            record = activation_trace if trace and (trace_layers is None or index in trace_layers) else None
            x = block(x, record, index)
        return HiddenStates(x, states.tags), activation_trace

    def forward(self, batch, trace: bool = False):
        from .mvtc import compress

        states = compress(batch, self)
        out, activation_trace = self.forward_hidden(states, trace=trace)
        probabilities = self.head(out, batch.entity_mask, batch.relation_mask)
        return probabilities, out, activation_trace

    # Логіти голови для ранжування (монотонні відносно p, без насичення сигмоїди)
    def score(self, batch) -> torch.Tensor:
        from .mvtc import compress

        out, _ = self.forward_hidden(compress(batch, self))
        return self.head.logits(out, batch.entity_mask, batch.relation_mask)

    def pruned_layers(self) -> list[int]:
        return [i for i, block in enumerate(self.blocks) if block.pruned]

    def compensations(self) -> dict[int, torch.Tensor | None]:
        return {i: self.blocks[i].compensation for i in self.pruned_layers()}


# Ініціалізація параметрів з SeededRng (кожен параметр має власний потік)
@torch.no_grad()
def init_parameters(model: ElmmModel, rng: SeededRng) -> ElmmModel:
    for name, parameter in model.named_parameters():
        stream = rng.child(name)
        shape = tuple(parameter.shape)
        leaf = name.rsplit('.', 1)[-1]
        if name.endswith('compensation'):
            values = np.zeros(shape)
        elif '.ln' in name or name.startswith('ln'):
            values = np.ones(shape) if leaf == 'weight' else np.zeros(shape)
        elif leaf == 'bias':
            values = np.zeros(shape)
        elif name in ('token_embedding.weight', 'position_embedding'):
            values = stream.normal(shape, 0.02)
        elif parameter.dim() == 3:
            values = stream.normal(shape, 1.0 / math.sqrt(shape[1]))
        else:
            values = stream.normal(shape, 1.0 / math.sqrt(shape[-1]))
        parameter.copy_(torch.from_numpy(np.ascontiguousarray(values, dtype=np.float64)))
    logger.info(f"Ініціалізовано {sum(p.numel() for p in model.parameters())} параметрів (seed={rng.seed})")
    return model


def build_model(config: ModelConfig, rng: SeededRng | None = None) -> ElmmModel:
    model = ElmmModel(config)
    if rng is not None:
        init_parameters(model, rng)
    return model
