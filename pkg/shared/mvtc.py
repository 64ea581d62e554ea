import math

import torch
from torch import nn

from .config import ModelConfig
from .exceptions import InvalidArgumentError
from .model import DTYPE, HiddenStates, Modality


# Один вид MVTC: Q/K для кожної голови (D×d) і спільний W_V (D×D)
class CompressorView(nn.Module):

    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        head_dim = d_model // n_heads
        self.w_q = nn.Parameter(torch.zeros(n_heads, d_model, head_dim, dtype=DTYPE))
        self.w_k = nn.Parameter(torch.zeros(n_heads, d_model, head_dim, dtype=DTYPE))
        self.w_v = nn.Linear(d_model, d_model, bias=False, dtype=DTYPE)


class MultiViewCompressor(nn.Module):

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.text_view = CompressorView(config.d_model, config.n_heads)
        self.image_view = CompressorView(config.d_model, config.n_heads)


# Об'єднання рядків згідно маски з max-пулінгом; рядки поза маскою ігноруються
def _masked_max(rows: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    keep = mask.to(torch.bool)
    if not torch.all(keep.any(dim=-1)):
        raise InvalidArgumentError("empty token span")
    filled = rows.masked_fill(~keep.unsqueeze(-1), float('-inf'))
    return filled.max(dim=-2).values


# X_t: max-пулінг по рядках сутності та відношення
def fuse_text_query(t_entity: torch.Tensor, t_relation: torch.Tensor) -> torch.Tensor:
    if t_entity.shape[-2] == 0 or t_relation.shape[-2] == 0:
        raise InvalidArgumentError("entity and relation spans must be non-empty")
    return torch.cat([t_entity, t_relation], dim=-2).max(dim=-2).values


# X_i: max-пулінг по CLS-рядках N зображень
def fuse_visual_query(cls_rows: torch.Tensor) -> torch.Tensor:
    if cls_rows.shape[-2] == 0:
        raise InvalidArgumentError("at least one CLS row is required")
    return cls_rows.max(dim=-2).values


# Функція для стиснення n рядків у H рядків: кожна голова дає повний D-вимірний рядок
# спільної проєкції W_V, рядки складаються стосом, а не конкатенуються по ознаках
def mha_compress(query: torch.Tensor, tokens: torch.Tensor, view: CompressorView,
                 return_weights: bool = False):
    if tokens.shape[-2] == 0:
        raise InvalidArgumentError("cannot compress zero tokens")
    head_dim = view.w_q.shape[-1]
    q = torch.einsum('...D,hDd->...hd', query, view.w_q)
    k = torch.einsum('...nD,hDd->...hnd', tokens, view.w_k)
    logits = torch.einsum('...hd,...hnd->...hn', q, k) / math.sqrt(head_dim)
    weights = torch.softmax(logits, dim=-1)
    values = view.w_v(tokens)
    heads = torch.einsum('...hn,...nD->...hD', weights, values)
    if return_weights:
        return heads, weights
    return heads


# Функція для побудови спільної послідовності T = I_image ‖ I_text ‖ T_t
def compress(batch, model) -> HiddenStates:
    config = model.config
    if batch.entity_mask is None or batch.relation_mask is None:
        raise InvalidArgumentError("entity/relation span marks are required")
    visual = torch.as_tensor(batch.visual, dtype=DTYPE)
    *lead, n_images, n_regions_cls, visual_dim = visual.shape
    i_t = model.project_visual(visual.reshape(*lead, n_images * n_regions_cls, visual_dim))

    n_visual = config.n_visual_rows
    t_t = model.embed_text(batch.token_ids, offset=n_visual)

    if not config.use_mvtc:
        visual_rows = [i_t]
        tags = [Modality.RAW_VISUAL] * i_t.shape[-2]
    else:
        visual_rows, tags = [], []
        if config.use_image_view:
            cls_rows = i_t.reshape(*lead, n_images, n_regions_cls, config.d_model)[..., 0, :]
            x_i = fuse_visual_query(cls_rows)
            visual_rows.append(mha_compress(x_i, i_t, model.mvtc.image_view))
            tags += [Modality.IMAGE_VIEW] * config.n_heads
        if config.use_text_view:
            x_t = fuse_text_query(
                _masked_max(t_t, batch.entity_mask).unsqueeze(-2),
                _masked_max(t_t, batch.relation_mask).unsqueeze(-2),
            )
            visual_rows.append(mha_compress(x_t, i_t, model.mvtc.text_view))
            tags += [Modality.TEXT_VIEW] * config.n_heads

    if visual_rows:
        compressed = torch.cat(visual_rows, dim=-2)
        compressed = compressed + model.position_embedding[:compressed.shape[-2]]
        sequence = torch.cat([compressed, t_t], dim=-2)
    else:
        sequence = t_t
    tags += [Modality.TEXT] * t_t.shape[-2]
    return HiddenStates(sequence, tuple(tags))
