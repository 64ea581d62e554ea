import json
import struct
from pathlib import Path

import numpy as np
import torch

from .config import CHECKPOINT_MAGIC, ModelConfig, logger
from .exceptions import CheckpointFormatError
from .model import DTYPE, ElmmModel

FORMAT_VERSION = 1


def _header(model: ElmmModel) -> dict:
    return {
        'format': FORMAT_VERSION,
        'model_config': model.config.model_dump(mode='json'),
        'pruned_layers': [
            {
                'layer': layer,
                'compensation': model.blocks[layer].compensation is not None,
                'trainable': bool(model.blocks[layer].compensation is not None
                                  and model.blocks[layer].compensation.requires_grad),
            }
            for layer in model.pruned_layers()
        ],
        'tensors': [{'name': name, 'shape': list(tensor.shape)} for name, tensor in model.state_dict().items()],
    }


# Функція для запису чекпойнта: magic ELM1, u32-довжина JSON-заголовка, потім тензори state_dict()
# у порядку із заголовка як little-endian float64
def save_checkpoint(model: ElmmModel, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps(_header(model), sort_keys=True, separators=(',', ':')).encode('utf-8')
    with open(path, 'wb') as file:
        file.write(CHECKPOINT_MAGIC)
        file.write(struct.pack('<I', len(header)))
        file.write(header)
        for tensor in model.state_dict().values():
            file.write(tensor.detach().cpu().numpy().astype('<f8').tobytes())
    logger.info(f"Чекпоінт збережено до {path}")
    return path


def load_checkpoint(path: str | Path) -> ElmmModel:
    raw = Path(path).read_bytes()
    magic_len = len(CHECKPOINT_MAGIC)
    if raw[:magic_len] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {raw[:magic_len]!r}")
    if len(raw) < magic_len + 4:
        raise CheckpointFormatError(f"{path}: truncated header")
    (header_len,) = struct.unpack_from('<I', raw, magic_len)
    offset = magic_len + 4
    if offset + header_len > len(raw):
        raise CheckpointFormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[offset:offset + header_len].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"{path}: unreadable header: {e}")
    if header.get('format') != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported format {header.get('format')}")
    offset += header_len

    model = ElmmModel(ModelConfig.model_validate(header['model_config']))
    d_model = model.config.d_model
    for entry in header['pruned_layers']:
        w_c = torch.zeros(d_model, d_model, dtype=DTYPE) if entry['compensation'] else None
        model.blocks[entry['layer']].prune(w_c, trainable=entry['trainable'])

    expected = model.state_dict()
    listed = [(item['name'], tuple(item['shape'])) for item in header['tensors']]
    if listed != [(name, tuple(t.shape)) for name, t in expected.items()]:
        raise CheckpointFormatError(f"{path}: tensor layout does not match the model configuration")
    state = {}
    for name, shape in listed:
        count = int(np.prod(shape))
        if offset + 8 * count > len(raw):
            raise CheckpointFormatError(f"{path}: truncated while reading {name}")
        values = np.frombuffer(raw, dtype='<f8', count=count, offset=offset).reshape(shape)
        state[name] = torch.from_numpy(values.astype(np.float64))
        offset += 8 * count
    if offset != len(raw):
        raise CheckpointFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    model.load_state_dict(state)
    model.eval()
    return model
