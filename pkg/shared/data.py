from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import torch

from .config import (DATASET_FILES, ENT_CLOSE, ENT_OPEN, N_SPECIAL_TOKENS, REL_CLOSE, REL_OPEN, SPLITS,
                     VISUAL_MAGIC, GenConfig, logger)
from .exceptions import DatasetIntegrityError, InvalidArgumentError
from .funcs import file_sha256, load_json, read_jsonl, save_json, write_jsonl
from .numerics import SeededRng

VISUAL_HEADER_BYTES = len(VISUAL_MAGIC) + 4 * 4


@dataclass(frozen=True)
class EntityRecord:
    id: int
    name: str
    text_tokens: tuple[int, ...]
    entity_span: tuple[int, int]


@dataclass(frozen=True)
class RelationRecord:
    id: int
    name: str
    text_tokens: tuple[int, ...]
    relation_span: tuple[int, int]
    inverse_of: int | None = None


@dataclass(frozen=True)
class Query:
    direction: str          # 'tail' для (h, r, ?) або 'head' для (?, r, t) через r⁻¹
    known: int
    relation: int
    target: int


@dataclass
class QueryBatch:
    visual: torch.Tensor          # [B, N, M+1, E_i]
    token_ids: torch.Tensor       # [B, K]
    entity_mask: torch.Tensor     # [B, K]
    relation_mask: torch.Tensor   # [B, K]
    known: torch.Tensor
    relation: torch.Tensor
    target: torch.Tensor
    queries: list[Query]

    def __len__(self) -> int:
        return len(self.queries)


@dataclass
class MkgDataset:
    entities: list[EntityRecord]
    relations: list[RelationRecord]
    splits: dict[str, np.ndarray]
    visual: np.ndarray                          # [r, N, M+1, E_i], рядок 0: CLS
    gen_config: GenConfig | None = None
    latents: np.ndarray | None = field(default=None, repr=False)
    relation_maps: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_base_relations(self) -> int:
        return sum(1 for relation in self.relations if relation.inverse_of is None)

    @property
    def n_images(self) -> int:
        return self.visual.shape[1]

    @property
    def n_regions(self) -> int:
        return self.visual.shape[2] - 1

    @property
    def visual_dim(self) -> int:
        return self.visual.shape[3]

    @property
    def vocab_size(self) -> int:
        return N_SPECIAL_TOKENS + self.n_entities + len(self.relations)

    # Запити обох напрямків: (h, r, ?) та (t, r⁻¹, ?)
    def queries(self, split: str) -> list[Query]:
        n_base = self.n_base_relations
        result = []
        for h, r, t in self.splits[split].tolist():
            result.append(Query('tail', h, r, t))
            result.append(Query('head', t, r + n_base, h))
        return result

    @cached_property
    def known_truths(self) -> dict[tuple[int, int], frozenset[int]]:
        truths = defaultdict(set)
        n_base = self.n_base_relations
        for split in SPLITS:
            for h, r, t in self.splits[split].tolist():
                truths[(h, r)].add(t)
                truths[(t, r + n_base)].add(h)
        return {key: frozenset(value) for key, value in truths.items()}

    # Формування батчу запитів (однакова довжина тексту K для всіх запитів)
    def collate(self, queries: list[Query]) -> QueryBatch:
        token_rows, entity_rows, relation_rows = [], [], []
        for query in queries:
            entity, relation = self.entities[query.known], self.relations[query.relation]
            tokens = list(entity.text_tokens) + list(relation.text_tokens)
            entity_mask = np.zeros(len(tokens))
            entity_mask[entity.entity_span[0]:entity.entity_span[1]] = 1.0
            relation_mask = np.zeros(len(tokens))
            offset = len(entity.text_tokens)
            relation_mask[offset + relation.relation_span[0]:offset + relation.relation_span[1]] = 1.0
            token_rows.append(tokens)
            entity_rows.append(entity_mask)
            relation_rows.append(relation_mask)
        if len({len(row) for row in token_rows}) > 1:
            raise InvalidArgumentError("queries in one batch must share the text length K")
        known = [query.known for query in queries]
        return QueryBatch(
            visual=torch.from_numpy(self.visual[known]),
            token_ids=torch.tensor(token_rows, dtype=torch.long),
            entity_mask=torch.from_numpy(np.array(entity_rows)),
            relation_mask=torch.from_numpy(np.array(relation_rows)),
            known=torch.tensor(known, dtype=torch.long),
            relation=torch.tensor([query.relation for query in queries], dtype=torch.long),
            target=torch.tensor([query.target for query in queries], dtype=torch.long),
            queries=list(queries),
        )


def _entity_record(entity_id: int) -> EntityRecord:
    return EntityRecord(
        id=entity_id,
        name=f'entity_{entity_id:05d}',
        text_tokens=(ENT_OPEN, N_SPECIAL_TOKENS + entity_id, ENT_CLOSE),
        entity_span=(1, 2),
    )


def _relation_records(n_entities: int, n_relations: int) -> list[RelationRecord]:
    base = N_SPECIAL_TOKENS + n_entities
    records = []
    for k in range(n_relations):
        records.append(RelationRecord(k, f'relation_{k:03d}', (REL_OPEN, base + k, REL_CLOSE), (1, 2)))
    for k in range(n_relations):
        records.append(RelationRecord(
            n_relations + k, f'relation_{k:03d}_inverse', (REL_OPEN, base + n_relations + k, REL_CLOSE), (1, 2), k,
        ))
    return records


def _orthogonal(rng: SeededRng, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal((n, n)))
    return q * np.sign(np.diag(r))


# Генерація синтетичного мультимодального графа знань
def generate_synthetic_mkg(gen: GenConfig) -> MkgDataset:
    rng = SeededRng(gen.seed)
    n_ent, n_rel = gen.n_entities, gen.n_relations
    if gen.top_k >= n_ent:
        raise InvalidArgumentError(f"top_k={gen.top_k} must be below the entity count {n_ent}")
    if gen.signal_regions > gen.n_regions:
        raise InvalidArgumentError(f"signal_regions={gen.signal_regions} exceeds n_regions={gen.n_regions}")

    latents = rng.child('latents').normal((n_ent, gen.latent_dim))
    latents /= np.linalg.norm(latents, axis=1, keepdims=True)
    map_rng = rng.child('relation-maps')
    maps = np.stack([_orthogonal(map_rng, gen.latent_dim) for _ in range(n_rel)])

    # Пул кандидатів: top_k найближчих до A_k z_h сутностей для кожної пари (h, k)
    pool = []
    for k in range(n_rel):
        scores = (latents @ maps[k].T) @ latents.T
        np.fill_diagonal(scores, -np.inf)
        top = np.argsort(-scores, axis=1, kind='stable')[:, :gen.top_k]
        for h in range(n_ent):
            pool.extend((h, k, int(t)) for t in top[h])
    requested = gen.n_train + gen.n_dev + gen.n_test
    if requested > len(pool):
        raise InvalidArgumentError(
            f"requested {requested} triples but only {len(pool)} are constructible "
            f"({n_ent} entities x {n_rel} relations x top_k={gen.top_k})"
        )
    chosen = np.asarray(pool, dtype=np.int64)[rng.child('triples').choice(len(pool), requested)]
    bounds = np.cumsum([gen.n_train, gen.n_dev])
    splits = dict(zip(SPLITS, np.split(chosen, bounds)))

    visual = _generate_visual(gen, latents, rng.child('visual'))
    dataset = MkgDataset(
        entities=[_entity_record(e) for e in range(n_ent)],
        relations=_relation_records(n_ent, n_rel),
        splits={name: np.ascontiguousarray(triples) for name, triples in splits.items()},
        visual=visual,
        gen_config=gen,
        latents=latents,
        relation_maps=maps,
    )
    logger.info(f"Згенеровано граф: {n_ent} сутностей, {n_rel} відношень, "
                f"{gen.n_train}/{gen.n_dev}/{gen.n_test} трійок, пул {len(pool)}")
    return dataset


# Візуальні ознаки: CLS і частина регіонів є зашумленими проєкціями латенту, інші регіони є шумом
def _generate_visual(gen: GenConfig, latents: np.ndarray, rng: SeededRng) -> np.ndarray:
    n_ent, n_img, n_reg, dim = gen.n_entities, gen.n_images, gen.n_regions, gen.visual_dim
    # Латенти мають одиничну норму, тож координати сигналу мають одиничну дисперсію
    cls_signal = latents @ rng.child('p-cls').normal((dim, gen.latent_dim)).T
    region_signal = latents @ rng.child('p-region').normal((dim, gen.latent_dim)).T

    visual = np.empty((n_ent, n_img, n_reg + 1, dim))
    visual[:, :, 0, :] = cls_signal[:, None, :] + gen.cls_noise * rng.child('cls-noise').normal((n_ent, n_img, dim))
    visual[:, :, 1:, :] = rng.child('distractors').normal((n_ent, n_img, n_reg, dim))

    mask_rng = rng.child('signal-mask')
    signal_noise = gen.noise * rng.child('signal-noise').normal((n_ent, n_img, n_reg, dim))
    for e in range(n_ent):
        for i in range(n_img):
            regions = 1 + mask_rng.choice(n_reg, gen.signal_regions)
            visual[e, i, regions, :] = region_signal[e] + signal_noise[e, i, regions - 1, :]
    # Зберігається у 32-бітному форматі; розширюємо до 64 біт одразу
    return visual.astype('<f4').astype(np.float64)


# Збереження набору даних у каталог
def save_dataset(dataset: MkgDataset, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for split in SPLITS:
        with open(directory / f'{split}.tsv', 'w', encoding='utf-8', newline='\n') as file:
            for h, r, t in dataset.splits[split].tolist():
                file.write(f'{h}\t{r}\t{t}\n')
    write_jsonl(directory / 'entities.jsonl', (
        {'id': e.id, 'name': e.name, 'text_tokens': list(e.text_tokens), 'entity_span': list(e.entity_span)}
        for e in dataset.entities
    ))
    write_jsonl(directory / 'relations.jsonl', (
        {'id': r.id, 'name': r.name, 'text_tokens': list(r.text_tokens),
         'relation_span': list(r.relation_span), 'inverse_of': r.inverse_of}
        for r in dataset.relations
    ))
    n_ent, n_img, n_reg_cls, dim = dataset.visual.shape
    with open(directory / 'visual.emb', 'wb') as file:
        file.write(VISUAL_MAGIC)
        file.write(np.array([n_ent, n_img, n_reg_cls, dim], dtype='<u4').tobytes())
        file.write(dataset.visual.astype('<f4').tobytes())

    manifest = {
        'gen_config': dataset.gen_config.model_dump(mode='json') if dataset.gen_config else None,
        'counts': {split: int(len(dataset.splits[split])) for split in SPLITS},
        'hashes': {name: file_sha256(directory / name) for name in DATASET_FILES},
    }
    save_json(directory / 'manifest.json', manifest)
    logger.info(f"Набір даних збережено до {directory}")
    return directory


def _read_triples(path: Path, n_entities: int, n_relations: int) -> np.ndarray:
    rows, seen = [], set()
    with open(path, 'r', encoding='utf-8') as file:
        for line_no, line in enumerate(file, start=1):
            if not line.strip():
                continue
            parts = line.rstrip('\n').split('\t')
            if len(parts) != 3 or not all(part.isdigit() for part in parts):
                raise DatasetIntegrityError(f"{path.name}:{line_no}: malformed triple {line.rstrip()!r}")
            h, r, t = (int(part) for part in parts)
            if h >= n_entities or t >= n_entities:
                raise DatasetIntegrityError(f"{path.name}:{line_no}: dangling entity id in {(h, r, t)}")
            if r >= n_relations:
                raise DatasetIntegrityError(f"{path.name}:{line_no}: dangling relation id in {(h, r, t)}")
            if (h, r, t) in seen:
                raise DatasetIntegrityError(f"{path.name}:{line_no}: duplicate triple {(h, r, t)}")
            seen.add((h, r, t))
            rows.append((h, r, t))
    return np.array(rows, dtype=np.int64).reshape(-1, 3)


def _read_visual(path: Path, n_entities: int) -> np.ndarray:
    raw = path.read_bytes()
    if raw[:len(VISUAL_MAGIC)] != VISUAL_MAGIC:
        raise DatasetIntegrityError(f"{path.name}: bad magic {raw[:len(VISUAL_MAGIC)]!r}, expected {VISUAL_MAGIC!r}")
    if len(raw) < VISUAL_HEADER_BYTES:
        raise DatasetIntegrityError(
            f"{path.name}: dimension mismatch: expected at least {VISUAL_HEADER_BYTES} bytes, found {len(raw)}"
        )
    counts = np.frombuffer(raw, dtype='<u4', count=4, offset=len(VISUAL_MAGIC)).astype(np.int64)
    expected = VISUAL_HEADER_BYTES + 4 * int(np.prod(counts))
    if len(raw) != expected:
        raise DatasetIntegrityError(
            f"{path.name}: dimension mismatch for counts {tuple(counts.tolist())}: "
            f"expected {expected} bytes, found {len(raw)}"
        )
    if counts[0] != n_entities:
        raise DatasetIntegrityError(f"{path.name}: {counts[0]} entities in visual file, {n_entities} in entities.jsonl")
    if counts[2] < 2:
        raise DatasetIntegrityError(f"{path.name}: each image needs a CLS row and at least one region")
    data = np.frombuffer(raw, dtype='<f4', offset=VISUAL_HEADER_BYTES).astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise DatasetIntegrityError(f"{path.name}: non-finite visual features")
    return data.reshape(tuple(counts.tolist()))


def _check_tokens(record: dict, key_span: str, vocab_size: int, source: str) -> None:
    tokens = record.get('text_tokens')
    span = record.get(key_span)
    if not isinstance(tokens, list) or not all(isinstance(t, int) and 0 <= t < vocab_size for t in tokens):
        raise DatasetIntegrityError(f"{source}: invalid text_tokens in record {record}")
    if not (isinstance(span, list) and len(span) == 2 and 0 <= span[0] < span[1] <= len(tokens)):
        raise DatasetIntegrityError(f"{source}: invalid {key_span} in record {record}")


# Завантаження набору даних з повною перевіркою цілісності
def load_dataset(directory: str | Path) -> MkgDataset:
    directory = Path(directory)
    for name in DATASET_FILES:
        if not (directory / name).is_file():
            raise DatasetIntegrityError(f"missing dataset file: {directory / name}")

    entity_rows = read_jsonl(directory / 'entities.jsonl')
    relation_rows = read_jsonl(directory / 'relations.jsonl')
    vocab_size = N_SPECIAL_TOKENS + len(entity_rows) + len(relation_rows)
    entities = []
    for position, row in enumerate(entity_rows):
        if row.get('id') != position:
            raise DatasetIntegrityError(f"entities.jsonl: expected id {position}, found record {row}")
        _check_tokens(row, 'entity_span', vocab_size, 'entities.jsonl')
        entities.append(EntityRecord(row['id'], row['name'], tuple(row['text_tokens']), tuple(row['entity_span'])))

    relations = []
    for position, row in enumerate(relation_rows):
        if row.get('id') != position:
            raise DatasetIntegrityError(f"relations.jsonl: expected id {position}, found record {row}")
        _check_tokens(row, 'relation_span', vocab_size, 'relations.jsonl')
        relations.append(RelationRecord(row['id'], row['name'], tuple(row['text_tokens']),
                                        tuple(row['relation_span']), row.get('inverse_of')))
    n_base = sum(1 for relation in relations if relation.inverse_of is None)
    if len(relations) != 2 * n_base:
        raise DatasetIntegrityError(f"relations.jsonl: {n_base} base relations but {len(relations)} records")
    for relation in relations[n_base:]:
        if relation.inverse_of != relation.id - n_base:
            raise DatasetIntegrityError(f"relations.jsonl: reciprocal record {relation} does not match its base")

    visual = _read_visual(directory / 'visual.emb', len(entities))
    splits = {split: _read_triples(directory / f'{split}.tsv', len(entities), n_base) for split in SPLITS}
    for i, first in enumerate(SPLITS):
        for second in SPLITS[i + 1:]:
            overlap = set(map(tuple, splits[first].tolist())) & set(map(tuple, splits[second].tolist()))
            if overlap:
                raise DatasetIntegrityError(f"triple {sorted(overlap)[0]} appears in both {first} and {second}")

    gen_config = None
    manifest_path = directory / 'manifest.json'
    if manifest_path.is_file():
        manifest = load_json(manifest_path)
        for name, expected in manifest.get('hashes', {}).items():
            found = file_sha256(directory / name)
            if found != expected:
                raise DatasetIntegrityError(f"{name}: content hash {found} does not match manifest {expected}")
        if manifest.get('gen_config'):
            gen_config = GenConfig.model_validate(manifest['gen_config'])
    else:
        logger.warning(f"У {directory} немає manifest.json: перевірку хешів пропущено")

    logger.info(f"Завантажено набір даних {directory}: {len(entities)} сутностей, "
                + ', '.join(f"{split}={len(splits[split])}" for split in SPLITS))
    return MkgDataset(entities, relations, splits, visual, gen_config)


# Оракул відновлення латентів: скори кандидатів за косинусом з A_k z_h
def latent_oracle_scores(dataset: MkgDataset, known: int, relation: int) -> np.ndarray:
    if dataset.latents is None or dataset.relation_maps is None:
        raise InvalidArgumentError("latent oracle needs a freshly generated dataset")
    n_base = dataset.n_base_relations
    if relation < n_base:
        mapped = dataset.relation_maps[relation] @ dataset.latents[known]
    else:
        mapped = dataset.relation_maps[relation - n_base].T @ dataset.latents[known]
    return dataset.latents @ mapped
