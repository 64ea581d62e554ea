import csv
import json
import hashlib
from pathlib import Path
from typing import Any, Iterable

from pydantic import BaseModel


# Канонічна JSON-серіалізація (відсортовані ключі, без пробілів)
def canonical_json(data: Any) -> str:
    if isinstance(data, BaseModel):
        data = data.model_dump(mode='json')
    return json.dumps(data, sort_keys=True, separators=(',', ':'), ensure_ascii=False)


def config_hash(config: BaseModel) -> str:
    return hashlib.sha256(canonical_json(config).encode('utf-8')).hexdigest()


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as file:
        for chunk in iter(lambda: file.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


# Завантаження JSON-файлу
def load_json(path: str | Path) -> Any:
    with open(path, 'r', encoding='utf-8') as file:
        return json.load(file)


# Збереження даних до JSON-файлу
def save_json(path: str | Path, data: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as file:
        json.dump(data, file, indent=4, sort_keys=True, ensure_ascii=False)
        file.write('\n')
    return path


def write_jsonl(path: str | Path, records: Iterable[dict], append: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'a' if append else 'w', encoding='utf-8', newline='\n') as file:
        for record in records:
            file.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + '\n')
    return path


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, 'r', encoding='utf-8') as file:
        return [json.loads(line) for line in file if line.strip()]


def write_csv(path: str | Path, header: list[str], rows: Iterable[Iterable[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as file:
        writer = csv.writer(file, lineterminator='\n')
        writer.writerow(header)
        writer.writerows(rows)
    return path
