from shared.funcs import canonical_json, file_sha256, load_json, read_jsonl, save_json, write_csv, write_jsonl


def test_canonical_json_sorts_keys():
    assert canonical_json({'b': 1, 'a': [1, 2]}) == '{"a":[1,2],"b":1}'


def test_json_helpers(tmp_path):
    path = save_json(tmp_path / 'nested' / 'data.json', {'b': 2, 'a': 'тест'})
    assert load_json(path) == {'a': 'тест', 'b': 2}
    assert path.read_text(encoding='utf-8').startswith('{\n    "a"')


def test_jsonl_append(tmp_path):
    path = write_jsonl(tmp_path / 'log.jsonl', [{'epoch': 1}])
    write_jsonl(path, [{'epoch': 2}], append=True)
    assert read_jsonl(path) == [{'epoch': 1}, {'epoch': 2}]


def test_csv_and_hash(tmp_path):
    path = write_csv(tmp_path / 'table.csv', ['layer', 'similarity'], [(0, 0.5), (1, 0.25)])
    assert path.read_text(encoding='utf-8') == 'layer,similarity\n0,0.5\n1,0.25\n'
    assert file_sha256(path) == file_sha256(write_csv(tmp_path / 'copy.csv', ['layer', 'similarity'],
                                                      [(0, 0.5), (1, 0.25)]))
