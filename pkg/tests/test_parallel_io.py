import json

import numpy as np
import pytest

from msle.io import dumps, series_csv, write_csv, write_json_atomic
from msle.parallel import chunk_bounds, map_paths, worker_count


def _square_chunk(offset, start, stop):
    i = np.arange(start, stop)
    return {"i": i, "v": (i + offset) ** 2.0}


def test_chunk_bounds_cover_range():
    b = chunk_bounds(105, 50)
    assert b == [(0, 50), (50, 100), (100, 105)]
    assert chunk_bounds(0) == []


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("MSLE_WORKERS", "3")
    assert worker_count() == 3
    assert worker_count(2) == 2
    monkeypatch.delenv("MSLE_WORKERS")
    assert worker_count() == 1
    assert worker_count(0) == 1


def test_parallel_equals_serial():
    a = map_paths(_square_chunk, 23, (1.5,), workers=1, chunk=5)
    b = map_paths(_square_chunk, 23, (1.5,), workers=2, chunk=5)
    assert np.array_equal(a["i"], np.arange(23))
    assert np.array_equal(a["v"], b["v"])


def test_map_paths_empty():
    assert map_paths(_square_chunk, 0, (0.0,)) == {}


def test_csv_floats_round_trip(tmp_path):
    x = 0.1 + 0.2
    p = write_csv(tmp_path / "a.csv", ["x", "flag", "n"], [(x, True, np.int64(3))])
    lines = p.read_text().splitlines()
    assert lines[0] == "x,flag,n"
    assert float(lines[1].split(",")[0]) == x
    assert lines[1].endswith(",1,3")


def test_series_csv_header(tmp_path):
    p = series_csv(tmp_path / "s.csv", [0.0, 0.5], {"value": [1.0, 2.0]})
    assert p.read_text().splitlines()[0] == "t,value"


def test_json_handles_numpy_and_nonfinite(tmp_path):
    obj = {"b": np.float64(np.nan), "a": np.arange(2), "c": 1 + 2j, "d": np.bool_(True)}
    d = json.loads(dumps(obj))
    assert d == {"a": [0, 1], "b": None, "c": [1.0, 2.0], "d": True}
    assert list(json.loads(dumps({"z": 1, "a": 2}))) == ["a", "z"]


def test_atomic_json_leaves_no_temp(tmp_path):
    write_json_atomic(tmp_path / "m.json", {"x": 1})
    assert [p.name for p in tmp_path.iterdir()] == ["m.json"]


def test_atomic_json_keeps_old_file_on_error(tmp_path):
    path = tmp_path / "m.json"
    write_json_atomic(path, {"x": 1})
    with pytest.raises(TypeError):
        write_json_atomic(path, {"x": object()})
    assert json.loads(path.read_text()) == {"x": 1}
    assert [p.name for p in tmp_path.iterdir()] == ["m.json"]
