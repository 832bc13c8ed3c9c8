import json
import math
import statistics
from dataclasses import replace

import numpy as np
import pytest

from fedauxfdp import experiment as ex
from fedauxfdp.config import parse_config
from fedauxfdp.features import write_flab, write_fvec
from fedauxfdp.synthetic import generate_synthetic

TINY = {
    "n_clients": 3, "class_count": 3, "alpha": [1.0], "repeats": 2,
    "dataset": {"classes": 3, "per_class": 60, "test_per_class": 30, "feature_dim": 8,
                "intrinsic_dim": 4, "aux_size": 600},
}


def tiny(**changes):
    return parse_config(json.dumps({**TINY, **changes}))


def test_row_count_and_order():
    result = ex.run_sweep(tiny())
    assert result.ok and len(result.records) == 6
    assert [(r.seed, r.method) for r in result.records] == [
        (0, "fedauxfdp"), (0, "fedd"), (0, "fedavg"), (1, "fedauxfdp"), (1, "fedd"), (1, "fedavg")]
    assert all(r.eps_total == 0.6 and r.delta_total == 2e-5 and r.wall_ms == 0 for r in result.records)


@pytest.mark.filterwarnings("ignore:epsilon=1.0")
def test_budget_grid_rows():
    config = tiny(alpha=[0.04, 10.24], epsilon_class=[None, 1.0, 0.5, 0.1, 0.01], methods=["fedauxfdp"], repeats=1)
    records = ex.run_sweep(config).records
    assert [(r.alpha, r.eps_class) for r in records] == [(a, e) for a in (0.04, 10.24)
                                                         for e in (None, 1.0, 0.5, 0.1, 0.01)]
    assert [r.eps_total for r in records[:5]] == [0.1, 1.1, 0.6, 0.2, 0.11]


def test_csv_is_byte_identical_across_runs():
    assert ex.csv_text(ex.run_sweep(tiny()).records) == ex.csv_text(ex.run_sweep(tiny()).records)


def test_worker_count_does_not_change_output(monkeypatch):
    config = tiny(alpha=[0.1, 1.0])
    serial = ex.csv_text(ex.run_sweep(config, workers=1).records)
    monkeypatch.setenv(ex.THREADS_ENV, "2")
    assert ex.csv_text(ex.run_sweep(config).records) == serial


def test_thread_env_validation(monkeypatch):
    monkeypatch.setenv(ex.THREADS_ENV, "0")
    with pytest.raises(ValueError):
        ex.thread_count()


def test_summary_matches_csv(tmp_path):
    config = tiny(epsilon_class=[None, 0.5], repeats=3)
    result = ex.run_sweep(config)
    csv_path, json_path = ex.write_outputs(str(tmp_path), config, result)
    rows = ex.read_csv(open(csv_path).read())
    summary = json.load(open(json_path))
    assert summary["failures"] == [] and summary["config"]["repeats"] == 3
    for cell in summary["cells"]:
        values = [r["accuracy"] for r in rows if (r["method"], r["alpha"], r["eps_class"], r["lambda"])
                  == (cell["method"], cell["alpha"], cell["eps_class"], cell["lambda"])]
        assert cell["n"] == len(values) == 3
        assert abs(cell["mean"] - math.fsum(values) / 3) <= 1e-12
        assert abs(cell["std"] - statistics.pstdev(values)) <= 1e-12
    assert open(csv_path).readline().strip() == ",".join(ex.CSV_HEADER)


def test_none_budget_written_as_none():
    text = ex.csv_text(ex.run_sweep(tiny(epsilon_class=[None], repeats=1)).records)
    assert text.splitlines()[1].split(",")[2] == "none"


def test_failing_cells_are_recorded_not_raised():
    result = ex.run_sweep(tiny(max_iterations=1, repeats=1))
    assert not result.ok and len(result.failures) == 3 and not result.records
    assert "did not converge" in result.failures[0].reason


def test_file_dataset_matches_in_memory(tmp_path):
    config = tiny(repeats=1)
    train, test, aux = generate_synthetic(config.dataset, config.master_seed)
    paths = {}
    for name, rows in (("train_features", train.features), ("test_features", test.features), ("aux_features", aux)):
        paths[name] = str(tmp_path / f"{name}.fvec")
        write_fvec(paths[name], rows)
    for name, labels in (("train_labels", train.labels), ("test_labels", test.labels)):
        paths[name] = str(tmp_path / f"{name}.flab")
        write_flab(paths[name], labels)
    from_files = parse_config(json.dumps({**TINY, "repeats": 1, "dataset": {"kind": "file", **paths}}))
    raw = ex.load_data(from_files)
    np.testing.assert_array_equal(raw.train.features, train.features.astype(np.float32))
    assert ex.run_sweep(from_files).ok


def test_random_projection_extractor_changes_dimension():
    config = tiny(extractor={"kind": "random_projection", "output_dim": 5, "seed": 1})
    raw = ex.load_data(config)
    assert raw.train.dim == 5 and raw.aux_pool.shape[1] == 5
    assert ex.run_sweep(config, raw=raw).ok


def test_wall_time_recorded_only_on_request():
    records = ex.run_sweep(replace(tiny(repeats=1), record_wall_time=True)).records
    assert all(r.wall_ms >= 0 for r in records)
