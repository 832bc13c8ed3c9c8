import pytest

from fedauxfdp.config import ConfigError, ExperimentConfig, FileDatasetSpec, parse_config
from fedauxfdp.synthetic import SyntheticSpec


def test_empty_document_gives_defaults():
    config = parse_config("")
    assert config == ExperimentConfig()
    assert config.alpha == (0.01, 0.04, 0.16, 10.24)
    assert config.n_clients == 20 and config.epsilon_class == (0.5,) and config.epsilon_score == 0.1
    assert config.lambda_class == (0.01,) and config.delta_class == config.delta_score == 1e-5
    assert config.seeds() == [0] and config.cell_count() == 12


def test_values_and_null_budget():
    config = parse_config('{"alpha": [0.5], "epsilon_class": [null, 0.1], "repeats": 3, "master_seed": 4}')
    assert config.alpha == (0.5,) and config.epsilon_class == (None, 0.1)
    assert config.seeds() == [4, 5, 6] and config.cell_count() == 18


@pytest.mark.parametrize("doc, path", [
    ('{"lambda_class": [0.01, -1]}', "lambda_class[1]"),
    ('{"unknown_key": 1}', "unknown_key"),
    ('{"n_clients": "twenty"}', "n_clients"),
    ('{"n_clients": true}', "n_clients"),
    ('{"alpha": []}', "alpha"),
    ('{"delta_class": 1.0}', "delta_class"),
    ('{"methods": ["fedd", "fedd"]}', "methods"),
    ('{"methods": ["scaffold"]}', "methods[0]"),
    ('{"dataset": {"per_class": 0}}', "dataset.per_class"),
    ('{"dataset": {"kind": "file", "train_features": "a"}}', "dataset.train_labels"),
    ('{"dataset": {"classes": 3}}', "dataset.classes"),
    ('{"extractor": {"kind": "file_backed"}}', "extractor.path"),
    ('[1, 2]', "<root>"),
    ('{not json', "<root>"),
])
def test_errors_name_the_offending_key(doc, path):
    with pytest.raises(ConfigError) as info:
        parse_config(doc)
    assert info.value.path == path


def test_dotted_overrides():
    config = parse_config('{"dataset": {"per_class": 50}}',
                          ["dataset.aux_size=400", "alpha=[1.0]", "normalizer=public", "epsilon_score=null"])
    assert isinstance(config.dataset, SyntheticSpec)
    assert config.dataset.per_class == 50 and config.dataset.aux_size == 400
    assert config.alpha == (1.0,) and config.normalizer == "public" and config.epsilon_score is None


def test_bad_override_syntax():
    with pytest.raises(ConfigError):
        parse_config("", ["alpha"])
    with pytest.raises(ConfigError) as info:
        parse_config("", ["n_clients.x=1"])
    assert info.value.path == "n_clients"


def test_file_dataset():
    doc = ('{"dataset": {"kind": "file", "train_features": "a", "train_labels": "b", '
           '"test_features": "c", "test_labels": "d", "aux_features": "e"}}')
    assert parse_config(doc).dataset == FileDatasetSpec("a", "b", "c", "d", "e")
