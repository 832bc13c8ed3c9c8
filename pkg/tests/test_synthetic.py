import numpy as np
import pytest

from fedauxfdp import federation as fed
from fedauxfdp.datamodel import AuxiliarySplit, PrivacyParams
from fedauxfdp.synthetic import SyntheticSpec, generate_synthetic

SMALL = dict(classes=4, per_class=100, test_per_class=50, feature_dim=16, intrinsic_dim=6, aux_size=800)


def test_shapes_and_balance():
    train, test, aux = generate_synthetic(SyntheticSpec(**SMALL), 0)
    assert train.features.shape == (400, 16) and test.features.shape == (200, 16) and aux.shape == (800, 16)
    assert np.bincount(train.labels).tolist() == [100] * 4


def test_deterministic_per_seed():
    a = generate_synthetic(SyntheticSpec(**SMALL), 5)
    b = generate_synthetic(SyntheticSpec(**SMALL), 5)
    c = generate_synthetic(SyntheticSpec(**SMALL), 6)
    assert np.array_equal(a[0].features, b[0].features) and np.array_equal(a[2], b[2])
    assert not np.array_equal(a[0].features, c[0].features)


def test_aux_mode_leaves_client_data_untouched():
    matched = generate_synthetic(SyntheticSpec(**SMALL), 1)
    foreign = generate_synthetic(SyntheticSpec(**SMALL, aux_mode="mismatched"), 1)
    assert np.array_equal(matched[0].features, foreign[0].features)
    assert np.array_equal(matched[1].features, foreign[1].features)
    assert not np.array_equal(matched[2], foreign[2])


def test_mismatched_pool_sits_away_from_class_means():
    train, _, aux = generate_synthetic(SyntheticSpec(**SMALL, aux_mode="mismatched", spread=0.05), 2)
    means = np.stack([train.features[train.labels == c].mean(axis=0) for c in range(4)])
    nearest = np.min(np.linalg.norm(aux[:, None, :] - means[None], axis=2), axis=1)
    assert np.median(nearest) > 0.3


def test_collapsed_clusters_are_learned_perfectly_without_noise():
    spec = SyntheticSpec(**{**SMALL, "spread": 0.0, "ambient_noise": 0.0})
    train, test, aux = generate_synthetic(spec, 0)
    split = AuxiliarySplit.from_pool(aux, 0.8, np.random.default_rng(0))
    data = fed.FederatedData((train,), split, test)
    off = PrivacyParams.disabled()
    records = fed.run_round(fed.RoundConfig(4, class_dp=off, score_dp=off), data).records
    assert all(r.accuracy == 1.0 for r in records)


@pytest.mark.parametrize("bad", [dict(classes=1), dict(intrinsic_dim=100), dict(aux_mode="other"),
                                 dict(anisotropy=0.5), dict(per_class=0)])
def test_spec_validation(bad):
    with pytest.raises(ValueError):
        SyntheticSpec(**{**SMALL, **bad})
