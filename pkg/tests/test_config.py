"""Config schema validation and materialization."""

import json
import math

import pytest

from pflsim.config import IdxData, load_config, parse_config, prepare
from pflsim.errors import ConfigError


def minimal(**overrides):
    raw = {
        "dataset": {"kind": "synthetic", "n_per_class": 100, "test_n_per_class": 50},
        "schedule": {"epochs": 1, "rounds": 2},
        "privacy": {"epsilon": 3.0},
    }
    raw.update(overrides)
    return raw


class TestParseConfig:
    def test_defaults_applied(self):
        cfg = parse_config(minimal())
        assert cfg.clients == 10
        assert cfg.fraction == 0.1
        assert cfg.optimizer.lr == 0.3
        assert cfg.optimizer.momentum == 0.5
        assert cfg.optimizer.batch_size == 32
        assert cfg.privacy.delta == 1e-5
        assert cfg.privacy.kappa == 2.0
        assert cfg.privacy.clip == 1.0
        assert cfg.runs == 10

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError) as err:
            parse_config(minimal(bogus=1))
        assert "bogus" in str(err.value)

    def test_unknown_nested_key_names_section(self):
        with pytest.raises(ConfigError) as err:
            parse_config(minimal(privacy={"epsilon": 1.0, "epsilons": 2}))
        assert "privacy" in str(err.value)

    def test_epsilon_and_sigma_mutually_exclusive(self):
        with pytest.raises(ConfigError) as err:
            parse_config(minimal(privacy={"epsilon": 1.0, "sigma": 0.5}))
        assert "privacy" in str(err.value)
        with pytest.raises(ConfigError):
            parse_config(minimal(privacy={}))

    def test_sigma_only_mode(self):
        cfg = parse_config(minimal(privacy={"sigma": 0.7}))
        assert cfg.privacy.sigma == 0.7
        assert cfg.privacy.epsilon is None

    def test_schedule_consistency_enforced(self):
        with pytest.raises(ConfigError) as err:
            parse_config(minimal(schedule={"epochs": 2, "rounds": 3, "total_epochs": 5}))
        assert "total_epochs" in str(err.value)

    def test_schedule_explicit_list(self):
        cfg = parse_config(minimal(schedule={"local_epochs": [1, 2, 3]}))
        assert cfg.schedule.local_epochs == (1, 2, 3)
        assert cfg.schedule.total() == 6

    def test_schedule_list_and_pair_conflict(self):
        with pytest.raises(ConfigError):
            parse_config(minimal(schedule={"local_epochs": [1], "epochs": 1, "rounds": 1}))

    def test_schedule_total_only(self):
        cfg = parse_config(minimal(schedule={"total_epochs": 20}))
        assert cfg.schedule.total() == 20

    def test_bad_fraction(self):
        with pytest.raises(ConfigError) as err:
            parse_config(minimal(fraction=1.5))
        assert "fraction" in str(err.value)

    def test_non_numeric_rejected_with_field(self):
        with pytest.raises(ConfigError) as err:
            parse_config(minimal(clients="ten"))
        assert "clients" in str(err.value)

    def test_non_integer_rejected(self):
        with pytest.raises(ConfigError):
            parse_config(minimal(clients=2.5))

    def test_mlp_requires_hidden_dim(self):
        with pytest.raises(ConfigError) as err:
            parse_config(minimal(model={"arch": "mlp"}))
        assert "hidden_dim" in str(err.value)

    def test_random_projection_requires_out_dim(self):
        with pytest.raises(ConfigError) as err:
            parse_config(minimal(features={"kind": "random_projection"}))
        assert "out_dim" in str(err.value)

    def test_idx_paths_resolved_relative_to_base_dir(self, tmp_path):
        raw = minimal(dataset={
            "kind": "idx", "train_images": "a", "train_labels": "b",
            "test_images": "c", "test_labels": "d",
        })
        cfg = parse_config(raw, base_dir=tmp_path)
        assert cfg.dataset == IdxData(
            train_images=str(tmp_path / "a"), train_labels=str(tmp_path / "b"),
            test_images=str(tmp_path / "c"), test_labels=str(tmp_path / "d"),
        )


class TestLoadConfig:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError) as err:
            load_config(tmp_path / "none.json")
        assert "none.json" in str(err.value)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{]")
        with pytest.raises(ConfigError) as err:
            load_config(path)
        assert "JSON" in str(err.value)

    def test_round_trip(self, tmp_path):
        path = tmp_path / "ok.json"
        path.write_text(json.dumps(minimal(master_seed=7)))
        cfg = load_config(path)
        assert cfg.master_seed == 7


class TestPrepare:
    def test_batch_larger_than_shard_rejected(self):
        cfg = parse_config(minimal())  # 200 train samples, fraction 0.1 -> shard 20
        with pytest.raises(ConfigError) as err:
            prepare(cfg)
        assert "batch_size" in str(err.value)

    def test_q_defaults_to_batch_over_shard(self):
        cfg = parse_config(minimal(fraction=0.5))  # shard 100
        prep = prepare(cfg)
        assert prep.q == pytest.approx(32 / 100)
        assert prep.noise.sigma == pytest.approx(
            2.0 * prep.q * math.sqrt(2 * math.log(1e5)) / 3.0
        )

    def test_explicit_q_wins(self):
        cfg = parse_config(minimal(fraction=0.5, privacy={"epsilon": 3.0, "q": 0.25}))
        assert prepare(cfg).q == 0.25

    def test_sigma_mode_reports_epsilon(self):
        cfg = parse_config(minimal(fraction=0.5, privacy={"sigma": 1.0}))
        prep = prepare(cfg)
        assert prep.epsilon == pytest.approx(
            2.0 * 0.32 * math.sqrt(2 * math.log(1e5)) / 1.0
        )

    def test_sigma_zero_infinite_epsilon(self):
        cfg = parse_config(minimal(fraction=0.5, privacy={"sigma": 0.0}))
        prep = prepare(cfg)
        assert math.isinf(prep.epsilon)
        assert prep.budget is None

    def test_synthetic_data_fixed_across_runs(self):
        cfg = parse_config(minimal(fraction=0.5))
        a = prepare(cfg)
        b = prepare(cfg)
        assert (a.train.features == b.train.features).all()

    def test_model_dims_derived_from_data(self):
        cfg = parse_config(minimal(
            fraction=0.5,
            dataset={"kind": "synthetic", "dim": 7, "classes": 3,
                     "n_per_class": 100, "test_n_per_class": 30},
        ))
        prep = prepare(cfg)
        assert prep.model_spec.input_dim == 7
        assert prep.model_spec.num_classes == 3

    def test_normalize_fitted_on_train(self):
        cfg = parse_config(minimal(fraction=0.5, features={"kind": "normalize"}))
        prep = prepare(cfg)
        assert abs(float(prep.train.features.mean())) < 1e-9
