"""Degradation bound, utility bound, and sweep aggregation."""

import math

import numpy as np
import pytest

from pflsim.analysis import (
    DegradationConfig,
    degradation_upper_bound,
    factor_pairs,
    paired_degradation,
    sweep_clients,
    sweep_epochs,
    utility_lower_bound,
)
from pflsim.config import (
    ExperimentConfig,
    OptimizerConfig,
    PrivacyConfig,
    ScheduleConfig,
    SyntheticData,
)
from pflsim.core import RngStream
from pflsim.data import synth_blobs
from pflsim.errors import ConfigError
from pflsim.models import ModelSpec


class TestDegradationUpperBound:
    def test_zero_step_sizes_zero_bound(self):
        assert degradation_upper_bound(1.0, 1, 0.0, 1.0, 0.0, 1.0, 3.0, 32, 10) == 0.0

    def test_plug_in_evaluation(self):
        # 5 * (0.1*1 + 0.1*10 + 0.1 * E||eta||(dim 2, sigma 1, clip 1) / 32)
        expected = 5 * (0.1 + 1.0 + 0.1 * math.sqrt(math.pi / 2) / 32)
        got = degradation_upper_bound(1.0, 5, 0.1, 1.0, 0.1, 10.0, 1.0, 32, 2)
        assert got == pytest.approx(expected, rel=1e-12)
        assert got == pytest.approx(5.5196, abs=2e-4)

    def test_linear_in_epochs(self):
        one = degradation_upper_bound(2.0, 1, 0.3, 1.0, 0.3, 5.0, 2.0, 16, 40)
        four = degradation_upper_bound(2.0, 4, 0.3, 1.0, 0.3, 5.0, 2.0, 16, 40)
        assert four == pytest.approx(4.0 * one, rel=1e-12)

    def test_minimized_at_one_epoch_over_factor_pairs(self):
        rng = np.random.default_rng(123)
        for _ in range(200):
            args = dict(
                lipschitz=float(rng.uniform(0.01, 10)),
                lr=float(rng.uniform(0.001, 1)),
                clip=float(rng.uniform(0.1, 10)),
                lr_ref=float(rng.uniform(0.001, 1)),
                clip_ref=float(rng.uniform(0.1, 100)),
                sigma=float(rng.uniform(0, 10)),
                batch_size=int(rng.integers(1, 512)),
                dim=int(rng.integers(1, 10_000)),
            )
            values = {
                e: degradation_upper_bound(epochs=e, **args) for e, _ in factor_pairs(20)
            }
            assert min(values, key=values.get) == 1

    def test_zero_lipschitz_zero_bound(self):
        assert degradation_upper_bound(0.0, 7, 0.3, 1.0, 0.3, 9.0, 1.0, 32, 100) == 0.0

    def test_bad_epochs(self):
        with pytest.raises(ValueError):
            degradation_upper_bound(1.0, 0, 0.1, 1.0, 0.1, 1.0, 1.0, 32, 10)


class TestUtilityLowerBound:
    def test_formula(self):
        u = utility_lower_bound(1.0, 1.0, 0.5, 10)
        assert u.bound == pytest.approx(0.6, rel=1e-12)

    def test_quadrupling_clients_quarters_failure_term(self):
        small = utility_lower_bound(0.5, 1.0, 0.5, 8)
        big = utility_lower_bound(0.5, 1.0, 0.5, 32)
        assert 1 - big.bound == pytest.approx((1 - small.bound) / 4, rel=1e-12)

    def test_vacuous_clamped_to_zero(self):
        assert utility_lower_bound(2.0, 2.0, 0.1, 1).bound == 0.0

    def test_increasing_in_clients(self):
        values = [utility_lower_bound(1.0, 1.0, 0.5, k).bound for k in (10, 25, 50, 100)]
        assert values == sorted(values)
        assert values[0] < values[-1]

    def test_validation(self):
        with pytest.raises(ValueError):
            utility_lower_bound(1.0, 1.0, 0.0, 10)
        with pytest.raises(ValueError):
            utility_lower_bound(1.0, 1.0, 0.5, 0)


class TestFactorPairs:
    def test_twenty(self):
        assert factor_pairs(20) == [(1, 20), (2, 10), (4, 5), (5, 4), (10, 2), (20, 1)]

    def test_prime(self):
        assert factor_pairs(7) == [(1, 7), (7, 1)]

    def test_one(self):
        assert factor_pairs(1) == [(1, 1)]


def degradation_config(**overrides):
    shard = synth_blobs(2, 2, 40, 3.0, RngStream(5).child("shard"))
    defaults = dict(
        shard=shard,
        model=ModelSpec(2, 2),
        epochs=3,
        lr=0.1,
        clip=1.0,
        sigma=0.5,
        batch_size=16,
        seed=31,
    )
    defaults.update(overrides)
    return DegradationConfig(**defaults)


class TestPairedDegradation:
    def test_noise_free_same_clip_zero_gap(self):
        cfg = degradation_config(sigma=0.0, clip=1.0, clip_ref=1.0)
        report = paired_degradation(cfg, runs=3)
        assert report.measured == 0.0
        assert report.bound_satisfied

    def test_measured_below_bound_with_empirical_estimates(self):
        for epochs in (1, 3, 5):
            report = paired_degradation(degradation_config(epochs=epochs), runs=50)
            assert report.measured <= report.bound
            assert report.inputs["lipschitz_estimated"]
            assert report.inputs["clip_ref_estimated"]

    def test_bound_doubles_with_epochs_for_fixed_inputs(self):
        # With explicit lipschitz and clip_ref the bound is exactly linear in E.
        one = paired_degradation(
            degradation_config(epochs=1, lipschitz=2.0, clip_ref=5.0), runs=2
        )
        two = paired_degradation(
            degradation_config(epochs=2, lipschitz=2.0, clip_ref=5.0), runs=2
        )
        assert two.bound == pytest.approx(2 * one.bound, rel=1e-12)

    def test_bound_matches_formula(self):
        cfg = degradation_config(lipschitz=1.5, clip_ref=4.0)
        report = paired_degradation(cfg, runs=2)
        expected = degradation_upper_bound(
            1.5, cfg.epochs, cfg.lr, cfg.clip, cfg.lr, 4.0, cfg.sigma, cfg.batch_size, 6
        )
        assert report.bound == pytest.approx(expected, rel=1e-12)

    def test_deterministic(self):
        a = paired_degradation(degradation_config(), runs=5)
        b = paired_degradation(degradation_config(), runs=5)
        assert a.measured == b.measured
        assert a.bound == b.bound

    def test_batch_size_exceeding_shard_rejected(self):
        with pytest.raises(ConfigError):
            paired_degradation(degradation_config(batch_size=1000), runs=1)


class TestChebyshevConsistency:
    def test_empirical_failure_rate_below_bound(self):
        # Parameters drawn i.i.d. around an ideal point with dispersion
        # param_std; averaging k of them must violate the level threshold
        # no more often than the bound's failure term allows.
        rng = np.random.default_rng(99)
        param_std, lipschitz, k, trials = 1.0, 1.0, 10, 4000
        for level in (0.5, 0.8):
            means = rng.normal(0.0, param_std / math.sqrt(k), size=trials)
            failures = np.mean(np.abs(means) * lipschitz >= level)
            bound_failure = param_std**2 * lipschitz**2 / (level**2 * k)
            assert failures <= bound_failure + 3.0 / math.sqrt(trials)


def sweep_base(**overrides):
    defaults = dict(
        dataset=SyntheticData(classes=2, dim=5, n_per_class=100, test_n_per_class=60,
                              separation=3.0),
        clients=3,
        fraction=0.2,
        schedule=ScheduleConfig(total_epochs=4),
        privacy=PrivacyConfig(epsilon=3.0),
        optimizer=OptimizerConfig(lr=0.3, momentum=0.5, batch_size=8),
        runs=2,
        master_seed=17,
    )
    defaults.update(overrides)
    return ExperimentConfig(**defaults)


class TestSweepEpochs:
    def test_default_pairs_and_rows(self):
        sweep = sweep_epochs(sweep_base())
        assert [(r.epochs, r.rounds) for r in sweep.rows] == [(1, 4), (2, 2), (4, 1)]
        for row in sweep.rows:
            assert len(row.accuracies) == 2
            assert row.method == "pfl"
            assert row.epsilon == pytest.approx(3.0)
            assert row.epsilon_per_round[-1] == pytest.approx(3.0, abs=1e-12)

    def test_invalid_pair_rejected(self):
        with pytest.raises(ConfigError):
            sweep_epochs(sweep_base(), pairs=[(3, 2)])

    def test_sigma_held_fixed_across_pairs(self):
        # Same epsilon schedule endpoint for every split of the same budget.
        sweep = sweep_epochs(sweep_base())
        finals = {row.epsilon_per_round[-1] for row in sweep.rows}
        assert len(finals) == 1

    def test_noise_free_baseline_label(self):
        sweep = sweep_epochs(sweep_base(privacy=PrivacyConfig(sigma=0.0)), pairs=[(4, 1)])
        assert sweep.rows[0].method == "fedavg"
        assert math.isinf(sweep.rows[0].epsilon)

    def test_reproducible(self):
        a = sweep_epochs(sweep_base())
        b = sweep_epochs(sweep_base())
        for ra, rb in zip(a.rows, b.rows):
            assert ra.accuracies == rb.accuracies
            assert ra.losses == rb.losses

    def test_threads_do_not_change_rows(self):
        a = sweep_epochs(sweep_base())
        b = sweep_epochs(sweep_base(), threads=3)
        for ra, rb in zip(a.rows, b.rows):
            assert ra.accuracies == rb.accuracies


class TestSweepClients:
    def test_rows_and_reference(self):
        sweep = sweep_clients(sweep_base(), ks=[2, 4])
        keys = [r.key for r in sweep.rows]
        assert keys == ["k=2", "k=4", "k=1(ref)"]
        ref = sweep.rows[-1]
        assert ref.method == "centralized-ref"
        assert math.isinf(ref.epsilon)
        assert ref.utility_bound is None

    def test_one_epoch_per_round_enforced(self):
        sweep = sweep_clients(sweep_base(schedule=ScheduleConfig(epochs=2, rounds=2)), ks=[2])
        assert sweep.rows[0].epochs == 1
        assert sweep.rows[0].rounds == 4

    def test_duplicate_ks_deduplicated(self):
        sweep = sweep_clients(sweep_base(), ks=[2, 2, 4])
        assert [r.key for r in sweep.rows] == ["k=2", "k=4", "k=1(ref)"]

    def test_utility_bound_attached_increasing(self):
        sweep = sweep_clients(sweep_base(), ks=[2, 8])
        bounds = [r.utility_bound for r in sweep.rows if r.utility_bound is not None]
        assert bounds == sorted(bounds)

    def test_invalid_k_rejected(self):
        with pytest.raises(ConfigError):
            sweep_clients(sweep_base(), ks=[0])

    def test_reference_uses_single_client(self):
        sweep = sweep_clients(sweep_base(), ks=[2])
        assert sweep.rows[-1].clients == 1
