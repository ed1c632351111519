"""Averaging, client-local training, partitioning, and the full protocol."""

import math

import numpy as np
import pytest

from pflsim.config import (
    ExperimentConfig,
    PrivacyConfig,
    ScheduleConfig,
    SyntheticData,
    prepare,
)
from pflsim.core import RngStream
from pflsim.data import synth_blobs
from pflsim.errors import ConfigError, DimensionError, EmptyInputError
from pflsim.federation import (
    ClientState,
    Schedule,
    fed_avg,
    local_train,
    partition_iid,
    run_pfl,
)
from pflsim.models import ModelSpec, init_params, param_count, per_sample_gradients
from pflsim.privacy import NoiseSpec


class TestSchedule:
    def test_uniform(self):
        s = Schedule.uniform(2, 5)
        assert s.rounds == 5
        assert s.local_epochs == (2, 2, 2, 2, 2)
        assert s.total_epochs == 10

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            Schedule(rounds=3, local_epochs=(1, 1))

    def test_zero_epoch_round_rejected(self):
        with pytest.raises(ValueError):
            Schedule(rounds=2, local_epochs=(1, 0))


class TestFedAvg:
    def test_mean_of_identical_is_identity(self):
        v = np.array([1.0, -2.0, 3.0])
        assert np.array_equal(fed_avg([v, v, v]), v)

    def test_coordinatewise_mean(self):
        out = fed_avg([np.array([1.0, 2.0]), np.array([3.0, 4.0])])
        assert np.array_equal(out, [2.0, 3.0])

    def test_single_client_identity(self):
        v = np.array([0.5, 0.25])
        assert np.array_equal(fed_avg([v]), v)

    def test_linearity(self):
        rng = np.random.default_rng(0)
        vs = [rng.normal(size=6) for _ in range(4)]
        scaled = fed_avg([3.0 * v for v in vs])
        assert np.allclose(scaled, 3.0 * fed_avg(vs), atol=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        vs = [rng.normal(size=5) for _ in range(6)]
        assert np.allclose(fed_avg(vs), fed_avg(vs[::-1]), atol=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            fed_avg([np.zeros(3), np.zeros(4)])

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            fed_avg([])


class TestPartitionIid:
    def test_shard_sizes(self):
        ds = synth_blobs(2, 3, 300, 1.0, RngStream(1))  # n = 600
        shards = partition_iid(ds, 10, 0.1, RngStream(2))
        assert len(shards) == 10
        assert all(s.n == 60 for s in shards)
        assert all(s.num_classes == 2 for s in shards)

    def test_full_fraction_single_client_permutation(self):
        ds = synth_blobs(2, 2, 50, 1.0, RngStream(3))
        (shard,) = partition_iid(ds, 1, 1.0, RngStream(4))
        assert shard.n == ds.n
        assert np.array_equal(
            np.sort(shard.features[:, 0]), np.sort(ds.features[:, 0])
        )

    def test_determinism(self):
        ds = synth_blobs(2, 2, 100, 1.0, RngStream(5))
        a = partition_iid(ds, 4, 0.25, RngStream(6))
        b = partition_iid(ds, 4, 0.25, RngStream(6))
        for x, y in zip(a, b):
            assert np.array_equal(x.features, y.features)

    def test_shards_vary_across_clients(self):
        ds = synth_blobs(2, 2, 100, 1.0, RngStream(5))
        shards = partition_iid(ds, 2, 0.3, RngStream(7))
        assert not np.array_equal(shards[0].features, shards[1].features)

    def test_bad_fraction(self):
        ds = synth_blobs(2, 2, 10, 1.0, RngStream(5))
        with pytest.raises(ConfigError):
            partition_iid(ds, 2, 0.0, RngStream(0))
        with pytest.raises(ConfigError):
            partition_iid(ds, 2, 1.5, RngStream(0))

    def test_fraction_too_small(self):
        ds = synth_blobs(2, 2, 10, 1.0, RngStream(5))
        with pytest.raises(ConfigError):
            partition_iid(ds, 2, 0.01, RngStream(0))


def make_client(seed=0, n_per_class=40):
    shard = synth_blobs(2, 4, n_per_class, 3.0, RngStream(seed).child("shard"))
    return ClientState(0, shard)


class TestLocalTrain:
    def test_noise_free_matches_plain_sgd_loop(self):
        # Independent re-implementation: same batch index streams, own update math.
        client = make_client()
        spec = ModelSpec(4, 2)
        start = init_params(spec, RngStream(1))
        noise = NoiseSpec(clip=1e9, sigma=0.0)
        stream = RngStream(77).child("round", 1).child("client", 0)
        got = local_train(client, start, 3, noise, 0.2, 0.5, 16, stream, spec)

        params = start.copy()
        velocity = np.zeros_like(params)
        n = client.shard.n
        steps_per_epoch = math.ceil(n / 16)
        step = 0
        for _ in range(3):
            for _ in range(steps_per_epoch):
                idx = stream.child("sample", step).generator().choice(n, size=16, replace=False)
                grads = per_sample_gradients(
                    spec, params, client.shard.features[idx], client.shard.labels[idx]
                )
                g = grads.sum(axis=0) / 16
                velocity = 0.5 * velocity + g
                params = params - 0.2 * velocity
                step += 1
        assert np.max(np.abs(got - params)) <= 1e-6

    def test_zero_lr_returns_global_params(self):
        client = make_client()
        spec = ModelSpec(4, 2)
        start = init_params(spec, RngStream(2))
        out = local_train(client, start, 2, NoiseSpec(clip=1.0, sigma=1.0),
                          0.0, 0.5, 8, RngStream(3), spec)
        assert np.array_equal(out, start)

    def test_deterministic_replay(self):
        client = make_client()
        spec = ModelSpec(4, 2)
        start = init_params(spec, RngStream(4))
        noise = NoiseSpec(clip=1.0, sigma=2.0)
        a = local_train(client, start, 2, noise, 0.3, 0.5, 8, RngStream(5), spec)
        b = local_train(client, start, 2, noise, 0.3, 0.5, 8, RngStream(5), spec)
        assert np.array_equal(a, b)

    def test_does_not_mutate_global_params(self):
        client = make_client()
        spec = ModelSpec(4, 2)
        start = init_params(spec, RngStream(6))
        snapshot = start.copy()
        local_train(client, start, 1, NoiseSpec(clip=1.0, sigma=1.0),
                    0.3, 0.5, 8, RngStream(7), spec)
        assert np.array_equal(start, snapshot)

    def test_batch_size_exceeds_shard(self):
        client = make_client(n_per_class=4)  # shard of 8
        spec = ModelSpec(4, 2)
        with pytest.raises(ConfigError):
            local_train(client, np.zeros(param_count(spec)), 1,
                        NoiseSpec(clip=1.0, sigma=0.0), 0.3, 0.0, 9, RngStream(0), spec)


def small_config(**overrides):
    defaults = dict(
        dataset=SyntheticData(classes=2, dim=6, n_per_class=100, test_n_per_class=50,
                              separation=3.0),
        clients=3,
        fraction=0.2,
        schedule=ScheduleConfig(epochs=2, rounds=3),
        privacy=PrivacyConfig(epsilon=3.0),
        runs=2,
        master_seed=42,
    )
    defaults.update(overrides)
    return ExperimentConfig(**defaults)


class TestRunPfl:
    def test_records_structure_and_epsilon_schedule(self):
        cfg = small_config()
        result = run_pfl(cfg)
        assert len(result.records) == 3
        eps = [r.epsilon_spent for r in result.records]
        assert eps == sorted(eps)
        assert eps[-1] == pytest.approx(3.0, abs=1e-12)
        for rec in result.records:
            assert rec.epsilon_spent <= 3.0 + 1e-12
            assert len(rec.checksum) == 64
            assert 0.0 <= rec.eval.accuracy <= 1.0

    def test_epsilon_spent_matches_intermediate_formula(self):
        cfg = small_config()
        result = run_pfl(cfg)
        done = 0
        for rec in result.records:
            done += 2
            assert rec.epsilon_spent == pytest.approx(3.0 / math.sqrt(6 / done), rel=1e-12)

    def test_sigma_zero_reports_infinite_epsilon(self):
        cfg = small_config(privacy=PrivacyConfig(sigma=0.0))
        result = run_pfl(cfg)
        assert all(math.isinf(r.epsilon_spent) for r in result.records)
        assert math.isinf(result.epsilon)

    def test_replay_identical(self):
        cfg = small_config()
        a = run_pfl(cfg)
        b = run_pfl(cfg)
        assert np.array_equal(a.final_params, b.final_params)
        assert [r.checksum for r in a.records] == [r.checksum for r in b.records]

    def test_threads_do_not_change_results(self):
        cfg = small_config(clients=5)
        seq = run_pfl(cfg, threads=1)
        par = run_pfl(cfg, threads=4)
        assert np.array_equal(seq.final_params, par.final_params)
        assert [r.checksum for r in seq.records] == [r.checksum for r in par.records]

    def test_run_index_changes_results(self):
        cfg = small_config()
        a = run_pfl(cfg, run_index=0)
        b = run_pfl(cfg, run_index=1)
        assert not np.array_equal(a.final_params, b.final_params)

    def test_single_client_noise_free_equals_centralized(self):
        # k=1 with fed_avg identity: the protocol is exactly one client's
        # local training chain.
        cfg = small_config(clients=1, fraction=1.0,
                           privacy=PrivacyConfig(sigma=0.0),
                           schedule=ScheduleConfig(epochs=1, rounds=1))
        result = run_pfl(cfg)
        assert len(result.records) == 1
        assert result.records[-1].eval.accuracy >= 0.5  # beats chance on blobs

    def test_identical_shards_and_streams_symmetry(self):
        # If every client holds the same shard and trains with the same
        # stream, the average equals any single client's result.
        cfg = small_config()
        prep = prepare(cfg)
        spec = prep.model_spec
        start = init_params(spec, RngStream(9))
        shard = prep.train.subset(np.arange(40))
        noise = NoiseSpec(clip=1e9, sigma=0.0)
        stream = RngStream(123).child("shared")
        outs = [
            local_train(ClientState(0, shard), start, 2, noise, 0.3, 0.5, 8, stream, spec)
            for _ in range(3)
        ]
        avg = fed_avg(outs)
        assert np.allclose(avg, outs[0], atol=1e-12)

    def test_shard_overlap_reported(self):
        cfg = small_config(clients=2, fraction=0.5)
        result = run_pfl(cfg)
        assert 0.0 <= result.shard_overlap <= 1.0
        # With fraction 0.5 and two clients, expected overlap is about 0.5.
        assert 0.2 < result.shard_overlap < 0.8

    def test_single_client_overlap_zero(self):
        cfg = small_config(clients=1)
        assert run_pfl(cfg).shard_overlap == 0.0

    @pytest.mark.filterwarnings("ignore:invalid value encountered")
    def test_diverged_run_names_round(self):
        from pflsim.config import OptimizerConfig
        from pflsim.errors import DivergedRunError

        cfg = small_config(
            optimizer=OptimizerConfig(lr=math.inf, momentum=0.5, batch_size=8)
        )
        with pytest.raises(DivergedRunError) as err:
            run_pfl(cfg)
        assert err.value.round_index == 1
        assert "round 1" in str(err.value)
