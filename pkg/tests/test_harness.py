from __future__ import annotations

import io
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contextmesh.harness import (
    CSV_COLUMNS, ClientSpec, ConfigError, Host, Mode, MismatchedWorkload, Rng, build_scenario,
    build_workload, compare_runs, config_to_dict, csv_text, default_config, default_scenario_path,
    generate_arrivals, load_config, sample_provider_delay, validate_config,
)
from contextmesh.harness.sim import run
from contextmesh.netsim import TransportClass


def cfg(**kw):
    return default_config().with_overrides(**kw)


def trace_text(result) -> str:
    buf = io.StringIO()
    result.trace.write(buf)
    return buf.getvalue()


class TestConfig:
    def test_roster(self):
        c = default_config()
        assert [s.name for s in c.scopes] == [f"devScope_{i}" for i in range(1, 6)] + [
            f"networkScope_{i}" for i in range(1, 6)]
        assert [s.payload_bytes for s in c.scopes[:5]] == [750, 1000, 1500, 2000, 5000]
        assert [s.validity_ms for s in c.scopes[5:]] == [30000, 60000, 200000, 350000, 900000]
        device = [x for x in c.clients if x.host is Host.DEVICE]
        assert len(device) == 15 and len(c.clients) == 25
        assert validate_config(c) == []

    def test_toml_matches_default(self):
        assert load_config(default_scenario_path()) == default_config()

    def test_unserved_scope(self):
        c = default_config()
        clients = [x for x in c.clients if x.id != "MCxP_1"]
        errors = validate_config(c.with_overrides(clients=clients))
        assert any("devScope_1" in str(e) for e in errors)

    def test_nobroker_bulk(self):
        errors = validate_config(cfg(mode=Mode.NO_BROKER, bulk_mode=True))
        assert [e.path for e in errors] == ["bulk_mode"]

    def test_cycle(self):
        c = default_config()
        errors = validate_config(c.with_overrides(edges=c.edges + [("NCxB", "MCxB")]))
        assert any(e.path == "edges" and "cycle" in str(e).lower() for e in errors)

    def test_bad_values_collected(self):
        errors = validate_config(cfg(workload__n_queries=0, availability__up_fraction=0.2))
        assert {e.path for e in errors} == {"workload.n_queries", "availability.up_fraction"}

    def test_latency_rule(self):
        errors = validate_config(cfg(energy={"latency.LOCAL_HTTP": 10.0}))
        assert errors and errors[0].path == "energy"
        assert validate_config(cfg(energy={"latency.LOCAL_HTTP": 10.0},
                                   allow_unconstrained_latency=True)) == []

    def test_load_errors(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("mode = \n")
        with pytest.raises(ConfigError):
            load_config(bad)
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.toml")
        partial = tmp_path / "partial.toml"
        partial.write_text('mode = "broker"\n')
        with pytest.raises(ConfigError):
            load_config(partial)

    def test_unknown_key(self, tmp_path):
        text = default_scenario_path().read_text() + "\nbogus_key = 3\n"
        f = tmp_path / "x.toml"
        f.write_text(text)
        with pytest.raises(ConfigError, match="bogus_key"):
            load_config(f)

    def test_to_dict_plain(self):
        d = config_to_dict(default_config())
        assert d["mode"] == "broker" and d["local_transport"] == "http"


class TestWorkload:
    def test_arrival_mean(self):
        gaps = np.diff(generate_arrivals(100000, 50.0, Rng(3).stream("arrivals")), prepend=0.0)
        assert abs(gaps.mean() - 50) / 50 < 0.02

    def test_single_arrival(self):
        a = generate_arrivals(1, 50.0, Rng(3).stream("x"))
        b = -50.0 * np.log(1.0 - Rng(3).stream("x").random(1))
        assert a.tolist() == pytest.approx(b.tolist())

    def test_deterministic(self):
        a = generate_arrivals(100, 50.0, Rng(9).stream("arrivals"))
        b = generate_arrivals(100, 50.0, Rng(9).stream("arrivals"))
        assert (a == b).all()

    def test_streams_independent(self):
        a = Rng(9).stream("arrivals").random(5)
        b = Rng(9).stream("delays").random(5)
        assert not (a == b).any()

    def test_delays(self):
        d = sample_provider_delay(Rng(4).stream("delays"), size=10000)
        assert d.min() >= 10 and d.max() < 2000
        assert abs(d.mean() - 1005) / 1005 < 0.02
        assert sample_provider_delay(Rng(1).stream("d")) == sample_provider_delay(Rng(1).stream("d"))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32), st.integers(1, 300))
    def test_workload_shape(self, seed, n):
        qs = build_workload(cfg(workload__n_queries=n), seed)
        assert len(qs) == n
        assert all(a.time <= b.time for a, b in zip(qs, qs[1:]))
        consumers = [c.id for c in default_config().clients if c.role == "consumer"]
        assert [q.consumer for q in qs] == [consumers[i % len(consumers)] for i in range(n)]
        assert all(10 <= q.provider_delay_ms < 2000 for q in qs)

    def test_prefix_stable(self):
        short = build_workload(cfg(workload__n_queries=100), 5)
        long = build_workload(cfg(workload__n_queries=1000), 5)
        assert long[:100] == short


class TestBuildScenario:
    def test_default(self):
        w = build_scenario(default_config(), seed=0)
        assert sorted(w.brokers) == ["MCxB", "NCxB"]
        assert len(w.device_components) == 16
        cloud = [c for c in w.clients if c not in w.device_components]
        assert len(cloud) == 10
        assert w.link("MCxP_1", "MCxB").cls is TransportClass.LOCAL_HTTP
        assert w.link("MCxB", "NCxB").cls is TransportClass.REMOTE_HTTP
        assert w.link("NCxC_1", "NCxB").cls is TransportClass.REMOTE_HTTP

    def test_nobroker(self):
        w = build_scenario(cfg(mode=Mode.NO_BROKER), seed=0)
        assert "MCxB" not in w.brokers
        device_clients = [c for c in w.clients if c in w.device_components]
        assert len(device_clients) == 15
        for c in device_clients:
            assert w.home[c] == "NCxB"
            assert w.link(c, "NCxB").cls is TransportClass.REMOTE_HTTP

    def test_transport(self):
        w = build_scenario(cfg(local_transport=TransportClass.LOCAL_IPC), seed=0)
        assert w.link("MCxC_1", "MCxB").cls is TransportClass.LOCAL_IPC

    def test_invalid(self):
        c = default_config()
        bad = c.clients + [ClientSpec("X", Host.DEVICE, "consumer", scope_of_interest="nope")]
        with pytest.raises(ConfigError):
            build_scenario(c.with_overrides(clients=bad))


class TestRun:
    def test_all_satisfied(self):
        m = run(build_scenario(cfg(workload__n_queries=1000), seed=7, trace=False)).metrics
        assert m.queries_issued == m.satisfied == 1000
        assert m.stale_notifications == m.duplicate_notifications == 0

    def test_trace_deterministic(self):
        c = cfg(workload__n_queries=200, availability__up_fraction=0.7, bulk_mode=True)
        a = run(build_scenario(c, seed=11))
        b = run(build_scenario(c, seed=11))
        assert trace_text(a) == trace_text(b) and len(a.trace) > 0
        assert a.metrics == b.metrics

    def test_lower_per_query_at_half_availability(self):
        full = run(build_scenario(cfg(workload__n_queries=1000), seed=3, trace=False)).metrics
        half = run(build_scenario(cfg(workload__n_queries=1000, availability__up_fraction=0.5),
                                  seed=3, trace=False)).metrics
        assert half.mean_per_query_mj < full.mean_per_query_mj
        assert half.network_calls_while_down == 0

    def test_polls_only_without_broker(self):
        def energy(mode, poll):
            c = cfg(mode=mode, workload__n_queries=1000, availability__up_fraction=0.5,
                    energy={"cpuPoll": poll})
            return run(build_scenario(c, seed=2, trace=False)).metrics.device_energy_mj

        assert energy(Mode.NO_BROKER, 10.0) > energy(Mode.NO_BROKER, 0.0)
        assert energy(Mode.BROKERED, 10.0) == energy(Mode.BROKERED, 0.0)

    def test_bulk_counts(self):
        m = run(build_scenario(cfg(workload__n_queries=500, bulk_mode=True), seed=4,
                               trace=False)).metrics
        assert m.bulk_enqueued > 0
        assert m.subscription_network_calls <= -(-m.bulk_enqueued // 5) + m.deadline_flushes

    def test_superseded_deadline_timers_do_not_extend_run(self):
        r = run(build_scenario(cfg(workload__n_queries=500, bulk_mode=True), seed=7, trace=False))
        assert r.metrics.deadline_flushes == 0
        # last arrival plus a provider round trip, not the far-off superseded deadlines
        assert r.metrics.duration_ms < r.world.queries[-1].time + 5000

    def test_one_time_notified_once(self):
        m = run(build_scenario(cfg(workload__n_queries=800, availability__up_fraction=0.6),
                               seed=8, trace=False)).metrics
        assert m.duplicate_notifications == 0
        assert m.satisfied + m.expired_unsatisfied + m.pending_at_end == m.queries_issued


class TestMetrics:
    def test_compare_self(self):
        m = run(build_scenario(cfg(workload__n_queries=100), seed=1, trace=False)).metrics
        c = compare_runs(m, m)
        assert all(v == 0 for v in c.deltas.values())
        assert c.device_energy_winner == "tie"

    def test_compare_mismatch(self):
        a = run(build_scenario(cfg(workload__n_queries=100), seed=1, trace=False)).metrics
        b = run(build_scenario(cfg(workload__n_queries=200), seed=1, trace=False)).metrics
        with pytest.raises(MismatchedWorkload):
            compare_runs(a, b)

    def test_broker_beats_nobroker_at_5000(self):
        a = run(build_scenario(cfg(workload__n_queries=5000), seed=1, trace=False)).metrics
        b = run(build_scenario(cfg(workload__n_queries=5000, mode=Mode.NO_BROKER), seed=1,
                               trace=False)).metrics
        assert compare_runs(a, b).device_energy_winner == "A"

    def test_csv_columns(self):
        ms = [run(build_scenario(cfg(workload__n_queries=50, mode=mode), seed=1, trace=False)).metrics
              for mode in (Mode.BROKERED, Mode.NO_BROKER)]
        lines = csv_text(ms).splitlines()
        assert lines[0].split(",") == list(CSV_COLUMNS)
        assert all(len(line.split(",")) == len(CSV_COLUMNS) for line in lines[1:])

    def test_spread_small(self):
        energies = [run(build_scenario(cfg(workload__n_queries=1000), seed=s, trace=False))
                    .metrics.device_energy_mj for s in range(5)]
        mean = statistics.fmean(energies)
        assert max(abs(e - mean) / mean for e in energies) < 0.03
