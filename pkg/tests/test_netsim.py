from __future__ import annotations

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from contextmesh.contextml import Header, LookupRequest
from contextmesh.netsim import (
    ALWAYS_UP, AvailabilitySchedule, CallRole, Delivered, EnergyLedger, Link, Refused,
    TransportClass, apply_overrides, calibrate_from_measurements, charge_call, default_latencies,
    deliver, latency_problems, load_overrides, parse_overrides, row_ratios,
)

from oracles import CALLS, ROWS, oracle_mean_mj

IPC, SOCK, HTTP, RHTTP = (TransportClass.LOCAL_IPC, TransportClass.LOCAL_SOCKET,
                          TransportClass.LOCAL_HTTP, TransportClass.REMOTE_HTTP)

MSG = LookupRequest(Header("m", "a", 0), "devScope_1")


class TestCalibration:
    def test_per_call_means_match_oracle(self):
        m = calibrate_from_measurements()
        for cls, mech in ((IPC, "IPC"), (SOCK, "Sockets"), (HTTP, "HTTP"), (RHTTP, "HTTP")):
            assert m.per_call(cls, CallRole.CALLEE) == pytest.approx(oracle_mean_mj(mech, "server"))
            assert m.per_call(cls, CallRole.CALLER) == pytest.approx(oracle_mean_mj(mech, "client"))

    def test_ipc_mean(self):
        assert calibrate_from_measurements().per_call_total(IPC) == pytest.approx(0.33, abs=0.005)

    def test_http_1000_row(self):
        server, client = ROWS["HTTP"]
        assert 1000 * (server[1] + client[1]) / 1000 == pytest.approx(16.82)
        assert calibrate_from_measurements().per_call_total(HTTP) == pytest.approx(16.82, rel=0.01)

    def test_ordering(self):
        assert calibrate_from_measurements().class_ordering_holds()

    def test_role_shares(self):
        m = calibrate_from_measurements()
        assert abs(100 * m.callee_share(IPC) - 60) <= 3
        assert abs(100 * m.callee_share(SOCK) - 57) <= 3

    def test_row_ratios_oracle(self):
        expected = [(hs + hc) / (isv + ic) for hs, hc, isv, ic in
                    zip(*ROWS["HTTP"], *ROWS["IPC"])]
        assert row_ratios("HTTP", "IPC") == pytest.approx(expected)

    def test_socket_ratio_bracket(self):
        ratios = row_ratios("Sockets", "IPC")
        expected = [(ss + sc) / (isv + ic) for ss, sc, isv, ic in
                    zip(*ROWS["Sockets"], *ROWS["IPC"])]
        assert ratios == pytest.approx(expected)
        assert all(9 <= r <= 19 for r in ratios)


class TestChargeCall:
    def test_round_trip_1000_http(self):
        m = calibrate_from_measurements()
        ledger = EnergyLedger()
        link = Link("a", "b", HTTP, 30)
        for _ in range(1000):
            charge_call(ledger, link, 500, m)
        assert ledger.total_mj == pytest.approx(1000 * oracle_mean_mj("HTTP"), rel=1e-9)
        assert ledger.call_counts[HTTP] == 1000

    def test_zero_byte_payload(self):
        m = calibrate_from_measurements()
        a, b = EnergyLedger(), EnergyLedger()
        charge_call(a, Link("x", "y", IPC, 2), 0, m)
        charge_call(b, Link("x", "y", IPC, 2), 0, apply_overrides({"perByte": 0.001}, m)[0])
        assert a.total_mj == b.total_mj

    def test_radio_on_device_endpoint_only(self):
        m = calibrate_from_measurements()
        ledger = EnergyLedger(device_components={"dev"})
        charge_call(ledger, Link("dev", "cloud", RHTTP, 50), 0, m)
        assert ledger.energy_mj["dev"] == pytest.approx(
            m.per_call(RHTTP, CallRole.CALLER) + m.radio_per_call_mj)
        assert ledger.energy_mj["cloud"] == pytest.approx(m.per_call(RHTTP, CallRole.CALLEE))
        assert ledger.device_mj + ledger.cloud_mj == pytest.approx(ledger.total_mj)

    def test_no_radio_on_local_link(self):
        m = calibrate_from_measurements()
        ledger = EnergyLedger(device_components={"a", "b"})
        charge_call(ledger, Link("a", "b", HTTP, 30), 0, m)
        assert ledger.device_mj == pytest.approx(m.per_call_total(HTTP))

    def test_negative_charge_rejected(self):
        with pytest.raises(ValueError):
            EnergyLedger().charge("x", -1)


class TestLatency:
    def test_defaults_ok(self):
        lat = default_latencies()
        assert latency_problems(lat) == []
        assert lat[SOCK] >= 3 * lat[IPC] and lat[HTTP] >= 15 * lat[IPC] and lat[RHTTP] >= lat[HTTP]

    def test_ratio_floor(self):
        lat = {**default_latencies(), HTTP: 10, IPC: 2}
        assert latency_problems(lat)
        assert latency_problems(lat, allow_unconstrained=True) == []

    def test_remote_not_below_local(self):
        assert latency_problems({**default_latencies(), RHTTP: 20})

    def test_override_file(self, tmp_path):
        f = tmp_path / "o.txt"
        f.write_text("# comment\nlatency.LOCAL_HTTP = 10\npercall.LOCAL_IPC.CALLER=0.5\nradioPerCall=1\n")
        model, lat = load_overrides(f)
        assert lat[HTTP] == 10 and model.per_call(IPC, CallRole.CALLER) == 0.5
        assert model.radio_per_call_mj == 1
        assert latency_problems(lat)

    @pytest.mark.parametrize("text", ["nonsense", "latency.BOGUS=3", "cpuPoll=abc", "percall.X=1"])
    def test_bad_overrides(self, text):
        with pytest.raises(ValueError):
            apply_overrides(parse_overrides(text))


class TestSchedule:
    def test_always_up(self):
        link = Link("a", "b", RHTTP, 50)
        ledger = EnergyLedger()
        m = calibrate_from_measurements()
        for t in range(0, 10**6, 9973):
            assert isinstance(deliver(MSG, link, t, ledger, m), Delivered)

    def test_down_half(self):
        sched = AvailabilitySchedule(60000, 0.5)
        link = Link("a", "b", RHTTP, 50, sched)
        ledger = EnergyLedger()
        assert isinstance(deliver(MSG, link, 45000, ledger, calibrate_from_measurements()), Refused)
        assert ledger.total_mj == 0
        assert deliver(MSG, link, 1000, ledger, calibrate_from_measurements()) == Delivered(1050)

    def test_deterministic(self):
        m = calibrate_from_measurements()
        sched = AvailabilitySchedule(60000, 0.7, 1234)
        link = Link("a", "b", RHTTP, 50, sched)
        runs = [[deliver(MSG, link, t, EnergyLedger(), m) for t in range(0, 200000, 777)]
                for _ in range(2)]
        assert runs[0] == runs[1]

    @given(st.data())
    def test_up_time_brute_force(self, data):
        period = data.draw(st.integers(2, 200))
        up = data.draw(st.integers((period + 1) // 2, period))
        sched = AvailabilitySchedule(period, up / period, data.draw(st.integers(0, 500)))
        start = data.draw(st.integers(0, 2000))
        end = start + data.draw(st.integers(0, 2000))
        brute = sum(1 for t in range(start, end) if sched.is_up(t))
        assert sched.up_time(start, end) == pytest.approx(brute, abs=1e-6)

    @given(st.floats(0.5, 0.99), st.integers(1000, 100000), st.integers(0, 10**6), st.integers(0, 10**7))
    def test_next_change_flips_state(self, frac, period, phase, now):
        sched = AvailabilitySchedule(period, frac, phase)
        t = sched.next_change(now)
        assert t > now
        assert sched.is_up(t) != sched.is_up(t - 1)
        assert all(sched.is_up(x) == sched.is_up(now) for x in range(now, t, max(1, (t - now) // 50)))

    def test_fraction_bounds(self):
        assert ALWAYS_UP.always_up
        with pytest.raises(ValueError):
            AvailabilitySchedule(60000, 1.5)
        assert math.isclose(AvailabilitySchedule(60000, 0.5).up_time(0, 120000), 60000)
