"""Server and client state machines of the exact-averaging protocol."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from areafl import protocol
from areafl.core import NO_NOISE, NoiseModel, Quadratic
from areafl.data import quadratic_suite
from areafl.protocol import (Buffered, ClientMessage, ProtocolError, client_init, client_receive, client_round,
                             read_checkpoint, server_aggregate, server_handle_client, server_init, server_stop,
                             write_checkpoint)
from areafl.rng import stream
from areafl.scheduler import SERVER, DeterministicCycle, TrialSetup, run_trial
from areafl.schedules import Constant, TheoremOne


def server(x0=(0.0, 0.0), n=2, alpha=0.1):
    return server_init(np.asarray(x0), Constant(alpha), Buffered(4), n)


class TestServerInit:
    def test_initial_state(self):
        s = server_init(np.zeros(3), Constant(0.2), Buffered(4), 3)
        assert s.k == 0
        np.testing.assert_array_equal(s.u_s, 0.0)
        x, a = s.broadcast()
        np.testing.assert_array_equal(x, 0.0)
        assert a == 0.2

    def test_decreasing_schedule_starts_at_D(self):
        sched = TheoremOne.from_constants(1.0, 2.0, 2, 0.1)
        assert server_init(np.zeros(1), sched, Buffered(4), 1).broadcast()[1] == pytest.approx(sched.D, rel=1e-15)

    def test_needs_a_client(self):
        with pytest.raises(ValueError):
            server_init(np.zeros(1), Constant(0.1), Buffered(4), 0)


class TestServerHandleClient:
    def test_zero_message(self):
        s = server((1.0, 2.0))
        x, _ = server_handle_client(s, ClientMessage(0, np.zeros(2)))
        np.testing.assert_array_equal(s.u_s, 0.0)
        np.testing.assert_array_equal(x, [1.0, 2.0])
        assert s.k == 1

    def test_accumulates_scaled_residual(self):
        s = server()
        s.u_s[:] = [1.0, 0.0]
        server_handle_client(s, ClientMessage(1, np.array([2.0, 2.0])))
        np.testing.assert_array_equal(s.u_s, [2.0, 1.0])

    def test_reply_uses_incremented_counter(self):
        s = server_init(np.zeros(1), TheoremOne(1.0, 1, 1.0, 1.0), Buffered(4), 1)
        _, a = server_handle_client(s, ClientMessage(0, np.zeros(1)))
        assert a == pytest.approx(1 / (1 / 48 + 1))

    def test_same_client_twice(self):
        s = server()
        server_handle_client(s, ClientMessage(0, np.ones(2)))
        server_handle_client(s, ClientMessage(0, np.ones(2)))
        np.testing.assert_array_equal(s.u_s, [1.0, 1.0])
        assert s.k == 2

    def test_reply_is_a_copy(self):
        s = server()
        x, _ = server_handle_client(s, ClientMessage(0, np.zeros(2)))
        x[0] = 99.0
        assert s.x_s[0] == 0.0

    @pytest.mark.parametrize("msg", [ClientMessage(0, np.zeros(3)), ClientMessage(5, np.zeros(2)),
                                     ClientMessage(-1, np.zeros(2))])
    def test_malformed(self, msg):
        with pytest.raises(ProtocolError):
            server_handle_client(server(), msg)


class TestServerAggregate:
    def test_empty_aggregator(self):
        s = server((1.0, 1.0))
        server_aggregate(s)
        np.testing.assert_array_equal(s.x_s, [1.0, 1.0])
        assert s.k == 1

    def test_hand_arithmetic(self):
        s = server((1.0, 1.0))
        s.u_s[:] = [0.5, -0.5]
        server_aggregate(s)
        np.testing.assert_array_equal(s.x_s, [1.5, 0.5])
        np.testing.assert_array_equal(s.u_s, 0.0)

    def test_second_aggregation_is_noop(self):
        s = server((1.0, 1.0))
        s.u_s[:] = [0.5, -0.5]
        server_aggregate(s)
        server_aggregate(s)
        np.testing.assert_array_equal(s.x_s, [1.5, 0.5])
        assert s.k == 2

    def test_buffered_counter(self):
        s = server(n=2)
        for j in range(4):
            assert not s.criterion_due()
            server_handle_client(s, ClientMessage(j % 2, np.zeros(2)))
        assert s.criterion_due()
        server_aggregate(s)
        assert not s.criterion_due()


class TestClientRound:
    def test_one_step_by_hand(self):
        c = client_init(0, np.array([2.0]), 0.5, 1, Quadratic(np.eye(1), np.zeros(1)))
        msg = client_round(c)
        np.testing.assert_array_equal(msg.m, [-1.0])
        np.testing.assert_array_equal(c.y, [1.0])
        assert msg.sender == 0

    def test_fixed_point_sends_zero(self):
        obj = Quadratic(np.eye(1), np.array([3.0]))
        c = client_init(0, np.array([3.0]), 0.5, 1, obj)
        np.testing.assert_array_equal(client_round(c).m, [0.0])

    def test_two_steps_equal_two_single_steps(self):
        obj = Quadratic(np.array([1.0, 4.0]), np.array([1.0, -2.0]))
        noise = NoiseModel("gaussian", 1.0)
        a = client_init(0, np.ones(2), 0.1, 2, obj, noise)
        client_round(a, stream(0, "noise", 0, 0))
        b = client_init(0, np.ones(2), 0.1, 1, obj, noise)
        rng = stream(0, "noise", 0, 0)
        client_round(b, rng)
        client_receive(b, b.y, 0.1)
        client_round(b, rng)
        np.testing.assert_array_equal(a.y, b.y)

    def test_alpha_changes_only_on_reply(self):
        c = client_init(0, np.zeros(1), 0.3, 1, Quadratic(np.eye(1), np.ones(1)))
        client_round(c)
        assert c.cached_alpha == 0.3
        client_receive(c, np.zeros(1), 0.1)
        assert c.cached_alpha == 0.1

    def test_memory_starts_at_initial_model(self):
        c = client_init(2, np.array([4.0, 5.0]), 0.1, 3, Quadratic(np.eye(2), np.zeros(2)))
        np.testing.assert_array_equal(c.y, [4.0, 5.0])


class TestStop:
    def test_zero_budget(self):
        prob = quadratic_suite([np.eye(2)] * 2, [[1.0, 0.0], [0.0, 1.0]])
        res = run_trial(TrialSetup(prob, schedule=Constant(0.1), event_model=DeterministicCycle((0, 1, SERVER), 2),
                                   K=0, x0=np.array([3.0, 3.0])))
        np.testing.assert_array_equal(res.x_s, [3.0, 3.0])
        assert len(res.events) == 0
        assert len(res.metrics) == 1 and res.metrics.wall_time == [0.0]

    def test_no_messages_after_stop(self):
        s = server()
        final = server_stop(s)
        with pytest.raises(ProtocolError):
            server_handle_client(s, ClientMessage(0, np.zeros(2)))
        with pytest.raises(ProtocolError):
            server_aggregate(s)
        np.testing.assert_array_equal(final, 0.0)


class TestConservation:
    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(-1, 2), min_size=1, max_size=60), st.integers(1, 3), st.integers(0, 1000))
    def test_identity_on_arbitrary_sequences(self, events, M, seed):
        """x_s + u_s equals the mean client memory after every event."""
        rng = np.random.default_rng(seed)
        objs = [Quadratic(rng.uniform(0.5, 2, 2), rng.standard_normal(2)) for _ in range(3)]
        s = server_init(rng.standard_normal(2), Constant(0.2), Buffered(10**9), 3)
        x, a = s.broadcast()
        clients = [client_init(i, x, a, M, objs[i], NoiseModel("gaussian", 1.0)) for i in range(3)]
        for e in events:
            if e == SERVER:
                server_aggregate(s)
            else:
                c = clients[e]
                msg = client_round(c, stream(seed, "noise", e, c.rounds))
                client_receive(c, *server_handle_client(s, msg))
            ybar = np.mean([c.y for c in clients], axis=0)
            np.testing.assert_allclose(s.x_s + s.u_s, ybar, atol=1e-12 * (1 + np.abs(ybar).max()))

    def test_message_window_sum(self):
        """Between aggregations u_s is exactly the scaled sum of the messages received."""
        rng = np.random.default_rng(2)
        s = server_init(np.zeros(3), Constant(0.1), Buffered(4), 4)
        window = []
        for _ in range(3):
            for _ in range(5):
                m = rng.standard_normal(3)
                window.append(m)
                server_handle_client(s, ClientMessage(int(rng.integers(4)), m))
            expected = np.zeros(3)
            for m in window:
                expected += m / 4
            np.testing.assert_array_equal(s.u_s, expected)
            server_aggregate(s)
            window.clear()


class TestPermutation:
    def test_relabeling_clients_keeps_trajectory(self):
        rng = np.random.default_rng(11)
        Qs = [rng.uniform(0.5, 3, 2) for _ in range(4)]
        cs = [rng.standard_normal(2) for _ in range(4)]
        order = [int(v) for v in rng.integers(-1, 4, 400)]
        perm = [2, 0, 3, 1]  # old label i becomes perm[i]
        inv = np.argsort(perm)

        def run(Qs, cs, order):
            prob = quadratic_suite(Qs, cs)
            setup = TrialSetup(prob, schedule=Constant(0.1), event_model=DeterministicCycle(tuple(order), 4),
                               criterion=protocol.PoissonServer(), K=len(order), record_states=True)
            return np.asarray(run_trial(setup).trajectory)

        a = run(Qs, cs, order)
        b = run([Qs[j] for j in inv], [cs[j] for j in inv], [e if e == SERVER else perm[e] for e in order])
        np.testing.assert_array_equal(a, b)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        x = np.array([1.5, -0.0, np.pi, 1e-300])
        write_checkpoint(tmp_path / "x.bin", x)
        np.testing.assert_array_equal(read_checkpoint(tmp_path / "x.bin"), x)
        raw = (tmp_path / "x.bin").read_bytes()
        assert raw[:8] == (4).to_bytes(8, "little")
        assert len(raw) == 8 + 32

    def test_truncated(self, tmp_path):
        write_checkpoint(tmp_path / "x.bin", np.ones(3))
        data = (tmp_path / "x.bin").read_bytes()
        (tmp_path / "x.bin").write_bytes(data[:-4])
        with pytest.raises(ProtocolError):
            read_checkpoint(tmp_path / "x.bin")
