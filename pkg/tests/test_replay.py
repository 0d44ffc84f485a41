import io

import numpy as np
import pytest
from scipy import stats

from acrl.mdp import EnvState, Preference
from acrl.replay import DualReplay, NotWarmedUp, Transition

LAM = Preference(0.5, 0.5)


def feasible_t(i, ds=2, da=1):
    s = EnvState(np.full(ds, float(i)), i, False)
    return Transition(s, np.full(da, 0.1), 0.5, 0.0, EnvState(np.full(ds, i + 1.0), i + 1, False), False, LAM)


def loop_t(i, K=0.1, ds=2, da=1):
    s = EnvState(np.full(ds, float(i)), i, False)
    return Transition(s, np.full(da, 9.0), 0.0, -K, s, False, LAM)


def filled(n_r, n_a, **kw):
    buf = DualReplay(2, 1, **kw)
    for i in range(n_r):
        buf.push(feasible_t(i))
    for i in range(n_a):
        buf.push(loop_t(i))
    return buf


class TestPush:
    def test_routing(self):
        buf = DualReplay(2, 1)
        buf.push(loop_t(0))
        assert (len(buf.d_a), len(buf.d_r)) == (1, 0)
        buf.push(feasible_t(0))
        assert (len(buf.d_a), len(buf.d_r)) == (1, 1)

    def test_penalty_transition_must_self_loop(self):
        s = EnvState(np.zeros(2), 0, False)
        with pytest.raises(ValueError):
            Transition(s, np.zeros(1), 0.0, -0.1, EnvState(np.ones(2), 1, False), False, LAM)
        with pytest.raises(ValueError):
            Transition(s, np.zeros(1), 0.3, -0.1, s, False, LAM)

    def test_ring_eviction(self):
        buf = DualReplay(1, 1, capacity=1000)
        for i in range(1001):
            buf.push_arrays([float(i)], [0.0], 0.0, 0.0, [0.0], False, [0.5, 0.5])
        assert len(buf.d_r) == 1000
        assert buf.d_r.s[:, 0].min() == 1.0  # the first record is gone
        assert buf.d_r.s[buf.d_r.oldest_index(), 0] == 1.0

    def test_capacity_million(self):
        buf = DualReplay(1, 1)
        ring = buf.d_r
        for i in range(10**6 + 1):
            ring.append(i, 0.0, 0.0, 0.0, 0.0, False, (0.5, 0.5))
        assert len(ring) == 10**6
        assert ring.s[ring.oldest_index(), 0] == 1.0
        assert ring.s[(ring.head - 1) % ring.capacity, 0] == 10**6


class TestSampleMixed:
    def test_default_ratio(self, rng):
        b = filled(500, 500).sample_mixed(256, rng)
        assert b.n_augmented == 51 and len(b) == 256

    def test_eta_zero(self, rng):
        b = filled(500, 500, eta=0.0).sample_mixed(256, rng)
        assert b.n_augmented == 0 and np.all(b.c == 0)

    def test_availability_clamp(self, rng):
        b = filled(500, 3).sample_mixed(256, rng)
        assert b.n_augmented == 3
        # without replacement: all three distinct augmented records appear
        assert len(set(b.s[b.from_augmented, 0])) == 3

    def test_not_warmed_up(self, rng):
        with pytest.raises(NotWarmedUp):
            filled(0, 10).sample_mixed(8, rng)

    def test_sequence_view(self, rng):
        b = filled(20, 20).sample_mixed(10, rng)
        ts = list(b)
        assert len(ts) == 10
        for t, flag in zip(ts, b.from_augmented):
            assert isinstance(t, Transition)
            assert (t.c < 0) == flag
            if flag:
                assert t.s_next.same_point(t.s) and t.r == 0.0

    def test_uniform_within_buffer(self, rng):
        buf = filled(50, 0)
        counts = np.zeros(50)
        for _ in range(400):
            b = buf.sample_mixed(250, rng)
            np.add.at(counts, b.s[:, 0].astype(int), 1)
        assert counts.sum() == 10**5
        assert stats.chisquare(counts).pvalue > 0.001


class TestDecay:
    def test_schedule(self):
        buf = DualReplay(1, 1)
        for _ in range(10_000):
            eta = buf.tick_decay()
        assert eta == pytest.approx(0.18, abs=1e-15)
        for _ in range(20_000):
            eta = buf.tick_decay()
        assert eta == 0.2 * 0.9**3
        assert eta == pytest.approx(0.1458)

    def test_closed_form_matches_stepwise(self):
        buf = DualReplay(1, 1, decay_interval=7, decay_factor=0.5)
        prev = buf.eta
        for t in range(1, 100):
            eta = buf.tick_decay()
            assert eta == 0.2 * 0.5 ** (t // 7)
            assert eta <= prev
            prev = eta

    def test_constant_when_factor_one(self):
        buf = DualReplay(1, 1, decay_factor=1.0)
        for _ in range(25_000):
            buf.tick_decay()
        assert buf.eta == 0.2


def test_checkpoint_roundtrip(rng):
    buf = filled(40, 15, capacity=30)
    for _ in range(123):
        buf.tick_decay()
    fh = io.BytesIO()
    buf.save(fh)
    fh.seek(0)
    back = DualReplay.load(fh)
    assert back.steps_seen == 123 and back.eta == buf.eta
    for a, b in ((buf.d_r, back.d_r), (buf.d_a, back.d_a)):
        assert (a.size, a.head) == (b.size, b.head)
        for name in ("s", "a", "r", "c", "s_next", "done", "lam", "t", "t_next"):
            np.testing.assert_array_equal(getattr(a, name)[: a.size], getattr(b, name)[: b.size])
    r1 = buf.sample_mixed(32, np.random.default_rng(3))
    r2 = back.sample_mixed(32, np.random.default_rng(3))
    np.testing.assert_array_equal(r1.s, r2.s)


def test_checkpoint_rejects_garbage():
    with pytest.raises(ValueError):
        DualReplay.load(io.BytesIO(b"not a buffer"))
