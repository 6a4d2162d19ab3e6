import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from onepass.buffer import (
    BufferConfig,
    CodecError,
    IdentityCodec,
    Quant8Codec,
    ReplayBuffer,
    inclusion_probability,
    make_codec,
)

DIM = 4


def make_buffer(capacity=10, beta=1.5, seed=0, codec="identity"):
    return ReplayBuffer(BufferConfig(capacity, beta, codec), DIM, np.random.default_rng(seed))


def fill(buffer, n, start=0):
    for i in range(start, start + n):
        buffer.offer(np.full(DIM, float(i)), i % 3, 1.0, step=i)


class TestInclusionProbability:
    def test_formula(self):
        assert inclusion_probability(300, BufferConfig(100, 1.5)) == 0.5

    def test_clipped(self):
        assert inclusion_probability(100, BufferConfig(100, 1.5)) == 1.0

    def test_zero_seen(self):
        with pytest.raises(ValueError):
            inclusion_probability(0, BufferConfig(100))

    @pytest.mark.parametrize("n", [150, 300, 1000])
    def test_monte_carlo(self, n):
        config = BufferConfig(100, 1.5)
        buffer = ReplayBuffer(config, DIM, np.random.default_rng(n))
        fill(buffer, 100)
        x = np.zeros(DIM)
        hits = 0
        for _ in range(10_000):
            buffer.n_seen = n - 1
            hits += buffer.offer(x, 0, 1.0) is not None
        assert abs(hits / 10_000 - min(1.0, 1.5 * 100 / n)) <= 0.02


class TestBufferConfig:
    @pytest.mark.parametrize(
        "kwargs", [dict(capacity=0), dict(capacity=5, beta=0.0), dict(capacity=5, codec_id="jpeg")]
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            BufferConfig(**kwargs)


class TestInsert:
    def test_warmup_fills_in_order(self):
        buffer = make_buffer(capacity=10, beta=1.5)
        slots = [buffer.offer(np.full(DIM, i), 0, 1.0) for i in range(15)]
        assert slots[:10] == list(range(10))
        assert buffer.is_full()
        # n <= beta * m: admission is certain, so the last five replace something
        assert all(s is not None for s in slots[10:])

    def test_skip_leaves_state_identical(self):
        buffer = make_buffer(capacity=5, beta=1.0, seed=2)
        fill(buffer, 5)
        skipped = False
        for i in range(200):
            payloads = list(buffer._payloads)
            labels = buffer.labels.copy()
            leaves = buffer.tree.leaves.copy()
            if buffer.offer(np.full(DIM, -1.0), 2, 0.5) is None:
                assert buffer._payloads == payloads
                np.testing.assert_array_equal(buffer.labels, labels)
                np.testing.assert_array_equal(buffer.tree.leaves, leaves)
                skipped = True
        assert skipped

    def test_observe_required(self):
        with pytest.raises(RuntimeError):
            make_buffer().try_insert(np.zeros(DIM), 0, 1.0)

    def test_priority_range_checked(self):
        buffer = make_buffer()
        buffer.observe()
        with pytest.raises(ValueError):
            buffer.try_insert(np.zeros(DIM), 0, 1e-5)
        with pytest.raises(ValueError):
            buffer.try_insert(np.zeros(DIM), 0, 1.5)

    def test_encoding_failure_leaves_buffer_unchanged(self):
        buffer = make_buffer()
        buffer.observe()
        with pytest.raises(CodecError):
            buffer.try_insert(np.zeros(DIM + 1), 0, 1.0)
        assert len(buffer) == 0
        assert buffer.tree.total == 0.0

    def test_tree_tracks_priorities(self):
        buffer = make_buffer(capacity=3)
        for p in (0.2, 0.3, 0.5):
            buffer.offer(np.zeros(DIM), 0, p)
        assert buffer.tree.total == pytest.approx(1.0)
        np.testing.assert_allclose(buffer.priorities(np.array([0, 1, 2])), [0.2, 0.3, 0.5])

    def test_size_never_exceeds_capacity(self):
        buffer = make_buffer(capacity=7, beta=3.0)
        for i in range(500):
            buffer.offer(np.zeros(DIM), 0, 1.0)
            assert len(buffer) == min(i + 1, 7)

    def test_uniform_eviction(self):
        m = 50
        buffer = make_buffer(capacity=m, beta=1.0, seed=4)
        fill(buffer, m)
        counts = np.zeros(m)
        x = np.zeros(DIM)
        trials = 10_000
        for _ in range(trials):
            buffer.n_seen = 0  # keeps admission certain
            counts[buffer.offer(x, 0, 1.0)] += 1
        p = 1 / m
        sd = np.sqrt(trials * p * (1 - p))
        assert np.all(np.abs(counts - trials * p) <= 3 * sd)

    def test_freshness_factor_favours_recent_examples(self):
        def recent_share(beta):
            shares = []
            for seed in range(40):
                buffer = make_buffer(capacity=50, beta=beta, seed=seed)
                x = np.zeros(DIM)
                for _ in range(4000):
                    buffer.offer(x, 0, 1.0)
                shares.append(np.mean(buffer.stream_index >= 2000))
            return np.mean(shares)

        biased, plain = recent_share(1.5), recent_share(1.0)
        assert plain == pytest.approx(0.5, abs=0.05)
        assert biased > plain

    def test_same_seed_same_state(self):
        a, b = make_buffer(capacity=8, seed=42), make_buffer(capacity=8, seed=42)
        rng = np.random.default_rng(0)
        for i in range(300):
            x = rng.normal(size=DIM)
            a.offer(x, i % 3, 0.5)
            b.offer(x, i % 3, 0.5)
        assert a._payloads == b._payloads
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(a.tree._nodes, b.tree._nodes)


class TestReadSlot:
    def test_round_trip(self):
        buffer = make_buffer()
        x = np.array([0.1, -2.5, 1e300, 3.0])
        slot = buffer.offer(x, 2, 1.0)
        got, label = buffer.read_slot(slot)
        np.testing.assert_array_equal(got, x)
        assert label == 2

    def test_unoccupied(self):
        buffer = make_buffer()
        fill(buffer, 2)
        with pytest.raises(IndexError):
            buffer.read_slot(2)
        with pytest.raises(IndexError):
            buffer.read_slots(np.array([0, 5]))

    def test_read_slots_matches_read_slot(self):
        buffer = make_buffer(capacity=6)
        fill(buffer, 6)
        xs, ys = buffer.read_slots(np.array([3, 0, 3]))
        for row, slot in zip(range(3), [3, 0, 3]):
            x, y = buffer.read_slot(slot)
            np.testing.assert_array_equal(xs[row], x)
            assert ys[row] == y

    def test_quantized_round_trip_within_tolerance(self):
        buffer = make_buffer(capacity=50, codec="quant8")
        rng = np.random.default_rng(0)
        for _ in range(50):
            x = rng.normal(0, 3, DIM)
            slot = buffer.offer(x, 1, 1.0)
            got, _ = buffer.read_slot(slot)
            # oracle: quantize-dequantize written out directly
            lo, hi = x.min(), x.max()
            step = (hi - lo) / 255
            expected = lo + np.round((x - lo) / step) * step
            np.testing.assert_allclose(got, expected, atol=1e-12)
            assert np.max(np.abs(got - x)) <= Quant8Codec.tolerance(x) + 1e-12

    def test_corrupt_payload(self):
        buffer = make_buffer()
        fill(buffer, 1)
        buffer._payloads[0] = b"\x00" * 3
        with pytest.raises(CodecError):
            buffer.read_slot(0)


class TestCodecs:
    @given(hnp.arrays(np.float64, 7, elements=st.floats(allow_nan=False, allow_infinity=False)))
    def test_identity_bit_exact(self, x):
        codec = IdentityCodec(7)
        out = codec.decode(codec.encode(x))
        assert out.tobytes() == x.astype("<f8").tobytes()

    def test_quant8_constant_vector(self):
        codec = Quant8Codec(3)
        np.testing.assert_array_equal(codec.decode(codec.encode(np.full(3, 2.5))), np.full(3, 2.5))

    def test_quant8_smaller_than_identity(self):
        x = np.arange(64.0)
        assert len(make_codec("quant8", 64).encode(x)) < len(make_codec("identity", 64).encode(x)) / 4

    def test_quant8_rejects_nan(self):
        with pytest.raises(CodecError):
            Quant8Codec(2).encode(np.array([np.nan, 1.0]))

    def test_unknown_codec(self):
        with pytest.raises(ValueError):
            make_codec("jpeg", 3)
