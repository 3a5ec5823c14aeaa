import struct

import numpy as np
import pytest

from foml import datasets, streams
from foml.models import LabeledBatch


def glyph_base(n_per_class=40, seed=0):
    return datasets.make_glyph_dataset(n_per_class=n_per_class, seed=seed)


class TestGlyphDataset:
    def test_shapes_and_range(self):
        images, labels = glyph_base()
        assert images.shape == (400, 8, 8)
        assert images.min() >= 0.0 and images.max() <= 1.0
        assert sorted(np.unique(labels)) == list(range(10))

    def test_deterministic(self):
        a_img, a_lab = glyph_base(seed=5)
        b_img, b_lab = glyph_base(seed=5)
        assert np.array_equal(a_img, b_img) and np.array_equal(a_lab, b_lab)

    def test_templates_distinct(self):
        t = datasets.glyph_templates()
        for i in range(10):
            for j in range(i + 1, 10):
                assert np.abs(t[i] - t[j]).sum() > 4


class TestRainbowTransform:
    def test_identity_transform_preserves_structure(self):
        img = datasets.glyph_templates()[3]
        for color in range(streams.NUM_COLORS):
            out = streams.rainbow_transform(img, color, 0, 0)
            assert out.shape == (3, 8, 8)
            bg = streams.COLORS[color]
            channel = int(np.argmin(bg))  # most informative channel
            recovered = (out[channel] - bg[channel]) / (1.0 - bg[channel])
            np.testing.assert_allclose(recovered, img, atol=1e-12)

    def test_rotations_and_scales_change_pixels(self):
        img = datasets.glyph_templates()[0]
        base = streams.rainbow_transform(img, 0, 0, 0)
        assert not np.array_equal(base, streams.rainbow_transform(img, 0, 0, 1))
        assert not np.array_equal(base, streams.rainbow_transform(img, 0, 1, 0))

    def test_all_56_transforms_distinct(self):
        ts = streams.all_rainbow_transforms()
        assert len(ts) == 56
        assert len(set(ts)) == 56


class TestRainbowStream:
    def test_56_distinct_tasks_per_pass(self):
        stream = streams.make_rainbow_stream(glyph_base(), samples_per_task=20, seed=3)
        triples = [t.transform for t in stream.tasks]
        assert len(triples) == 56
        assert len(set(triples)) == 56

    def test_equal_seeds_give_identical_streams(self):
        s1 = streams.make_rainbow_stream(glyph_base(), samples_per_task=20, seed=9)
        s2 = streams.make_rainbow_stream(glyph_base(), samples_per_task=20, seed=9)
        assert [t.transform for t in s1.tasks] == [t.transform for t in s2.tasks]
        for _ in range(6):
            b1, b2 = s1.next_batch(), s2.next_batch()
            assert np.array_equal(b1.batch.inputs, b2.batch.inputs)
            assert np.array_equal(b1.batch.labels, b2.batch.labels)

    def test_different_seeds_change_task_order(self):
        s1 = streams.make_rainbow_stream(glyph_base(), samples_per_task=20, seed=1)
        s2 = streams.make_rainbow_stream(glyph_base(), samples_per_task=20, seed=2)
        assert [t.transform for t in s1.tasks] != [t.transform for t in s2.tasks]

    def test_first_batch_is_step_zero_with_n_items(self):
        stream = streams.make_rainbow_stream(glyph_base(), samples_per_task=20, seed=0)
        sb = stream.next_batch()
        assert sb.step_index == 0
        assert sb.batch.size == 10

    def test_900_sample_task_is_90_batches(self):
        base = datasets.make_glyph_dataset(n_per_class=120, seed=1)
        stream = streams.make_rainbow_stream(base, samples_per_task=900, seed=0)
        assert stream.steps_per_task == 90
        first_task = stream.tasks[0]
        for _ in range(90):
            sb = stream.next_batch()
            assert sb.true_task == first_task
        assert stream.next_batch().true_task == stream.tasks[1]

    def test_concatenated_batches_reproduce_sequence(self):
        stream = streams.make_rainbow_stream(
            glyph_base(), samples_per_task=20, seed=4, num_tasks=3
        )
        seen = []
        while (sb := stream.next_batch()) is not None:
            seen.append(sb.batch.inputs)
        replay = streams.make_rainbow_stream(
            glyph_base(), samples_per_task=20, seed=4, num_tasks=3
        )
        again = []
        while (sb := replay.next_batch()) is not None:
            again.append(sb.batch.inputs)
        assert len(seen) == 3 * 2
        np.testing.assert_array_equal(np.concatenate(seen), np.concatenate(again))

    def test_heldout_disjoint_from_stream_and_sized(self):
        stream = streams.make_rainbow_stream(
            glyph_base(), samples_per_task=40, seed=7, heldout_fraction=0.2
        )
        held = stream.heldout_for(0)
        assert held.size == 10  # pool 50, stream 40
        sb = stream.next_batch()
        assert sb.batch.size == 10

    def test_pool_exceeding_base_rejected(self):
        small = datasets.make_glyph_dataset(n_per_class=2, seed=0)
        with pytest.raises(streams.StreamConfigError, match="exceeds"):
            streams.make_rainbow_stream(small, samples_per_task=100, seed=0)

    def test_seek_matches_sequential_position(self):
        s1 = streams.make_rainbow_stream(glyph_base(), samples_per_task=20, seed=5)
        for _ in range(5):
            s1.next_batch()
        target = s1.next_batch()
        s2 = streams.make_rainbow_stream(glyph_base(), samples_per_task=20, seed=5)
        s2.seek(5)
        np.testing.assert_array_equal(s2.next_batch().batch.inputs, target.batch.inputs)


class TestPairStream:
    def make(self, num_tasks=6, seed=0, **kwargs):
        return streams.make_pair_stream(
            glyph_base(), num_tasks=num_tasks, samples_per_task=20, seed=seed, **kwargs
        )

    def test_consecutive_tasks_share_exactly_two_classes(self):
        stream = self.make(num_tasks=12, seed=3)
        for a, b in zip(stream.tasks, stream.tasks[1:]):
            assert len(set(a.class_set) & set(b.class_set)) == 2
            assert len(b.class_set) == 5

    def test_reflexive_pair_is_same(self):
        stream = self.make()
        # same-instance pair falls under the same-class labeling rule
        img = stream.base_images[0]
        batch = LabeledBatch((img[None], img[None].copy()), np.array([1]))
        assert batch.labels[0] == 1

    def test_positive_fraction_near_half(self):
        stream = streams.make_pair_stream(
            glyph_base(), num_tasks=5, samples_per_task=200, seed=11
        )
        labels = []
        while (sb := stream.next_batch()) is not None:
            labels.extend(sb.batch.labels.tolist())
        labels = np.asarray(labels)
        assert labels.size == 1000
        assert 0.45 <= labels.mean() <= 0.55

    def test_pairs_drawn_from_task_classes(self):
        stream = self.make(seed=6)
        sb = stream.next_batch()
        a, b = sb.batch.inputs
        assert a.shape == b.shape == (10, 1, 8, 8)

    def test_insufficient_classes_rejected(self):
        few = datasets.make_glyph_dataset(n_per_class=10, seed=0, num_classes=6)
        with pytest.raises(streams.StreamConfigError):
            streams.make_pair_stream(few, num_tasks=3, samples_per_task=20, seed=0)

    def test_deterministic_under_seed(self):
        s1, s2 = self.make(seed=8), self.make(seed=8)
        assert [t.class_set for t in s1.tasks] == [t.class_set for t in s2.tasks]
        b1, b2 = s1.next_batch(), s2.next_batch()
        np.testing.assert_array_equal(b1.batch.inputs[0], b2.batch.inputs[0])
        np.testing.assert_array_equal(b1.batch.labels, b2.batch.labels)


class TestReplayBuffer:
    def batch(self, n=10, seed=0):
        rng = np.random.default_rng(seed)
        return LabeledBatch(rng.random((n, 1, 4, 4)), rng.integers(0, 10, size=n))

    def test_append_counts(self):
        buf = streams.ReplayBuffer(seed=0)
        assert len(buf) == 0
        buf.append(self.batch(), step_index=0)
        assert len(buf) == 10
        first = [buf.entry(i) for i in range(10)]
        buf.append(self.batch(seed=1), step_index=1)
        buf.append(self.batch(seed=2), step_index=2)
        assert len(buf) == 30
        for i, (inp, lab, step) in enumerate(first):
            inp2, lab2, step2 = buf.entry(i)
            assert np.array_equal(inp, inp2) and lab == lab2 and step == step2 == 0

    def test_singleton_buffer_sampling(self):
        buf = streams.ReplayBuffer(seed=0)
        buf.append(self.batch(n=1, seed=3))
        out = buf.sample_random(4)
        assert out.size == 4
        for i in range(4):
            np.testing.assert_array_equal(out.inputs[i], buf.entry(0)[0])

    def test_empty_buffer_rejected(self):
        with pytest.raises(ValueError):
            streams.ReplayBuffer(seed=0).sample_random(2)

    def test_sampling_never_mutates_count(self):
        buf = streams.ReplayBuffer(seed=0)
        buf.append(self.batch())
        for _ in range(5):
            buf.sample_random(7)
        assert len(buf) == 10

    def test_sampled_entries_are_members(self):
        buf = streams.ReplayBuffer(seed=1)
        b = self.batch(n=6, seed=4)
        buf.append(b)
        out = buf.sample_random(20)
        for i in range(20):
            assert any(np.array_equal(out.inputs[i], b.inputs[j]) for j in range(6))

    def test_uniformity_chi_square(self):
        buf = streams.ReplayBuffer(seed=123)
        buf.append(self.batch(n=10, seed=5))
        counts = np.zeros(10)
        draws = 10_000
        out = buf.sample_random(draws)
        # identify each sampled input by matching the stored entries
        keys = {buf.entry(i)[0].tobytes(): i for i in range(10)}
        for i in range(draws):
            counts[keys[out.inputs[i].tobytes()]] += 1
        expected = draws / 10.0
        chi2 = float(np.sum((counts - expected) ** 2 / expected))
        assert chi2 < 21.666  # chi-square df=9 critical value at p=0.01
        sigma = np.sqrt(draws * 0.1 * 0.9)
        assert np.all(np.abs(counts - expected) <= 3 * sigma)

    def test_eviction_knob(self):
        buf = streams.ReplayBuffer(seed=0, max_size=15)
        buf.append(self.batch(seed=0))
        buf.append(self.batch(seed=1))
        assert len(buf) == 15

    def test_state_round_trip(self):
        buf = streams.ReplayBuffer(seed=7)
        buf.append(self.batch(seed=6))
        buf.sample_random(3)
        restored = streams.ReplayBuffer.from_state(buf.state())
        a = buf.sample_random(5)
        b = restored.sample_random(5)
        np.testing.assert_array_equal(a.inputs, b.inputs)


class TestStreamBatchInterface:
    def test_learner_facing_record_has_no_task_field(self):
        assert set(LabeledBatch.__dataclass_fields__) == {"inputs", "labels"}

    def test_true_task_only_on_side_channel(self):
        fields = set(streams.StreamBatch.__dataclass_fields__)
        assert "true_task" in fields
        assert "true_task" not in LabeledBatch.__dataclass_fields__


class TestFomldsFormat:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        images = rng.random((12, 3, 8, 8))
        labels = rng.integers(0, 10, size=12)
        path = tmp_path / "data.foml"
        datasets.save_dataset(path, images, labels)
        back_img, back_lab = datasets.load_dataset(path)
        assert back_img.shape == (12, 3, 8, 8)
        np.testing.assert_array_equal(back_lab, labels)
        assert np.max(np.abs(back_img - images)) <= 0.5 / 255.0 + 1e-12

    def test_header_written(self, tmp_path):
        path = tmp_path / "data.foml"
        datasets.save_dataset(path, np.zeros((2, 1, 4, 4)), np.array([0, 1]))
        first = open(path, "rb").readline()
        assert first == b"FOMLDS v1 2 4 4 1\n"

    @pytest.mark.parametrize(
        "header",
        [b"WRONG v1 2 4 4 1\n", b"FOMLDS v2 2 4 4 1\n", b"FOMLDS v1 2 4 x 1\n", b"FOMLDS v1\n"],
    )
    def test_bad_headers_rejected(self, tmp_path, header):
        path = tmp_path / "bad.foml"
        path.write_bytes(header + bytes(34))
        with pytest.raises(datasets.DatasetError):
            datasets.load_dataset(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "short.foml"
        path.write_bytes(b"FOMLDS v1 2 4 4 1\n" + bytes(10))
        with pytest.raises(datasets.DatasetError, match="payload"):
            datasets.load_dataset(path)


class TestIdxConversion:
    def write_idx(self, tmp_path, images, labels):
        ip = tmp_path / "imgs.idx"
        lp = tmp_path / "labs.idx"
        n, r, c = images.shape
        ip.write_bytes(struct.pack(">IIII", 0x803, n, r, c) + images.astype(np.uint8).tobytes())
        lp.write_bytes(struct.pack(">II", 0x801, n) + labels.astype(np.uint8).tobytes())
        return ip, lp

    def test_convert(self, tmp_path):
        rng = np.random.default_rng(1)
        images = rng.integers(0, 256, size=(5, 6, 6))
        labels = rng.integers(0, 10, size=5)
        ip, lp = self.write_idx(tmp_path, images, labels)
        out = tmp_path / "out.foml"
        n = datasets.convert_idx(ip, lp, out)
        assert n == 5
        back_img, back_lab = datasets.load_dataset(out)
        np.testing.assert_array_equal(back_lab, labels)
        np.testing.assert_array_equal((back_img[:, 0] * 255).round().astype(int), images)

    def test_wrong_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.idx"
        p.write_bytes(struct.pack(">IIII", 0x999, 1, 2, 2) + bytes(4))
        with pytest.raises(datasets.DatasetError, match="magic"):
            datasets._read_idx_images(p)
