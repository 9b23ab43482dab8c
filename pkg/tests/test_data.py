import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from epps.data import (
    AugmentParams,
    DatasetSplits,
    FolderDataset,
    InMemoryDataset,
    Sample,
    SegmentationSet,
    apply_augment,
    augment,
    draw_augment,
    load_dataset,
    load_mask,
    split_ids,
    split_sizes,
)
from epps.edges import EdgeOperator, edge_map
from epps.errors import ConfigError, DatasetIntegrityError, ValidationError
from epps.synthetic import circle_samples


def make_sample(mask: np.ndarray, sample_id="s") -> Sample:
    h, w = mask.shape
    rng = np.random.default_rng(0)
    return Sample(
        image=torch.from_numpy(rng.random((3, h, w), dtype=np.float32)),
        mask=torch.from_numpy(mask[None].astype(np.float32)),
        edge=torch.from_numpy(edge_map(mask)[None].astype(np.float32)),
        id=sample_id,
    )


class TestSplits:
    def test_612(self):
        assert split_sizes(612) == (490, 61, 61)
        s = split_ids([f"{i:04d}" for i in range(612)], seed=0)
        assert (len(s.train), len(s.val), len(s.test)) == (490, 61, 61)

    def test_10(self):
        s = split_ids([str(i) for i in range(10)], seed=5)
        assert (len(s.train), len(s.val), len(s.test)) == (8, 1, 1)

    def test_disjoint_cover(self):
        ids = [f"x{i}" for i in range(37)]
        s = split_ids(ids, seed=2)
        assert set(s.train) | set(s.val) | set(s.test) == set(ids)
        assert len(s.train) + len(s.val) + len(s.test) == len(ids)

    def test_determinism_many_seeds(self):
        ids = [f"img{i}" for i in range(50)]
        for seed in range(100):
            assert split_ids(ids, seed) == split_ids(list(reversed(ids)), seed)

    def test_manifest_roundtrip(self, tmp_path):
        s = split_ids([str(i) for i in range(20)], seed=1)
        s.save(tmp_path / "m.json")
        assert DatasetSplits.load(tmp_path / "m.json") == s
        d = json.loads((tmp_path / "m.json").read_text())
        assert set(d) == {"seed", "train", "val", "test"}

    def test_empty(self):
        with pytest.raises(DatasetIntegrityError):
            split_ids([], 0)


class TestFolder:
    def test_load(self, folder_dataset):
        splits, ds = load_dataset(folder_dataset, resolution=32, seed=0)
        assert (len(splits.train), len(splits.val), len(splits.test)) == (8, 1, 1)
        s = ds.get(splits.train[0])
        assert s.image.shape == (3, 32, 32) and s.mask.shape == (1, 32, 32) and s.edge.shape == (1, 32, 32)
        assert 0 <= s.image.min() and s.image.max() <= 1
        assert set(s.mask.unique().tolist()) <= {0.0, 1.0}
        assert set(s.edge.unique().tolist()) <= {0.0, 1.0}

    def test_same_seed_same_splits(self, folder_dataset):
        a, _ = load_dataset(folder_dataset, 32, seed=7)
        b, _ = load_dataset(folder_dataset, 32, seed=7)
        assert a.to_json() == b.to_json()

    def test_missing_dir(self, tmp_path):
        with pytest.raises(ConfigError):
            FolderDataset(tmp_path / "nope")

    def test_unmatched_image(self, folder_dataset):
        Image.fromarray(np.zeros((8, 8, 3), np.uint8)).save(folder_dataset / "images" / "orphan.png")
        with pytest.raises(DatasetIntegrityError, match="orphan.png"):
            FolderDataset(folder_dataset)

    def test_empty(self, tmp_path):
        (tmp_path / "images").mkdir()
        (tmp_path / "masks").mkdir()
        with pytest.raises(DatasetIntegrityError):
            FolderDataset(tmp_path)

    def test_mask_threshold(self, tmp_path):
        arr = np.array([[0, 127], [128, 255]], dtype=np.uint8)
        Image.fromarray(arr).save(tmp_path / "m.png")
        np.testing.assert_array_equal(load_mask(tmp_path / "m.png"), [[0, 0], [1, 1]])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(4, 40), st.integers(8, 64), st.integers(0, 2**31 - 1))
    def test_nearest_resize_binary(self, size, res, seed):
        rng = np.random.default_rng(seed)
        mask = (rng.random((size, size)) > 0.5).astype(np.uint8) * 255
        img = Image.fromarray(mask).resize((res, res), Image.NEAREST)
        assert set(np.unique((np.asarray(img) > 127).astype(np.uint8))) <= {0, 1}


class TestAugment:
    def test_identity(self):
        s = circle_samples(1, 32)[0]
        out = apply_augment(s, AugmentParams())
        assert torch.equal(out.image, s.image) and torch.equal(out.mask, s.mask) and torch.equal(out.edge, s.edge)

    def test_hflip_involution(self):
        s = circle_samples(1, 32, seed=4)[0]
        p = AugmentParams(hflip=True)
        back = apply_augment(apply_augment(s, p), p)
        assert torch.equal(back.image, s.image)
        assert torch.equal(back.mask, s.mask)
        assert torch.equal(back.edge, s.edge)

    def test_rotate_90_single_pixel(self):
        r, c = 10, 200
        mask = np.zeros((256, 256), dtype=np.uint8)
        mask[r, c] = 1
        out = apply_augment(make_sample(mask), AugmentParams(angle=90.0))
        # counter-clockwise about the centre (127.5, 127.5): (r, c) -> (255 - c, r)
        assert out.mask.sum() == 1
        assert out.mask[0, 255 - c, r] == 1

    def test_flip_preserves_count_and_shapes(self):
        s = circle_samples(1, 64, seed=1)[0]
        for p in (AugmentParams(vflip=True), AugmentParams(hflip=True), AugmentParams(vflip=True, hflip=True)):
            out = apply_augment(s, p)
            assert out.mask.sum() == s.mask.sum()
            assert out.image.shape == s.image.shape

    def test_edges_regenerated_from_mask(self):
        op = EdgeOperator("sobel")
        s = circle_samples(1, 64, seed=2, op=op)[0]
        out = augment(s, np.random.default_rng(3), op)
        np.testing.assert_array_equal(out.edge[0].numpy(), edge_map(out.mask[0].numpy().astype(np.uint8), op))

    def test_rotation_only_clips(self):
        mask = np.zeros((64, 64), dtype=np.uint8)
        mask[24:40, 24:40] = 1  # well inside the frame, so nothing leaves it
        out = apply_augment(make_sample(mask), AugmentParams(angle=20.0))
        assert abs(int(out.mask.sum()) - int(mask.sum())) <= 0.1 * mask.sum()
        assert set(out.mask.unique().tolist()) <= {0.0, 1.0}

    def test_zero_mask(self):
        out = augment(make_sample(np.zeros((32, 32), np.uint8)), np.random.default_rng(0))
        assert out.mask.sum() == 0 and out.edge.sum() == 0

    def test_draw_range(self):
        rng = np.random.default_rng(0)
        angles = [draw_augment(rng).angle for _ in range(500)]
        assert -30 <= min(angles) and max(angles) <= 30

    def test_sample_validation(self):
        with pytest.raises(ValidationError):
            Sample(torch.zeros(3, 8, 8), torch.zeros(1, 8, 4), torch.zeros(1, 8, 8), "bad")

    def test_segmentation_set_reproducible(self):
        ds = InMemoryDataset(circle_samples(4, 32))
        a = SegmentationSet(ds, ds.ids, augment=True, seed=1)
        b = SegmentationSet(ds, ds.ids, augment=True, seed=1)
        a.set_epoch(3)
        b.set_epoch(3)
        for i in range(4):
            assert all(torch.equal(x, y) for x, y in zip(a[i], b[i]))
