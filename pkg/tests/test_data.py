import numpy as np
import pytest
from PIL import Image

from octseg.data import (CLASS_NAMES, GROUPS, PALETTE, DataError,
                         ManifestEntry, Sample, load_image,
                         load_manifest_samples, load_sample, parse_render,
                         read_manifest, render_labels, save_sample,
                         split_dataset, write_manifest)
from octseg.phantom import PhantomConfig, PhantomError, generate_phantom, \
    layer_thickness

from conftest import make_sample


def write_png(path, arr):
    Image.fromarray(arr.astype(np.uint8), mode="L").save(path)


# ---------------------------------------------------------------- loading

def test_load_sample_scales_to_unit_range(tmp_path):
    img = np.zeros((16, 24), dtype=np.uint8)
    img[0, 0] = 255
    labels = np.zeros((16, 24), dtype=np.uint8)
    write_png(tmp_path / "im.png", img)
    write_png(tmp_path / "lb.png", labels)
    s = load_sample(tmp_path / "im.png", tmp_path / "lb.png")
    assert s.image.dtype == np.float32
    assert s.image[0, 0] == 1.0
    assert s.image[5, 5] == 0.0


def test_load_sample_rejects_label_out_of_range(tmp_path):
    write_png(tmp_path / "im.png", np.zeros((16, 16)))
    bad = np.zeros((16, 16))
    bad[3, 3] = 9
    write_png(tmp_path / "lb.png", bad)
    with pytest.raises(DataError, match="label value"):
        load_sample(tmp_path / "im.png", tmp_path / "lb.png")


def test_load_sample_rejects_dim_mismatch(tmp_path):
    write_png(tmp_path / "im.png", np.zeros((16, 16)))
    write_png(tmp_path / "lb.png", np.zeros((16, 24)))
    with pytest.raises(DataError, match="mismatch"):
        load_sample(tmp_path / "im.png", tmp_path / "lb.png")


def test_load_sample_rejects_indivisible_dims(tmp_path):
    write_png(tmp_path / "im.png", np.zeros((15, 16)))
    write_png(tmp_path / "lb.png", np.zeros((15, 16)))
    with pytest.raises(DataError, match="divisible"):
        load_sample(tmp_path / "im.png", tmp_path / "lb.png")


def test_load_image_checks_divisibility(tmp_path):
    write_png(tmp_path / "im.png", np.zeros((16, 20)))
    with pytest.raises(DataError, match="divisible"):
        load_image(tmp_path / "im.png")


@pytest.mark.parametrize("seed", range(10))
def test_loader_fuzz_random_bytes_error_cleanly(tmp_path, seed):
    rng = np.random.default_rng(seed)
    blob = rng.integers(0, 256, size=rng.integers(0, 4096),
                        dtype=np.uint8).tobytes()
    path = tmp_path / "garbage.png"
    path.write_bytes(blob)
    with pytest.raises(DataError):
        load_image(path)


def test_save_load_roundtrip(tmp_path):
    sample = make_sample(seed=5)
    save_sample(sample, tmp_path / "im.png", tmp_path / "lb.png")
    back = load_sample(tmp_path / "im.png", tmp_path / "lb.png",
                       group=sample.group, sample_id=sample.id)
    assert np.array_equal(back.labels, sample.labels)
    # 8-bit quantization of the float image
    assert np.max(np.abs(back.image - sample.image)) <= 0.5 / 255 + 1e-6


# ---------------------------------------------------------------- phantoms

def test_phantom_contains_all_classes_over_many_seeds():
    config = PhantomConfig.for_size(96, 128)
    for seed in range(50):
        group = GROUPS[seed % 2]
        s = generate_phantom(config, seed, group)
        assert set(int(v) for v in np.unique(s.labels)) == set(range(8)), \
            f"seed {seed} {group}"


def test_phantom_deterministic_per_seed(small_phantom_config):
    a = generate_phantom(small_phantom_config, 12, GROUPS[0])
    b = generate_phantom(small_phantom_config, 12, GROUPS[0])
    assert np.array_equal(a.image, b.image)
    assert np.array_equal(a.labels, b.labels)
    c = generate_phantom(small_phantom_config, 13, GROUPS[0])
    assert not np.array_equal(a.image, c.image)


def test_phantom_image_in_unit_range(phantom_pair):
    for s in phantom_pair:
        assert s.image.min() >= 0.0 and s.image.max() <= 1.0
        assert s.image.dtype == np.float32


def test_glaucoma_group_has_thinner_nerve_layer(small_phantom_config):
    healthy = [layer_thickness(
        generate_phantom(small_phantom_config, seed, GROUPS[0]), 1)
        for seed in range(50)]
    glaucoma = [layer_thickness(
        generate_phantom(small_phantom_config, seed, GROUPS[1]), 1)
        for seed in range(50)]
    assert np.mean(glaucoma) < np.mean(healthy)


def test_phantom_rejects_overfull_stack():
    with pytest.raises(PhantomError):
        PhantomConfig(height=64, width=64)  # unscaled ranges cannot fit


def test_phantom_labels_track_image_boundaries(phantom_pair):
    # label transitions should coincide with strong vertical gradients:
    # the mean absolute intensity step across boundary rows must exceed the
    # within-tissue step (labels and image come from one geometry)
    s = phantom_pair[0]
    dimg = np.abs(np.diff(s.image, axis=0))
    boundary = (np.diff(s.labels.astype(int), axis=0) != 0)
    assert dimg[boundary].mean() > 2.0 * dimg[~boundary].mean()


# ---------------------------------------------------------------- splitting

def make_pool(n_healthy, n_glaucoma):
    pool = []
    for i in range(n_healthy):
        pool.append(make_sample(seed=i, group=GROUPS[0]))
        pool[-1].id = f"h{i}"
    for i in range(n_glaucoma):
        pool.append(make_sample(seed=100 + i, group=GROUPS[1]))
        pool[-1].id = f"g{i}"
    return pool


def test_split_sizes_and_disjointness():
    pool = make_pool(50, 50)
    train, val, test = split_dataset(pool, 40, 10, 50, seed=3)
    assert (len(train), len(val), len(test)) == (40, 10, 50)
    ids = [s.id for s in train + val + test]
    assert len(set(ids)) == len(ids)


def test_split_training_set_is_group_balanced():
    pool = make_pool(30, 40)
    train, _, _ = split_dataset(pool, 20, 5, 10, seed=0)
    groups = [s.group for s in train]
    assert groups.count(GROUPS[0]) == groups.count(GROUPS[1]) == 10


def test_split_deterministic_in_seed():
    pool = make_pool(20, 20)
    a = split_dataset(pool, 10, 4, 6, seed=9)
    b = split_dataset(pool, 10, 4, 6, seed=9)
    for xs, ys in zip(a, b):
        assert [s.id for s in xs] == [s.id for s in ys]
    c = split_dataset(pool, 10, 4, 6, seed=10)
    assert any([s.id for s in xs] != [s.id for s in ys]
               for xs, ys in zip(a, c))


def test_split_insufficient_group_rejected():
    pool = make_pool(3, 40)
    with pytest.raises(ValueError, match="insufficient"):
        split_dataset(pool, 10, 0, 0, seed=0)


# ---------------------------------------------------------------- rendering

def test_render_class0_is_black():
    img = render_labels(np.zeros((4, 4), dtype=np.uint8))
    rgb = np.asarray(img.convert("RGB"))
    assert np.array_equal(rgb, np.zeros((4, 4, 3)))


def test_render_parse_roundtrip_lossless(tmp_path):
    rng = np.random.default_rng(8)
    labels = rng.integers(0, 8, size=(16, 16)).astype(np.uint8)
    img = render_labels(labels)
    path = tmp_path / "render.png"
    img.save(path)
    assert np.array_equal(parse_render(path), labels)


def test_render_colors_follow_palette():
    labels = np.arange(8, dtype=np.uint8).reshape(1, 8)
    rgb = np.asarray(render_labels(labels).convert("RGB"))
    for c in range(8):
        assert tuple(rgb[0, c]) == PALETTE[c]


def test_render_pixel_counts_match_generator(phantom_pair):
    s = phantom_pair[0]
    rendered = np.asarray(render_labels(s.labels))
    assert np.array_equal(np.bincount(rendered.ravel(), minlength=8),
                          np.bincount(s.labels.ravel(), minlength=8))


# ---------------------------------------------------------------- manifests

def test_manifest_roundtrip(tmp_path):
    entries = [ManifestEntry("a", GROUPS[0], "a.png", "a_l.png", 1),
               ManifestEntry("b", GROUPS[1], "b.png", "b_l.png", 2)]
    path = tmp_path / "manifest.txt"
    write_manifest(path, entries)
    assert read_manifest(path) == entries


def test_manifest_missing_file_rejected(tmp_path):
    with pytest.raises(DataError, match="not found"):
        read_manifest(tmp_path / "nope.txt")


def test_manifest_bad_group_rejected(tmp_path):
    path = tmp_path / "m.txt"
    path.write_text("a\tweird\ta.png\tb.png\t0\n")
    with pytest.raises(DataError, match="group"):
        read_manifest(path)


def test_manifest_loads_samples_relative_to_itself(tmp_path):
    sample = make_sample(seed=2)
    save_sample(sample, tmp_path / "s.png", tmp_path / "s_l.png")
    write_manifest(tmp_path / "manifest.txt",
                   [ManifestEntry("s", sample.group, "s.png", "s_l.png", 2)])
    loaded = load_manifest_samples(tmp_path / "manifest.txt")
    assert len(loaded) == 1
    assert np.array_equal(loaded[0].labels, sample.labels)


def test_class_names_cover_all_indices():
    assert sorted(CLASS_NAMES) == list(range(8))
    assert len(set(PALETTE.values())) == 8
