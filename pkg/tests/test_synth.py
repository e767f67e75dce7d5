"""Synthetic lesion generator: determinism and the class-profile knobs."""

import numpy as np
import pytest

from wavefuse.data import HAM10000_CLASSES
from wavefuse.errors import ConfigError, DataError
from wavefuse.synth import (ClassProfile, SynthSpec, default_spec,
                            generate_synthetic, render_lesion)


def one_class_spec(profile, count=3, image_size=64, seed=0):
    return SynthSpec(classes=(profile,), count_per_class=count,
                     image_size=image_size, seed=seed)


# -- specs ----------------------------------------------------------------

def test_profile_validation():
    with pytest.raises(ConfigError):
        ClassProfile("x", symmetry=-0.1)
    with pytest.raises(ConfigError):
        ClassProfile("x", symmetry=1.5)
    with pytest.raises(ConfigError):
        ClassProfile("x", core=-0.1)
    with pytest.raises(ConfigError):
        ClassProfile("x", core=1.5)
    with pytest.raises(ConfigError):
        ClassProfile("x", mottle=1.5)
    with pytest.raises(ConfigError):
        ClassProfile("x", border=0.6, bump=0.5)
    with pytest.raises(ConfigError):
        ClassProfile("x", diameter=(0.0, 5.0))
    with pytest.raises(ConfigError):
        ClassProfile("x", diameter=(10.0, 5.0))


def test_spec_validation():
    with pytest.raises(ConfigError):
        SynthSpec(classes=())
    with pytest.raises(ConfigError):
        SynthSpec(classes=(ClassProfile("x"),), count_per_class=0)
    with pytest.raises(ConfigError):
        SynthSpec(classes=(ClassProfile("x"),), image_size=4)


def test_spec_json_roundtrip():
    spec = default_spec(seed=3, count_per_class=5, image_size=32)
    import json
    restored = SynthSpec.from_json(json.dumps(spec.to_dict()))
    assert restored == spec
    with pytest.raises(ConfigError, match="JSON"):
        SynthSpec.from_json("{not json")
    with pytest.raises(ConfigError, match="unknown"):
        SynthSpec.from_json('{"classes": [], "extra": 1}')
    with pytest.raises(ConfigError, match="classes"):
        SynthSpec.from_json('{"count_per_class": 3}')


def test_default_spec_shape():
    spec = default_spec()
    assert spec.class_names() == HAM10000_CLASSES
    assert spec.count_per_class == 20
    assert spec.image_size == 64


# -- generation -------------------------------------------------------------

def test_generation_is_byte_identical():
    spec = default_spec(seed=11, count_per_class=2)
    a = generate_synthetic(spec)
    b = generate_synthetic(spec)
    assert a.labels == b.labels
    assert a.provenance == b.provenance
    for ia, ib in zip(a.images, b.images):
        assert ia.tobytes() == ib.tobytes()


def test_generation_layout():
    spec = default_spec(seed=1, count_per_class=3)
    ds = generate_synthetic(spec)
    assert len(ds) == 21
    assert ds.labels == [c for c in range(7) for _ in range(3)]
    assert ds.provenance[0] == "akiec_00000"
    assert ds.provenance[-1] == "vasc_00002"
    stacked, _ = ds.stacked()
    assert stacked.dtype == np.float32
    assert stacked.min() >= 0.0 and stacked.max() <= 1.0


def test_counts_share_prefix():
    # per-image streams are keyed by (class, index), so a bigger dataset
    # begins with the smaller one
    small = generate_synthetic(default_spec(seed=2, count_per_class=3))
    large = generate_synthetic(default_spec(seed=2, count_per_class=5))
    for c in range(7):
        for i in range(3):
            a = small.images[c * 3 + i]
            b = large.images[c * 5 + i]
            assert a.tobytes() == b.tobytes()


def _mirror_window(img):
    """Columns of the lesion bounding box, centered on its midpoint."""
    bg = img[0, 0]
    lesion_cols = np.flatnonzero((img != bg).any(axis=(0, 2)))
    assert lesion_cols.size > 4, "lesion should be visible"
    cx = int((lesion_cols[0] + lesion_cols[-1])) // 2
    w = min(cx, img.shape[1] - 1 - cx)
    return img[:, cx - w:cx + w + 1]


def test_symmetric_profile_mirrors_exactly():
    # zero odd amplitude and zero border ripple give a circle whose colors
    # depend on center distance only: bit-exact under a horizontal flip
    profile = ClassProfile("round", symmetry=0.0, border=0.0, color=0.2)
    ds = generate_synthetic(one_class_spec(profile, count=5, seed=4))
    for img in ds.images:
        win = _mirror_window(img)
        assert np.array_equal(win, win[:, ::-1])


def test_bumps_break_mirror():
    # any bump breaks the left-right mirror: even a transpose-paired
    # placement is never symmetric about the vertical axis
    profile = ClassProfile("lopsided", symmetry=1.0, bump=0.45,
                           border=0.0, color=0.2)
    ds = generate_synthetic(one_class_spec(profile, count=5, seed=4))
    broken = sum(
        not np.array_equal(win := _mirror_window(img), win[:, ::-1])
        for img in ds.images)
    assert broken == 5


def _center_window(img):
    """Square crop centered on the lesion bounding-box midpoint."""
    bg = img[0, 0]
    les = (img != bg).any(axis=2)
    rows = np.flatnonzero(les.any(axis=1))
    cols = np.flatnonzero(les.any(axis=0))
    assert rows.size > 4 and cols.size > 4, "lesion should be visible"
    cy = int(rows[0] + rows[-1]) // 2
    cx = int(cols[0] + cols[-1]) // 2
    w = min(cy, cx, img.shape[0] - 1 - cy, img.shape[1] - 1 - cx)
    return img[cy - w:cy + w + 1, cx - w:cx + w + 1]


def test_symmetric_profile_survives_transpose():
    # centers sit on the main diagonal, the even ripple uses only
    # multiples of four, and bumps and freckles come in mirrored pairs,
    # so a symmetry-0 image maps onto itself under a transpose with
    # every other knob switched on
    profile = ClassProfile("even", symmetry=0.0, border=0.25, bump=0.45,
                           core=0.6, color=0.3, mottle=1.0,
                           diameter=(24.0, 28.0))
    ds = generate_synthetic(one_class_spec(profile, count=10, seed=7))
    for img in ds.images:
        assert np.abs(img - img.transpose(1, 0, 2)).mean() < 1e-3


def test_asymmetric_profile_breaks_transpose():
    profile = ClassProfile("odd", symmetry=1.0, border=0.25, bump=0.45,
                           core=0.6, color=0.3, mottle=1.0,
                           diameter=(24.0, 28.0))
    ds = generate_synthetic(one_class_spec(profile, count=10, seed=7))
    for img in ds.images:
        win = _center_window(img)
        assert np.abs(win - win.transpose(1, 0, 2)).mean() > 1e-3


def test_core_knob_is_local_and_dim():
    # the core dims green and blue inside a third of the radius: the red
    # channel and the lesion mask never move, and the whole-image mean
    # barely does, so the cue stays invisible to global pooling
    plain = ClassProfile("a", border=0.2, core=0.0, color=0.1)
    cored = ClassProfile("a", border=0.2, core=0.8, color=0.1)
    img_a = generate_synthetic(one_class_spec(plain, count=1, seed=13)).images[0]
    img_b = generate_synthetic(one_class_spec(cored, count=1, seed=13)).images[0]
    assert np.array_equal(img_a[..., 0], img_b[..., 0])
    mask_a = (img_a != img_a[0, 0]).any(axis=2)
    mask_b = (img_b != img_b[0, 0]).any(axis=2)
    assert np.array_equal(mask_a, mask_b)
    changed = (img_a != img_b).any(axis=2)
    assert 0 < changed.sum() < 0.2 * mask_a.sum()
    assert abs(float(img_a.mean()) - float(img_b.mean())) < 0.01


def test_color_amplitude_orders_within_lesion_variance():
    lo = ClassProfile("flat", color=0.05)
    hi = ClassProfile("ringed", color=0.30)
    def mean_std(profile):
        ds = generate_synthetic(one_class_spec(profile, count=30, seed=6))
        stds = []
        for img in ds.images:
            mask = (img != img[0, 0]).any(axis=2)
            stds.append(img[..., 0][mask].std())
        return float(np.mean(stds))
    assert mean_std(hi) > 2.0 * mean_std(lo)


def test_symmetry_knob_keeps_background():
    # backgrounds are drawn before any geometry, so bending the outline
    # cannot change the skin tone
    base = ClassProfile("a", symmetry=0.0, bump=0.4, border=0.2, color=0.1)
    bent = ClassProfile("a", symmetry=1.0, bump=0.4, border=0.2, color=0.1)
    img_a = generate_synthetic(one_class_spec(base, count=1, seed=9)).images[0]
    img_b = generate_synthetic(one_class_spec(bent, count=1, seed=9)).images[0]
    assert img_a[0, 0].tobytes() == img_b[0, 0].tobytes()


def test_color_knob_keeps_geometry():
    # the color amplitude does not feed the placement margin, so two
    # profiles differing only in color render identical lesion masks
    flat = ClassProfile("a", symmetry=0.3, border=0.2, color=0.05)
    loud = ClassProfile("a", symmetry=0.3, border=0.2, color=0.30)
    img_a = generate_synthetic(one_class_spec(flat, count=1, seed=9)).images[0]
    img_b = generate_synthetic(one_class_spec(loud, count=1, seed=9)).images[0]
    assert img_a[0, 0].tobytes() == img_b[0, 0].tobytes()
    mask_a = (img_a != img_a[0, 0]).any(axis=2)
    mask_b = (img_b != img_b[0, 0]).any(axis=2)
    assert np.array_equal(mask_a, mask_b)
    assert not np.array_equal(img_a, img_b)


def test_lesion_must_fit():
    profile = ClassProfile("huge", diameter=(28.0, 28.0))
    rng = np.random.default_rng(0)
    with pytest.raises(DataError, match="does not fit"):
        render_lesion(profile, 32, rng)


def test_render_without_margin_error_touches_no_edge():
    profile = ClassProfile("big", diameter=(20.0, 24.0))
    for seed in range(5):
        img = render_lesion(profile, 64, np.random.default_rng(seed))
        bg = img[0, 0]
        edges = np.concatenate([img[0], img[-1], img[:, 0], img[:, -1]])
        assert np.array_equal(edges, np.broadcast_to(bg, edges.shape))
