import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.fft import idctn
from scipy.interpolate import interp1d
from scipy.ndimage import gaussian_filter

from tcfp.errors import DegeneratePatch, FormatVersionMismatch, InsufficientPatches
from tcfp.features import (build_dictionary, dct_matrix, descriptors_at, detect_features,
                           extract_patch, find_local_maxima, fingerprint_features, kmeans, load_dictionary,
                           patch_descriptor, save_dictionary, scale_grid, stability_vote)
from tcfp.timechroma import ChromaParams, TimeChromaImage, circular_shift

P = ChromaParams()
HOP = 221 / 8820


def image(values, hop=HOP):
    return TimeChromaImage(np.asarray(values, dtype=float), hop, P, 0.0)


def brute_force_maxima(v):
    n_b, n_t = v.shape
    out = []
    for t in range(n_t):
        for b in range(n_b):
            ok = True
            for db in (-1, 0, 1):
                for dt in (-1, 0, 1):
                    if (db, dt) == (0, 0) or not 0 <= t + dt < n_t:
                        continue
                    if not v[b, t] > v[(b + db) % n_b, t + dt]:
                        ok = False
            if ok and v[b, t] > 1e-6 * v.max():
                out.append((t, b))
    return out


class TestLocalMaxima:
    def test_constant_image(self):
        assert find_local_maxima(image(np.ones((288, 50)))) == []

    def test_single_impulse(self):
        v = np.zeros((288, 100))
        v[5, 40] = 1.0
        pts = find_local_maxima(image(v))
        assert [(p.t_frame, p.b) for p in pts] == [(40, 5)]

    def test_chroma_wraps_time_does_not(self):
        v = np.zeros((288, 10))
        v[0, 5] = 2.0
        v[287, 5] = 1.0  # neighbour of row 0 through the wrap
        v[100, 0] = 1.0  # first frame: no left neighbour needed
        pts = {(p.t_frame, p.b) for p in find_local_maxima(image(v))}
        assert pts == {(5, 0), (0, 100)}

    def test_matches_brute_force_on_smooth_image(self):
        rng = np.random.default_rng(3)
        v = gaussian_filter(rng.random((288, 400)), 2.0, mode=("wrap", "nearest"))
        pts = find_local_maxima(image(v), max_per_second=None)
        assert [(p.t_frame, p.b) for p in pts] == brute_force_maxima(v)

    def test_density_cap_keeps_strongest(self):
        rng = np.random.default_rng(4)
        v = rng.random((288, 200))  # far more than 20 maxima per second
        img = image(v)
        all_pts = find_local_maxima(img, max_per_second=None)
        capped = find_local_maxima(img, max_per_second=20)
        sec = lambda p: int(np.floor(img.frame_time(p.t_frame)))
        for s in {sec(p) for p in all_pts}:
            inside = [p for p in all_pts if sec(p) == s]
            kept = [p for p in capped if sec(p) == s]
            assert len(kept) == min(20, len(inside))
            if len(inside) > 20:
                assert min(v[p.b, p.t_frame] for p in kept) >= max(
                    v[p.b, p.t_frame] for p in inside if p not in kept)

    def test_silence(self):
        assert find_local_maxima(image(np.zeros((288, 20)))) == []


class TestPatches:
    def test_impulse_patch(self):
        v = np.zeros((288, 50))
        v[10, 20] = 1.0
        patch = extract_patch(image(v), (20, 10), width_s=5 * HOP, height_bins=3)
        # 5 frames wide requires half-width round(2.5) = 2
        assert patch.shape == (3, 5)
        assert patch[1, 2] == 1.0 and patch.sum() == 1.0

    def test_rows_wrap(self):
        v = np.tile(np.arange(288.0)[:, None], (1, 10))
        patch = extract_patch(image(v), (5, 2), 3 * HOP, 72)
        rows = patch[:, 1]
        assert rows[0] == (2 - 36) % 288 and rows[36] == 2.0 and rows[35] == 1.0
        assert 287.0 in rows and 0.0 in rows

    def test_frames_outside_zero_filled(self):
        patch = extract_patch(image(np.ones((288, 10))), (0, 100), 9 * HOP, 4)
        assert (patch[:, :4] == 0).all() and (patch[:, 4:] == 1).all()

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 287), st.integers(-300, 300), st.integers(5, 45))
    def test_shift_oracle(self, b, d, t):
        v = np.random.default_rng(b).random((288, 50))
        img = image(v)
        a = extract_patch(img, (t, b), 0.5, 72)
        s = extract_patch(circular_shift(img, d), (t, (b + d) % 288), 0.5, 72)
        np.testing.assert_array_equal(a, s)


class TestDescriptor:
    def test_dct_matrix_orthonormal(self):
        c = dct_matrix(20, 20)
        np.testing.assert_allclose(c @ c.T, np.eye(20), atol=1e-12)

    def test_dimension_and_normalization(self):
        d = patch_descriptor(np.random.default_rng(0).random((72, 81)))
        assert d.shape == (143,)
        assert abs(d.mean()) < 1e-9 and abs(np.linalg.norm(d) - 1) < 1e-9

    def test_degenerate(self):
        with pytest.raises(DegeneratePatch):
            patch_descriptor(np.full((72, 40), 3.0))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (16, 20), elements=st.floats(0, 100)),
           st.floats(0.01, 100), st.floats(-50, 50))
    def test_affine_invariance(self, patch, alpha, beta):
        assume(patch.std() > 1e-3)  # nearly constant patches are degenerate after the offset
        d = patch_descriptor(patch)
        np.testing.assert_allclose(patch_descriptor(alpha * patch + beta), d, atol=1e-9)

    def test_time_resampling_keeps_descriptor(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            coef = np.zeros((72, 81))
            coef[:6, :6] = rng.standard_normal((6, 6))
            patch = idctn(coef, norm="ortho")
            # resample to half width at matching column centres
            x_new = (np.arange(41) + 0.5) * 81 / 41 - 0.5
            half = interp1d(np.arange(81), patch, axis=1, fill_value="extrapolate")(x_new)
            assert patch_descriptor(patch) @ patch_descriptor(half) >= 0.95

    def test_batched_equals_single(self):
        rng = np.random.default_rng(6)
        img = image(rng.random((288, 200)))
        t, b = [50, 100, 150], [0, 144, 287]
        d, ok = descriptors_at(img, t, b, 1.5, 72)
        assert ok.all()
        for k in range(3):
            single = patch_descriptor(extract_patch(img, (t[k], b[k]), 1.5, 72))
            np.testing.assert_allclose(d[k], single, atol=1e-12)


class TestKMeans:
    def test_two_families(self):
        rng = np.random.default_rng(7)
        centers = rng.standard_normal((2, 143))
        x = np.concatenate([centers[0] + 0.05 * rng.standard_normal((200, 143)),
                            centers[1] + 0.05 * rng.standard_normal((200, 143))])
        c, labels = kmeans(x, 2, seed=1)
        assert len(set(labels[:200])) == 1 and len(set(labels[200:])) == 1
        for k in range(2):
            mean = x[labels == k].mean(axis=0)
            np.testing.assert_allclose(c[k], mean, atol=1e-12)

    def test_deterministic(self):
        x = np.random.default_rng(8).standard_normal((300, 10))
        a, _ = kmeans(x, 5, seed=3)
        b, _ = kmeans(x, 5, seed=3)
        np.testing.assert_array_equal(a, b)


def smooth_image(seed, n_t=800):
    v = gaussian_filter(np.random.default_rng(seed).random((288, n_t)), (3, 8), mode=("wrap", "nearest"))
    return image(v)


class TestDictionary:
    def test_identical_patches_single_centroid(self):
        # one bump repeated every 2 s: every candidate sees the same patch
        v = np.zeros((288, 1200))
        for t in range(60, 1140, 80):
            v[100, t] = 1.0
        v = gaussian_filter(v, (2, 4), mode=("wrap", "constant"))
        img = image(v)
        d = build_dictionary([img], c=1, w_t=1.0)
        cand = find_local_maxima(img)[0]
        ref = patch_descriptor(extract_patch(img, (cand.t_frame, cand.b), 1.0, 72))
        np.testing.assert_allclose(d.patterns[0], ref, atol=1e-9)

    def test_families(self):
        # two well-separated families of patches -> each centroid near its family mean
        rng = np.random.default_rng(9)
        fams = [rng.standard_normal(143), rng.standard_normal(143)]
        fams = [f - f.mean() for f in fams]
        fams = [f / np.linalg.norm(f) for f in fams]
        x = np.concatenate([f + 0.02 * rng.standard_normal((100, 143)) for f in fams])
        c, labels = kmeans(x, 2, seed=0)
        for k in range(2):
            mean = x[labels == k].mean(axis=0)
            cos = c[k] @ mean / np.linalg.norm(c[k]) / np.linalg.norm(mean)
            assert np.arccos(min(cos, 1.0)) < 0.05

    def test_patterns_unit_and_deterministic(self):
        imgs = [smooth_image(s) for s in (1, 2)]
        a = build_dictionary(imgs, seed=5)
        b = build_dictionary(imgs, seed=5)
        np.testing.assert_array_equal(a.patterns, b.patterns)
        assert a.c == 10 and a.patterns.shape == (10, 143)
        np.testing.assert_allclose(a.patterns.mean(axis=1), 0, atol=1e-9)
        np.testing.assert_allclose(np.linalg.norm(a.patterns, axis=1), 1, atol=1e-9)
        assert sum(a.cluster_sizes) > 0

    def test_insufficient(self):
        v = np.zeros((288, 100))
        v[3, 50] = 1.0
        with pytest.raises(InsufficientPatches):
            build_dictionary([image(v)], c=10)

    def test_round_trip(self, tmp_path):
        d = build_dictionary([smooth_image(3)], seed=1)
        save_dictionary(d, tmp_path / "d.bin")
        back = load_dictionary(tmp_path / "d.bin")
        np.testing.assert_array_equal(back.patterns, d.patterns)
        assert (back.q, back.r, back.m, back.n, back.w_t, back.w_p, back.cluster_sizes) == \
            (d.q, d.r, d.m, d.n, d.w_t, d.w_p, d.cluster_sizes)

    def test_truncated_rejected(self, tmp_path):
        d = build_dictionary([smooth_image(3)], seed=1)
        path = tmp_path / "d.bin"
        save_dictionary(d, path)
        data = path.read_bytes()
        path.write_bytes(data[:-9])
        with pytest.raises(FormatVersionMismatch):
            load_dictionary(path)
        path.write_bytes(b"NOTADICT" + data[8:])
        with pytest.raises(FormatVersionMismatch):
            load_dictionary(path)


class TestStabilityVote:
    widths = scale_grid()

    def test_defaults_grid(self):
        assert len(self.widths) == 30
        assert self.widths[0] == 1.0 and self.widths[-1] == pytest.approx(4.0)
        np.testing.assert_allclose(np.diff(np.log(self.widths)), np.log(4) / 29)

    def test_unanimous(self):
        corr = np.zeros((30, 10))
        corr[:, 3] = 0.5
        corr[17, 3] = 0.9
        assert stability_vote(corr, self.widths) == (3, self.widths[17], 17)

    def test_half_is_not_enough(self):
        corr = np.zeros((30, 10))
        corr[:15, 3] = 1.0
        corr[15:, 4] = 1.0
        assert stability_vote(corr, self.widths) is None

    def test_scale_from_winning_pattern_only(self):
        corr = np.zeros((30, 10))
        corr[:16, 2] = np.linspace(0.1, 0.5, 16)
        corr[16:, 7] = 0.99  # higher, but pattern 7 lost the vote
        assert stability_vote(corr, self.widths) == (2, self.widths[15], 15)


class TestDetection:
    def test_pitch_shift_equivariance(self, short_song):
        _, _, img = short_song
        d = build_dictionary([img], seed=2)
        pts = detect_features(img, d)
        fps = fingerprint_features(img, pts)
        assert fps
        for delta in (-12, 30):
            shifted = circular_shift(img, delta)
            pts2 = detect_features(shifted, d)
            assert [(p.t_frame, (p.b + delta) % 288, p.scale, p.ptype) for p in pts] == \
                [(p.t_frame, p.b, p.scale, p.ptype) for p in sorted(pts2, key=lambda p: (p.t_frame, (p.b - delta) % 288))]
            fps2 = {(f.point.t_frame, f.point.b): f for f in fingerprint_features(shifted, pts2)}
            for f in fps:
                g = fps2[(f.point.t_frame, (f.point.b + delta) % 288)]
                np.testing.assert_allclose(g.desc, f.desc, atol=1e-9)

    def test_points_valid(self, short_song):
        _, _, img = short_song
        d = build_dictionary([img], seed=2)
        for p in detect_features(img, d):
            assert 1.0 <= p.scale <= 4.0 + 1e-12 and 0 <= p.ptype < d.c
            assert p.boundary == (p.scale in (scale_grid()[0], scale_grid()[-1]))
        for f in fingerprint_features(img, detect_features(img, d)):
            assert f.desc.shape == (143,)
            assert abs(f.desc.mean()) < 1e-9 and abs(np.linalg.norm(f.desc) - 1) < 1e-9

    def test_keep_boundary_flag(self, short_song):
        _, _, img = short_song
        d = build_dictionary([img], seed=2)
        kept = detect_features(img, d)
        dropped = detect_features(img, d, keep_boundary=False)
        assert dropped == [p for p in kept if not p.boundary]

    def test_exact_time_rescale(self, short_song):
        _, _, img = short_song
        d = build_dictionary([img], seed=2)
        step = 4 ** (1 / 29)
        a = 1.25
        n_new = int(img.n_frames * a)
        v = interp1d(np.arange(img.n_frames), img.values, axis=1, bounds_error=False,
                     fill_value=0.0)(np.arange(n_new) / a)
        im1 = TimeChromaImage(img.values, img.frame_hop_s, P, 0.0)
        im2 = TimeChromaImage(v, img.frame_hop_s, P, 0.0)
        f1 = fingerprint_features(im1, detect_features(im1, d))
        by_pos = {(f.point.b, f.point.t_frame): f for f in fingerprint_features(im2, detect_features(im2, d))}
        n = good = 0
        for f in f1:
            t2 = int(round(f.point.t_frame * a))
            g = next((by_pos[(f.point.b, t2 + k)] for k in (0, -1, 1) if (f.point.b, t2 + k) in by_pos), None)
            if g is None:
                continue
            n += 1
            ratio_ok = abs(np.log(g.point.scale / f.point.scale / a)) <= np.log(step) + 1e-9
            good += ratio_ok and np.arccos(np.clip(f.desc @ g.desc, -1, 1)) < 0.2
        assert n > 100
        assert good / n >= 0.6
