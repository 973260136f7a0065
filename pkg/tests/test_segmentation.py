import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evbraille.board import preset_board
from evbraille.datasets import Condition, scan_records
from evbraille.events import FrameTensor
from evbraille.segmentation import (
    NEGATIVE_STARTS,
    ActivityProfile,
    ScanRecord,
    SegmentationMismatchError,
    SegmentationParams,
    activity_profile,
    build_labeled_dataset,
    calibrate_offset,
    detect_peaks,
    extract_segment,
    group_peaks,
    mass_center_ms,
    merge_peaks_adaptive,
    read_dataset,
    read_segment,
    smooth,
    write_dataset,
    write_segment,
)


def zeros(T=40):
    return np.zeros((T, 2, 120, 160), dtype=np.int32)


def prof(v):
    return ActivityProfile(np.asarray(v, dtype=float))


def test_profile_examples():
    assert not activity_profile(FrameTensor(zeros())).values.any()
    c = zeros()
    c[3, 1, 50, 10] = 7
    c[5, 0, 50, 40] = 2
    assert not activity_profile(FrameTensor(c)).values.any()
    c = zeros(8)
    c[3, 0, 10, 22] = 2
    c[3, 1, 90, 29] = 3
    assert list(activity_profile(FrameTensor(c)).values) == [0, 0, 0, 5, 0, 0, 0, 0]


def test_profile_window_outside_tensor():
    with pytest.raises(ValueError):
        activity_profile(FrameTensor(zeros(2)), SegmentationParams(start_x0=155))


def test_smooth_examples():
    assert np.allclose(smooth(prof([3.0] * 20)).values, 3.0)
    v = np.zeros(21)
    v[10] = 1
    out = smooth(prof(v)).values
    assert np.allclose(out[7:14], 1 / 7) and not out[:7].any() and not out[14:].any()
    with pytest.raises(ValueError):
        smooth(prof(v), 4)
    with pytest.raises(ValueError):
        SegmentationParams(smooth_kernel=6)


@settings(max_examples=50, deadline=None)
@given(a=st.lists(st.floats(0, 100), min_size=1, max_size=60), seed=st.integers(0, 1000))
def test_smooth_linear(a, seed):
    b = np.random.default_rng(seed).uniform(0, 50, len(a))
    lhs = smooth(prof(a)).values + smooth(prof(b)).values
    assert np.allclose(lhs, smooth(prof(np.asarray(a) + b)).values)


@settings(max_examples=50, deadline=None)
@given(inner=st.lists(st.floats(0, 100), min_size=1, max_size=60))
def test_smooth_preserves_interior_mass(inner):
    v = np.concatenate([np.zeros(6), inner, np.zeros(6)])  # full windows reach every event
    assert smooth(prof(v)).values.sum() == pytest.approx(v.sum(), rel=1e-9, abs=1e-9)


def test_detect_peaks_examples():
    assert detect_peaks(prof(np.arange(10.0))) == []
    assert detect_peaks(prof([0, 1, 2, 3, 2, 1, 0])) == [30.0]
    assert detect_peaks(prof([0, 2, 4, 2, 0, 0, 3, 6, 3, 0])) == [20.0, 70.0]


def test_prominence_filters_ripples():
    v = [0, 10, 100, 99, 99.5, 99, 50, 0]
    assert detect_peaks(prof(v)) == [20.0]
    assert detect_peaks(prof(v), prominence=0) == [20.0, 40.0]


def test_merge_examples():
    assert merge_peaks_adaptive([0, 310], 1) == [0]
    assert merge_peaks_adaptive([0, 310, 1000, 1310], 2) == [0, 1000]
    with pytest.raises(SegmentationMismatchError) as exc:
        merge_peaks_adaptive([0], 3)
    assert exc.value.best_count == 1
    with pytest.raises(ValueError):
        merge_peaks_adaptive([0], 0)


peak_sets = st.lists(st.integers(0, 400), min_size=1, max_size=25).map(lambda d: list(np.cumsum(d) * 10.0))


def brute_groups(peaks, w):
    groups = []
    for p in peaks:
        if groups and p - groups[-1][0] <= w:
            groups[-1].append(p)
        else:
            groups.append([p])
    return groups


@settings(max_examples=200, deadline=None)
@given(peaks=peak_sets)
def test_group_count_non_increasing_in_window(peaks):
    counts = [len(group_peaks(peaks, w)) for w in range(0, 700, 10)]
    assert all(b <= a for a, b in zip(counts, counts[1:]))


@settings(max_examples=200, deadline=None)
@given(peaks=peak_sets, n=st.integers(1, 10))
def test_merge_properties(peaks, n):
    try:
        out = merge_peaks_adaptive(peaks, n)
    except SegmentationMismatchError:
        counts = {len(brute_groups(sorted(peaks), 300 + 10 * k)) for k in range(16)}
        assert n not in counts
        return
    assert len(out) == n
    assert all(b > a for a, b in zip(out, out[1:]))
    assert set(out) <= set(peaks)


def test_extract_segment_examples():
    c = zeros(60)
    c[10, 0, 50, 50] = 4
    c[10, 0, 50, 5] = 9  # outside the mask
    seg = extract_segment(FrameTensor(c), 0.0, False)
    assert seg.frames.n_bins == 35 and seg.frames.total() == 4
    empty = extract_segment(FrameTensor(zeros(60)), 100.0, False)
    assert empty.frames.total() == 0
    late = extract_segment(FrameTensor(c), 500.0, False)
    assert late.frames.n_bins == 35  # zero-padded past the stream end
    shifted = extract_segment(FrameTensor(c), 300.0, True, offset=-280.0)
    assert shifted.frames.origin_ms == 20.0


def _synthetic_columns():
    """Dual-column letters with columns 240 ms apart, single-column letters with the first column only."""
    c = zeros(600)
    truth = []
    for i, single in enumerate([False, True, False, True, False]):
        k = 40 + 100 * i
        c[k : k + 6, 1, 60, 25] = 5
        if not single:
            c[k + 24 : k + 30, 1, 60, 25] = 5
        truth.append(("A" if single else "C", k * 10.0, single))
    return ScanRecord("synthetic", FrameTensor(c), tuple(truth))


def test_calibration_on_symmetric_columns_is_exact():
    cal = calibrate_offset([_synthetic_columns()], use_truth=True)
    assert cal.choice == "fitted"
    assert cal.offset == -120.0
    assert cal.residuals["fitted"] == 0.0


def test_default_offset_is_plus_280():
    assert SegmentationParams().single_col_offset == 280.0


def test_calibration_residual_on_simulated_scans():
    recs = list(scan_records(preset_board("SAB"), [Condition(8, 1.5)], trials=2, base_seed=3))
    cal = calibrate_offset(recs)
    assert cal.residuals[cal.choice] < 40


def test_labeled_dataset_from_simulated_scans():
    recs = list(scan_records(preset_board("SAB"), [Condition(8, 1.5)], trials=1, base_seed=1))
    ds = build_labeled_dataset(recs, offset=-170.0)
    assert len(ds.characters) == 26 and not ds.rejected
    assert [s.label for s in ds.characters] == list("ABCDEFGHIJKLMNOPQRSTUVWXYZ")
    assert all(s.frames.n_bins == 35 for s in ds.characters)
    assert len(ds.binary) == 78 and sum(ds.binary_positive) == 26
    for i in range(26):
        pos, *negs = ds.binary[3 * i : 3 * i + 3]
        assert ds.binary_positive[3 * i : 3 * i + 3] == [True, False, False]
        spans = {(b.frames.origin_ms, b.frames.n_bins) for b in (pos, *negs)}
        assert len(spans) == 3
        assert [n.frames.origin_ms - n.onset_ms for n in negs] == list(NEGATIVE_STARTS)
    for s in ds.characters:
        assert not s.frames.counts[..., :20].any() and not s.frames.counts[..., 100:].any()


def test_mismatched_scan_is_rejected_or_raised():
    rec = _synthetic_columns()
    bad = ScanRecord("bad", rec.frames, rec.truth + (("Z", 5000.0, False),))
    ds = build_labeled_dataset([bad])
    assert ds.rejected == ["bad"] and not ds.characters
    with pytest.raises(SegmentationMismatchError, match="bad"):
        build_labeled_dataset([bad], strict=True)


def test_mass_center():
    c = zeros(10)
    c[2, 0, 0, 0] = 1
    c[4, 0, 0, 0] = 1
    assert mass_center_ms(FrameTensor(c)) == 35.0
    assert mass_center_ms(FrameTensor(zeros(3))) is None


def test_segment_files_round_trip(tmp_path):
    rec = _synthetic_columns()
    ds = build_labeled_dataset([rec], SegmentationParams(prominence=0.0))
    rows = write_dataset(tmp_path, "SYN", 0, ds.characters)
    assert rows[0].file == f"SYN_0_0_{ds.characters[0].label}.evb.seg"
    back = read_dataset(tmp_path)
    assert len(back) == len(ds.characters)
    for (row, f), seg in zip(back, ds.characters):
        assert np.array_equal(f.counts, seg.frames.counts)
        assert row.label == seg.label and row.single_column == seg.single_column
    assert (tmp_path / rows[0].file).read_bytes()[:4] == b"SEG1"
    write_segment(ds.characters[0].frames, tmp_path / "x.seg")
    assert np.array_equal(read_segment(tmp_path / "x.seg").counts, ds.characters[0].frames.counts)
