import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seisbt import ingest
from seisbt.errors import FormatError, LoadError, PartitionError
from seisbt.ingest import CatalogRow, EventCatalog, WaveformRecord


def _row(eid, sid, n_ch=3, cls=0, path=None):
    return CatalogRow(eid, sid, cls, 5.0, 39.1, -111.9, 39.5, -112.2, 42.0, n_ch,
                      path or f"waveforms/{eid}_{sid}.swf")


def _write_set(root, rows):
    (root / "waveforms").mkdir(exist_ok=True)
    for r in rows:
        data = np.ones((r.n_channels, 16), dtype=np.float32)
        ingest.write_waveform(root / r.waveform_path, WaveformRecord(data, 40.0))
    ingest.write_catalog(root / "catalog.csv", EventCatalog(rows))
    return root / "catalog.csv"


def test_waveform_round_trip_is_bitwise(tmp_path, rng):
    rec = WaveformRecord(rng.normal(size=(3, 100)).astype(np.float32), 40.0)
    rec.data[1, 5] = np.float32(-0.0)
    p = tmp_path / "a.swf"
    ingest.write_waveform(p, rec)
    back = ingest.load_waveform(p)
    assert back == rec
    assert p.stat().st_size == 20 + 4 * 300


def test_waveform_bad_magic_and_truncation(tmp_path):
    p = tmp_path / "a.swf"
    p.write_bytes(b"SWF0" + bytes(40))
    with pytest.raises(FormatError, match="magic"):
        ingest.load_waveform(p)
    ingest.write_waveform(p, WaveformRecord(np.zeros((1, 10), np.float32), 40.0))
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(FormatError):
        ingest.load_waveform(p)


def test_channel_masks():
    assert WaveformRecord(np.zeros((1, 4)), 1.0).channel_mask.tolist() == [True, False, False]
    assert WaveformRecord(np.zeros((3, 4)), 1.0).channel_mask.tolist() == [True] * 3
    with pytest.raises(FormatError):
        WaveformRecord(np.zeros((2, 4)), 1.0)


def test_catalog_round_trip(tmp_path):
    rows = [_row("ev1", "A"), _row("ev1", "B", n_ch=1), _row("ev2", "A", cls=1)]
    path = _write_set(tmp_path, rows)
    cat = ingest.load_catalog(path)
    assert cat.rows == rows
    assert cat.rows_by_event() == {"ev1": [0, 1], "ev2": [2]}
    assert cat.labels().tolist() == [0, 0, 1]


def test_catalog_dangling_path_names_row(tmp_path):
    rows = [_row("ev1", "A"), _row("ev2", "B")]
    path = _write_set(tmp_path, rows)
    (tmp_path / rows[1].waveform_path).unlink()
    with pytest.raises(LoadError) as exc:
        ingest.load_catalog(path)
    assert exc.value.row == 2 and exc.value.field == "waveform_path"
    assert len(ingest.load_catalog(path, check_waveforms=False)) == 2


def test_catalog_channel_mismatch(tmp_path):
    rows = [_row("ev1", "A")]
    path = _write_set(tmp_path, rows)
    ingest.write_waveform(tmp_path / rows[0].waveform_path,
                          WaveformRecord(np.zeros((1, 8), np.float32), 40.0))
    with pytest.raises(LoadError) as exc:
        ingest.load_catalog(path)
    assert exc.value.field == "n_channels"


def test_catalog_bad_header_and_values(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("event_id,station_id\nev1,A\n")
    with pytest.raises(LoadError):
        ingest.load_catalog(p)
    header = ",".join(ingest.CATALOG_COLUMNS)
    p.write_text(header + "\nev1,A,zero,1,1,1,1,1,1,3,w.swf\n")
    with pytest.raises(LoadError) as exc:
        ingest.load_catalog(p, check_waveforms=False)
    assert exc.value.field == "event_class" and exc.value.row == 1


def test_catalog_duplicate_pair(tmp_path):
    rows = [_row("ev1", "A"), _row("ev1", "A")]
    (tmp_path / "waveforms").mkdir()
    ingest.write_catalog(tmp_path / "c.csv", EventCatalog(rows))
    with pytest.raises(LoadError, match="duplicate"):
        ingest.load_catalog(tmp_path / "c.csv", check_waveforms=False)


def _catalog(n_events, stations=2):
    return EventCatalog([_row(f"ev{i:03d}", f"S{j}") for i in range(n_events)
                         for j in range(stations)])


def test_partition_ten_events():
    split = ingest.partition(_catalog(10), (0.8, 0.1, 0.1), seed=0)
    assert (len(split.train), len(split.validation), len(split.test)) == (8, 1, 1)


def test_partition_deterministic_and_validates():
    cat = _catalog(20)
    assert ingest.partition(cat, seed=5) == ingest.partition(cat, seed=5)
    with pytest.raises(PartitionError):
        ingest.partition(cat, (0.5, 0.3, 0.3))
    with pytest.raises(PartitionError):
        ingest.partition(_catalog(2), (0.8, 0.1, 0.1))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(3, 60), seed=st.integers(0, 1000),
       ratios=st.sampled_from([(0.8, 0.1, 0.1), (0.6, 0.2, 0.2), (0.5, 0.5, 0.0), (1.0, 0.0, 0.0)]))
def test_partition_is_disjoint_cover(n, seed, ratios):
    cat = _catalog(n, stations=3)
    split = ingest.partition(cat, ratios, seed)
    parts = [set(split.train), set(split.validation), set(split.test)]
    assert sum(len(p) for p in parts) == n
    assert set.union(*parts) == set(cat.event_ids())
    assert not (parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])
    assert len(split.train) == int(np.floor(ratios[0] * n + 1e-9))
