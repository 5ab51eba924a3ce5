"""On-disk catalog and waveform formats, and event-level dataset partitioning."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import FormatError, LoadError, PartitionError

MAGIC = b"SWF1"
SWF_VERSION = 1
_HEADER = struct.Struct("<4sHHId")

CATALOG_COLUMNS = (
    "event_id",
    "station_id",
    "event_class",
    "depth_km",
    "event_lat",
    "event_lon",
    "station_lat",
    "station_lon",
    "distance_km",
    "n_channels",
    "waveform_path",
)

SOURCE_ATTRIBUTES = ("event_class", "depth_km", "event_lat", "event_lon")
PATH_ATTRIBUTES = ("distance_km", "station_lat", "station_lon", "n_channels")


@dataclass
class WaveformRecord:
    """One station's recording of one event.

    ``data`` is ``(n_channels, n_samples)`` float32, channel 0 vertical.
    """

    data: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2 or self.data.shape[0] not in (1, 3):
            raise FormatError(f"waveform data must be (1|3, n), got {self.data.shape}")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def channel_mask(self) -> np.ndarray:
        """Presence flags for (vertical, horizontal-1, horizontal-2)."""
        three = self.n_channels == 3
        return np.array([True, three, three])

    def __eq__(self, other):
        if not isinstance(other, WaveformRecord):
            return NotImplemented
        return (
            self.sample_rate_hz == other.sample_rate_hz
            and self.data.shape == other.data.shape
            and np.array_equal(self.data.view(np.uint32), other.data.view(np.uint32))
        )


def write_waveform(path, record: WaveformRecord) -> None:
    header = _HEADER.pack(MAGIC, SWF_VERSION, record.n_channels, record.n_samples,
                          float(record.sample_rate_hz))
    payload = np.ascontiguousarray(record.data, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_waveform_header(path) -> tuple[int, int, float]:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    return _parse_header(raw, path)


def _parse_header(raw: bytes, path) -> tuple[int, int, float]:
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic, expected SWF1")
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    _, version, n_channels, n_samples, fs = _HEADER.unpack(raw[: _HEADER.size])
    if version != SWF_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if n_channels not in (1, 3):
        raise FormatError(f"{path}: n_channels must be 1 or 3, got {n_channels}")
    return n_channels, n_samples, fs


def load_waveform(path) -> WaveformRecord:
    raw = Path(path).read_bytes()
    n_channels, n_samples, fs = _parse_header(raw, path)
    expected = _HEADER.size + 4 * n_channels * n_samples
    if len(raw) != expected:
        raise FormatError(f"{path}: payload is {len(raw) - _HEADER.size} bytes, "
                          f"expected {expected - _HEADER.size}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(n_channels, n_samples)
    return WaveformRecord(data.astype(np.float32), fs)


@dataclass(frozen=True)
class CatalogRow:
    event_id: str
    station_id: str
    event_class: int
    depth_km: float
    event_lat: float
    event_lon: float
    station_lat: float
    station_lon: float
    distance_km: float
    n_channels: int
    waveform_path: str

    def attribute(self, name: str) -> float:
        return float(getattr(self, name))


_ROW_TYPES = {f.name: f.type for f in fields(CatalogRow)}


@dataclass
class EventCatalog:
    rows: list[CatalogRow]
    root: Path | None = field(default=None, compare=False)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def event_ids(self) -> list[str]:
        """Distinct event ids in first-appearance order."""
        return list(dict.fromkeys(r.event_id for r in self.rows))

    def rows_by_event(self) -> dict[str, list[int]]:
        groups: dict[str, list[int]] = {}
        for i, r in enumerate(self.rows):
            groups.setdefault(r.event_id, []).append(i)
        return groups

    def column(self, name: str) -> np.ndarray:
        return np.array([r.attribute(name) for r in self.rows], dtype=float)

    def labels(self) -> np.ndarray:
        return np.array([r.event_class for r in self.rows], dtype=int)

    def resolve(self, row: CatalogRow) -> Path:
        p = Path(row.waveform_path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p


def write_catalog(path, catalog: EventCatalog) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CATALOG_COLUMNS)
        for r in catalog.rows:
            w.writerow([_fmt(getattr(r, c)) for c in CATALOG_COLUMNS])


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def load_catalog(path, check_waveforms: bool = True) -> EventCatalog:
    """Read and validate a catalog CSV.

    Waveform paths are resolved relative to the CSV's directory.
    """
    path = Path(path)
    root = path.parent
    rows: list[CatalogRow] = []
    seen: dict[tuple[str, str], int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError("empty file", row=0) from None
        if tuple(header) != CATALOG_COLUMNS:
            missing = [c for c in CATALOG_COLUMNS if c not in header]
            extra = [c for c in header if c not in CATALOG_COLUMNS]
            raise LoadError(f"header mismatch (missing={missing}, extra={extra})", row=0,
                            field=(missing or extra or ["order"])[0])
        for lineno, values in enumerate(reader, start=1):
            if len(values) != len(CATALOG_COLUMNS):
                raise LoadError(f"expected {len(CATALOG_COLUMNS)} values, got {len(values)}",
                                row=lineno)
            kw = {}
            for name, raw in zip(CATALOG_COLUMNS, values):
                kw[name] = _coerce(name, raw, lineno)
            row = CatalogRow(**kw)
            key = (row.event_id, row.station_id)
            if key in seen:
                raise LoadError(f"duplicate (event_id, station_id) {key}, first at row {seen[key]}",
                                row=lineno, field="station_id")
            seen[key] = lineno
            if row.n_channels not in (1, 3):
                raise LoadError("n_channels must be 1 or 3", row=lineno, field="n_channels")
            rows.append(row)
    catalog = EventCatalog(rows, root=root)
    if check_waveforms:
        for lineno, row in enumerate(rows, start=1):
            wf = catalog.resolve(row)
            if not wf.is_file():
                raise LoadError(f"waveform {wf} not found", row=lineno, field="waveform_path")
            try:
                n_channels, _, _ = read_waveform_header(wf)
            except FormatError as exc:
                raise LoadError(str(exc), row=lineno, field="waveform_path") from exc
            if n_channels != row.n_channels:
                raise LoadError(f"waveform has {n_channels} channels, catalog says {row.n_channels}",
                                row=lineno, field="n_channels")
    return catalog


def _coerce(name: str, raw: str, lineno: int):
    kind = _ROW_TYPES[name]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise LoadError(f"cannot parse {raw!r} as {kind}", row=lineno, field=name) from None
    if raw == "":
        raise LoadError("empty value", row=lineno, field=name)
    return raw


@dataclass(frozen=True)
class Split:
    train: tuple[str, ...]
    validation: tuple[str, ...]
    test: tuple[str, ...]

    def of(self, event_id: str) -> str:
        for name in ("train", "validation", "test"):
            if event_id in getattr(self, name):
                return name
        raise KeyError(event_id)

    def to_dict(self) -> dict:
        return {"train": list(self.train), "validation": list(self.validation),
                "test": list(self.test)}


def partition(catalog: EventCatalog, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> Split:
    """Shuffle event ids with a seeded RNG and cut by cumulative ratios.

    Train and validation counts are rounded down; test takes the remainder.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise PartitionError(f"ratios must be three nonnegative numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-12:
        raise PartitionError(f"ratios must sum to 1, got {sum(ratios)!r}")
    events = sorted(catalog.event_ids())
    n = len(events)
    if all(r > 0 for r in ratios) and n < 3:
        raise PartitionError(f"need at least 3 events for three non-empty partitions, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [events[i] for i in order]
    n_train = int(np.floor(ratios[0] * n + 1e-9))
    n_val = int(np.floor(ratios[1] * n + 1e-9))
    return Split(tuple(shuffled[:n_train]), tuple(shuffled[n_train:n_train + n_val]),
                 tuple(shuffled[n_train + n_val:]))
