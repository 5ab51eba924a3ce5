"""Preprocessed spectrogram tensors aligned with their catalog rows."""
from __future__ import annotations

import dataclasses
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import StftConfig, spectrogram_stack
from .errors import FormatError
from .ingest import CatalogRow, EventCatalog, load_waveform


@dataclass
class SpectrogramSet:
    tensors: np.ndarray  # (N, 3, F, T)
    masks: np.ndarray  # (N, 3) bool
    catalog: EventCatalog

    def __post_init__(self):
        if not (len(self.tensors) == len(self.masks) == len(self.catalog)):
            raise FormatError("tensors, masks and catalog rows must align")

    def __len__(self):
        return len(self.catalog)

    @property
    def labels(self) -> np.ndarray:
        return self.catalog.labels()

    @property
    def event_ids(self) -> list[str]:
        return [r.event_id for r in self.catalog.rows]

    def indices_for(self, event_ids) -> np.ndarray:
        wanted = set(event_ids)
        return np.array([i for i, r in enumerate(self.catalog.rows) if r.event_id in wanted],
                        dtype=int)

    def groups(self, event_ids=None) -> list[tuple[str, list[int]]]:
        """(event_id, row indices) pairs, in ``event_ids`` order when given."""
        by_event = self.catalog.rows_by_event()
        order = list(by_event) if event_ids is None else list(event_ids)
        return [(e, by_event[e]) for e in order if e in by_event]

    def subset(self, idx) -> "SpectrogramSet":
        idx = np.asarray(idx, dtype=int)
        rows = [self.catalog.rows[i] for i in idx]
        return SpectrogramSet(self.tensors[idx], self.masks[idx],
                              EventCatalog(rows, root=self.catalog.root))


def build(catalog: EventCatalog, records=None, cfg: StftConfig = StftConfig()) -> SpectrogramSet:
    """Spectrograms for every catalog row; waveforms are loaded from disk unless given."""
    if records is None:
        records = [load_waveform(catalog.resolve(r)) for r in catalog.rows]
    tensors, masks = spectrogram_stack(records, cfg)
    return SpectrogramSet(tensors, masks, catalog)


def save(path, ds: SpectrogramSet, stft: StftConfig | None = None) -> None:
    rows = [dataclasses.asdict(r) for r in ds.catalog.rows]
    meta = {"rows": rows, "stft": stft.to_dict() if stft else None}
    buf = io.BytesIO()
    np.savez(buf, tensors=ds.tensors, masks=ds.masks,
             meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8))
    Path(path).write_bytes(buf.getvalue())


def load(path) -> SpectrogramSet:
    try:
        with np.load(path, allow_pickle=False) as z:
            tensors = z["tensors"]
            masks = z["masks"]
            meta = json.loads(bytes(z["meta"]).decode())
    except (OSError, KeyError, ValueError) as exc:
        raise FormatError(f"{path}: not a spectrogram cache ({exc})") from exc
    rows = [CatalogRow(**r) for r in meta["rows"]]
    return SpectrogramSet(tensors, masks.astype(bool), EventCatalog(rows))
