"""Synthetic multi-station event catalogs with independently controlled source and path.

Each event draws a source from its class template (corner frequency, envelope
decay, horizontal/vertical amplitude ratio, depth). Each station recording is
that source pushed through a path: travel-time delay, 1/d spreading,
exp(-alpha*f*d) attenuation, a per-station FIR site response and white noise
at a drawn SNR.

Randomness is keyed on ``(seed, stream, index)`` so events can be generated in
any order, or in parallel, with identical results.
"""
from __future__ import annotations

import dataclasses
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .ingest import CatalogRow, EventCatalog, WaveformRecord, write_catalog, write_waveform

KM_PER_DEG = 111.19

_STATION_STREAM = 0
_EVENT_STREAM = 1
_SITE_STREAM = 2


@dataclass(frozen=True)
class SourceSpec:
    class_id: int
    corner_freq_hz: float
    envelope_decay_s: float
    depth_km: float
    lat: float
    lon: float
    horizontal_ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.corner_freq_hz > 0:
            raise ConfigError("corner_freq_hz", "must be > 0")
        if not self.envelope_decay_s > 0:
            raise ConfigError("envelope_decay_s", "must be > 0")
        if not self.depth_km >= 0:
            raise ConfigError("depth_km", "must be >= 0")


@dataclass(frozen=True)
class PathSpec:
    distance_km: float
    velocity_km_s: float
    attenuation_alpha: float
    site_filter: tuple[float, ...] = (1.0,)
    snr_db: float = math.inf

    def __post_init__(self):
        if not self.distance_km > 0:
            raise ConfigError("distance_km", "must be > 0")
        if not self.velocity_km_s > 0:
            raise ConfigError("velocity_km_s", "must be > 0")
        if not self.attenuation_alpha >= 0:
            raise ConfigError("attenuation_alpha", "must be >= 0")
        if len(self.site_filter) == 0:
            raise ConfigError("site_filter", "must have at least one tap")


@dataclass
class SynthConfig:
    n_events: int = 200
    stations_per_event: tuple[int, int] = (2, 8)
    sample_rate_hz: float = 40.0
    duration_s: float = 90.0
    class_mix: tuple[float, ...] = (0.5, 0.5)
    seed: int = 0
    # station network
    network: str = "TR"
    n_stations: int = 40
    region_km: float = 300.0
    vertical_only_fraction: float = 0.1
    site_filter_taps: int = 7
    site_filter_strength: float = 0.6
    # path
    distance_range_km: tuple[float, float] = (10.0, 150.0)
    velocity_km_s: float = 6.0
    attenuation_alpha: float = 1e-3
    snr_db_range: tuple[float, float] = (5.0, 25.0)
    # per-class source templates, indexed by class id
    corner_freq_ranges: tuple[tuple[float, float], ...] = ((1.5, 3.0), (3.0, 5.0))
    decay_ranges: tuple[tuple[float, float], ...] = ((6.0, 12.0), (3.0, 6.0))
    horizontal_ratio_ranges: tuple[tuple[float, float], ...] = ((0.6, 1.4), (0.6, 1.4))
    depth_ranges: tuple[tuple[float, float], ...] = ((3.0, 20.0), (0.0, 1.5))
    # probability that an event sits in its class's home strip of the region
    class_region_bias: float = 0.9
    event_prefix: str = "ev"
    origin_lat: float = 39.0
    origin_lon: float = -112.0

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz))

    @property
    def n_classes(self) -> int:
        return len(self.class_mix)

    def validate(self) -> "SynthConfig":
        if int(self.n_events) != self.n_events or self.n_events < 1:
            raise ConfigError("n_events", "must be a positive integer")
        lo, hi = self.stations_per_event
        if not (1 <= lo <= hi):
            raise ConfigError("stations_per_event", "need 1 <= low <= high")
        if hi > self.n_stations:
            raise ConfigError("stations_per_event", "upper bound exceeds n_stations")
        if not self.sample_rate_hz > 0:
            raise ConfigError("sample_rate_hz", "must be > 0")
        if not self.duration_s > 0:
            raise ConfigError("duration_s", "must be > 0")
        samples = self.duration_s * self.sample_rate_hz
        if abs(samples - round(samples)) > 1e-9:
            raise ConfigError("duration_s", "duration_s * sample_rate_hz must be integral")
        mix = np.asarray(self.class_mix, dtype=float)
        if mix.ndim != 1 or mix.size < 2 or np.any(mix < 0):
            raise ConfigError("class_mix", "must be a probability vector over >= 2 classes")
        if abs(mix.sum() - 1.0) > 1e-12:
            raise ConfigError("class_mix", f"must sum to 1, got {mix.sum()!r}")
        for name in ("corner_freq_ranges", "decay_ranges", "horizontal_ratio_ranges",
                     "depth_ranges"):
            ranges = getattr(self, name)
            if len(ranges) != mix.size:
                raise ConfigError(name, f"need one range per class ({mix.size})")
            for r in ranges:
                if len(r) != 2 or r[0] > r[1]:
                    raise ConfigError(name, f"bad range {r}")
        if min(r[0] for r in self.corner_freq_ranges) <= 0:
            raise ConfigError("corner_freq_ranges", "frequencies must be > 0")
        if max(r[1] for r in self.corner_freq_ranges) >= self.sample_rate_hz / 2:
            raise ConfigError("corner_freq_ranges", "must lie below Nyquist")
        if min(r[0] for r in self.decay_ranges) <= 0:
            raise ConfigError("decay_ranges", "decay must be > 0")
        if min(r[0] for r in self.depth_ranges) < 0:
            raise ConfigError("depth_ranges", "depth must be >= 0")
        dlo, dhi = self.distance_range_km
        if not (0 < dlo <= dhi):
            raise ConfigError("distance_range_km", "need 0 < low <= high")
        if not self.velocity_km_s > 0:
            raise ConfigError("velocity_km_s", "must be > 0")
        if not self.attenuation_alpha >= 0:
            raise ConfigError("attenuation_alpha", "must be >= 0")
        if not 0 <= self.vertical_only_fraction <= 1:
            raise ConfigError("vertical_only_fraction", "must be in [0, 1]")
        if not 0 <= self.class_region_bias <= 1:
            raise ConfigError("class_region_bias", "must be in [0, 1]")
        if self.site_filter_taps < 1:
            raise ConfigError("site_filter_taps", "must be >= 1")
        if self.snr_db_range[0] > self.snr_db_range[1]:
            raise ConfigError("snr_db_range", "need low <= high")
        if not self.region_km > 0:
            raise ConfigError("region_km", "must be > 0")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown key")
        kw = {}
        for k, v in d.items():
            kw[k] = _tupleize(v) if isinstance(v, list) else v
        return cls(**kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _tupleize(v):
    if isinstance(v, list):
        return tuple(_tupleize(x) for x in v)
    return v


def shifted_config(cfg: SynthConfig, seed: int | None = None) -> SynthConfig:
    """A test-time variant of ``cfg`` whose stations and distances are disjoint from it.

    New network code (hence new site filters), a distance band starting where
    the training band ends, no class/region confound, and fresh event ids.
    """
    lo, hi = cfg.distance_range_km
    span = hi - lo
    return dataclasses.replace(
        cfg,
        seed=cfg.seed + 7919 if seed is None else seed,
        network=cfg.network + "X",
        event_prefix=cfg.event_prefix + "x",
        distance_range_km=(hi, hi + 0.6 * span),
        class_region_bias=1.0 / cfg.n_classes,
    )


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def site_filter(station_id: str, seed: int, taps: int = 7, strength: float = 0.6) -> tuple[float, ...]:
    """Unit-energy FIR for a station; a pure function of (station_id, seed)."""
    rng = _rng(seed, _SITE_STREAM, zlib.crc32(station_id.encode()))
    h = np.zeros(taps)
    h[0] = 1.0
    h += strength * rng.standard_normal(taps)
    h /= np.linalg.norm(h)
    return tuple(float(x) for x in h)


def source_spectrum(freqs: np.ndarray, corner_freq_hz: float) -> np.ndarray:
    """Band-pass amplitude shape peaking at the corner frequency."""
    x = freqs / corner_freq_hz
    return x**2 / (1.0 + x**4)


def source_wavelet(spec: SourceSpec, n: int, fs: float, channel: int = 0) -> np.ndarray:
    """Random-phase transient with the class spectrum and an exponential envelope.

    Normalized to unit RMS over the window, so energy is fixed regardless of the
    envelope. ``channel`` selects an independent phase realization.
    """
    if n <= 0 or fs <= 0:
        raise ConfigError("n" if n <= 0 else "fs", "must be > 0")
    rng = _rng(spec.seed, 0, channel)
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=freqs.size)
    spectrum = source_spectrum(freqs, spec.corner_freq_hz) * np.exp(1j * phase)
    spectrum[0] = 0.0
    x = np.fft.irfft(spectrum, n=n)
    t = np.arange(n) / fs
    envelope = (1.0 - np.exp(-t / 0.3)) * np.exp(-t / spec.envelope_decay_s)
    x = x * envelope
    rms = np.sqrt(np.mean(x**2))
    if rms == 0.0:
        x = envelope.copy()
        rms = np.sqrt(np.mean(x**2))
    return x / rms


def source_waveforms(spec: SourceSpec, n: int, fs: float, n_channels: int = 3) -> np.ndarray:
    """(n_channels, n) source motion; horizontals scaled by the horizontal ratio."""
    out = np.empty((n_channels, n))
    for c in range(n_channels):
        scale = 1.0 if c == 0 else spec.horizontal_ratio
        out[c] = scale * source_wavelet(spec, n, fs, channel=c)
    return out


def path_transfer(freqs: np.ndarray, path: PathSpec) -> np.ndarray:
    """Amplitude factor of spreading and attenuation at each frequency."""
    return np.exp(-path.attenuation_alpha * freqs * path.distance_km) / path.distance_km


def apply_path(x: np.ndarray, path: PathSpec, fs: float,
               rng: np.random.Generator | None = None) -> np.ndarray:
    """Propagate source motion ``x`` (channels, n) along ``path``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[1]
    shift = int(round(path.distance_km / path.velocity_km_s * fs))
    y = np.zeros_like(x)
    if shift < n:
        y[:, shift:] = x[:, : n - shift]
    y = y * (1.0 / path.distance_km)
    if path.attenuation_alpha > 0:
        nfft = 2 * n  # zero padding keeps the zero-phase filter from wrapping
        freqs = np.fft.rfftfreq(nfft, d=1.0 / fs)
        att = np.exp(-path.attenuation_alpha * freqs * path.distance_km)
        y = np.fft.irfft(np.fft.rfft(y, n=nfft, axis=1) * att, n=nfft, axis=1)[:, :n]
    h = np.asarray(path.site_filter, dtype=float)
    if not (h.size == 1 and h[0] == 1.0):
        y = np.stack([np.convolve(ch, h)[:n] for ch in y])
    if np.isfinite(path.snr_db):
        if rng is None:
            raise ConfigError("rng", "required when snr_db is finite")
        power = float(np.mean(y**2))
        sigma = math.sqrt(power / 10.0 ** (path.snr_db / 10.0))
        y = y + rng.normal(0.0, sigma, size=y.shape)
    return y


@dataclass
class Station:
    station_id: str
    x_km: float
    y_km: float
    n_channels: int
    site_filter: tuple[float, ...] = field(repr=False)


def build_network(cfg: SynthConfig) -> list[Station]:
    """Fixed station layout; stations ring the event region out to the max distance."""
    rng = _rng(cfg.seed, _STATION_STREAM)
    margin = cfg.distance_range_km[1] * 0.5
    lo, hi = -margin, cfg.region_km + margin
    stations = []
    for i in range(cfg.n_stations):
        sid = f"{cfg.network}{i:03d}"
        x, y = rng.uniform(lo, hi, size=2)
        n_ch = 1 if rng.uniform() < cfg.vertical_only_fraction else 3
        stations.append(Station(sid, float(x), float(y), n_ch,
                                site_filter(sid, cfg.seed, cfg.site_filter_taps,
                                            cfg.site_filter_strength)))
    return stations


def _to_latlon(cfg: SynthConfig, x_km: float, y_km: float) -> tuple[float, float]:
    lat = cfg.origin_lat + y_km / KM_PER_DEG
    lon = cfg.origin_lon + x_km / (KM_PER_DEG * math.cos(math.radians(cfg.origin_lat)))
    return lat, lon


def draw_source(class_id: int, cfg: SynthConfig, rng: np.random.Generator,
                x_km: float = 0.0, y_km: float = 0.0, seed: int = 0) -> SourceSpec:
    """Sample a source of the given class from its configured template ranges."""
    u = rng.uniform(size=4)

    def pick(ranges, k):
        lo, hi = ranges[class_id]
        return float(lo + (hi - lo) * u[k])

    lat, lon = _to_latlon(cfg, x_km, y_km)
    return SourceSpec(
        class_id=class_id,
        corner_freq_hz=pick(cfg.corner_freq_ranges, 0),
        envelope_decay_s=pick(cfg.decay_ranges, 1),
        depth_km=pick(cfg.depth_ranges, 2),
        lat=lat,
        lon=lon,
        horizontal_ratio=pick(cfg.horizontal_ratio_ranges, 3),
        seed=seed,
    )


@dataclass
class SyntheticEvent:
    event_id: str
    source: SourceSpec
    x_km: float
    y_km: float
    stations: list[Station]
    paths: list[PathSpec]
    records: list[WaveformRecord]


def generate_event(cfg: SynthConfig, index: int, network: list[Station]) -> SyntheticEvent:
    rng = _rng(cfg.seed, _EVENT_STREAM, index)
    k_classes = cfg.n_classes
    class_id = int(rng.choice(k_classes, p=np.asarray(cfg.class_mix)))
    strip = cfg.region_km / k_classes
    if rng.uniform() < cfg.class_region_bias:
        x = class_id * strip + rng.uniform(0.0, strip)
    else:
        x = rng.uniform(0.0, cfg.region_km)
    y = rng.uniform(0.0, cfg.region_km)
    source_seed = int(rng.integers(0, 2**63 - 1))
    source = draw_source(class_id, cfg, rng, x, y, seed=source_seed)

    lo, hi = cfg.stations_per_event
    k = int(rng.integers(lo, hi + 1))
    dist = np.array([math.hypot(s.x_km - x, s.y_km - y) for s in network])
    dlo, dhi = cfg.distance_range_km
    inside = np.flatnonzero((dist >= dlo) & (dist <= dhi))
    if inside.size >= k:
        chosen = rng.choice(inside, size=k, replace=False)
    else:
        # too few stations in the band: top up with those closest to it
        miss = np.maximum(dlo - dist, dist - dhi).clip(min=0.0)
        order = [i for i in np.lexsort((np.arange(dist.size), miss)) if i not in set(inside)]
        chosen = np.concatenate([inside, np.asarray(order[: k - inside.size], dtype=int)])
    chosen = np.sort(chosen)

    n, fs = cfg.n_samples, cfg.sample_rate_hz
    motion = source_waveforms(source, n, fs, 3)
    stations, paths, records = [], [], []
    for si in chosen:
        st = network[si]
        path = PathSpec(
            distance_km=max(float(dist[si]), 1e-3),
            velocity_km_s=cfg.velocity_km_s,
            attenuation_alpha=cfg.attenuation_alpha,
            site_filter=st.site_filter,
            snr_db=float(rng.uniform(*cfg.snr_db_range)),
        )
        wave = apply_path(motion[: st.n_channels], path, fs, rng)
        stations.append(st)
        paths.append(path)
        records.append(WaveformRecord(wave.astype(np.float32), fs))
    return SyntheticEvent(f"{cfg.event_prefix}{index:05d}", source, x, y, stations, paths, records)


def generate_catalog(cfg: SynthConfig) -> tuple[EventCatalog, list[WaveformRecord]]:
    """Build a catalog and its waveforms. ``records[i]`` belongs to ``catalog.rows[i]``."""
    cfg.validate()
    network = build_network(cfg)
    rows: list[CatalogRow] = []
    records: list[WaveformRecord] = []
    for i in range(cfg.n_events):
        ev = generate_event(cfg, i, network)
        for st, path, rec in zip(ev.stations, ev.paths, ev.records):
            slat, slon = _to_latlon(cfg, st.x_km, st.y_km)
            rows.append(CatalogRow(
                event_id=ev.event_id,
                station_id=st.station_id,
                event_class=ev.source.class_id,
                depth_km=ev.source.depth_km,
                event_lat=ev.source.lat,
                event_lon=ev.source.lon,
                station_lat=slat,
                station_lon=slon,
                distance_km=path.distance_km,
                n_channels=st.n_channels,
                waveform_path=f"waveforms/{ev.event_id}_{st.station_id}.swf",
            ))
            records.append(rec)
    return EventCatalog(rows), records


def write_dataset(out_dir, catalog: EventCatalog, records: list[WaveformRecord]) -> Path:
    """Write ``catalog.csv`` plus one SWF1 file per row under ``out_dir``."""
    out = Path(out_dir)
    (out / "waveforms").mkdir(parents=True, exist_ok=True)
    for row, rec in zip(catalog.rows, records):
        write_waveform(out / row.waveform_path, rec)
    path = out / "catalog.csv"
    write_catalog(path, catalog)
    catalog.root = out
    return path
