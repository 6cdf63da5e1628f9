"""Dataset ingestion, normalization, windowing, chronological splits, and a
deterministic synthetic generator for desk-scale runs.

On-disk layout: a manifest (JSON) naming the traffic table (rows = steps,
columns = nodes), distance triples, an optional weather table and a holiday
list."""

from __future__ import annotations

import datetime as dt
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .aim import AuxFeatures, HolidayCalendar, encode_time_features
from .graph import GraphSpec


@dataclass
class DatasetManifest:
    name: str
    period_minutes: int
    start_time: dt.datetime
    node_ids: list
    coordinates: np.ndarray | None
    files: dict
    weather_conditions: list
    calendar: HolidayCalendar

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def weather_dim(self) -> int:
        return 2 + len(self.weather_conditions) if self.weather_conditions else 0


@dataclass
class Dataset:
    manifest: DatasetManifest
    traffic: np.ndarray          # [T_total, N]
    valid: np.ndarray            # [T_total, N] bool, False where reading is 0
    spec: GraphSpec
    time_of_day: np.ndarray      # [T_total]
    day_of_week: np.ndarray      # [T_total, 7]
    holiday: np.ndarray          # [T_total]
    weather: np.ndarray | None   # [T_total, N, weather_dim] raw

    @property
    def n_steps(self) -> int:
        return self.traffic.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.traffic.shape[1]


@dataclass
class WindowBatch:
    x: np.ndarray            # [B, q, N, S] normalized traffic
    y: np.ndarray            # [B, T, N, 1] raw target values
    y_valid: np.ndarray      # [B, T, N, 1] validity flags
    d_hist: AuxFeatures
    f_fut: AuxFeatures
    starts: np.ndarray


# -- normalization -------------------------------------------------------------

@dataclass
class ZScore:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x):
        return (x - self.mean) / self.std

    def invert(self, z):
        return z * self.std + self.mean


def zscore_fit(train_series: np.ndarray, axis=None) -> ZScore:
    """Population statistics from the training range only."""
    if train_series.size == 0:
        raise ValueError("cannot fit normalization on an empty training range")
    mean = train_series.mean(axis=axis)
    std = train_series.std(axis=axis)
    if np.any(std == 0):
        warnings.warn("zero standard deviation in training data; using 1.0")
        std = np.where(std == 0, 1.0, std)
    return ZScore(np.asarray(mean), np.asarray(std))


# -- splits / windows ------------------------------------------------------------

def chronological_split(n_steps: int, s: int, t: int):
    """70/10/20 contiguous ranges; errors if any split cannot hold a window."""
    a, b = int(n_steps * 0.7), int(n_steps * 0.8)
    ranges = ((0, a), (a, b), (b, n_steps))
    for lo, hi in ranges:
        if hi - lo < s + t:
            raise ValueError(
                f"split [{lo},{hi}) too short for S={s}, T={t} windows")
    return ranges


def window_starts(split_range, s: int, t: int) -> np.ndarray:
    """Start indices of windows fully inside the split (x: [i, i+S), y next T)."""
    lo, hi = split_range
    count = (hi - lo) - s - t + 1
    return lo + np.arange(max(count, 0))


def prepare(dataset: Dataset, s: int, t: int):
    """Fit train-only normalization and return a batch assembler."""
    splits = chronological_split(dataset.n_steps, s, t)
    train_lo, train_hi = splits[0]
    scaler = zscore_fit(dataset.traffic[train_lo:train_hi])
    weather_scaled = None
    if dataset.weather is not None:
        weather_scaled = dataset.weather.copy()
        wsc = zscore_fit(dataset.weather[train_lo:train_hi, :, :2]
                         .reshape(-1, 2), axis=0)
        weather_scaled[..., :2] = wsc.apply(weather_scaled[..., :2])
    position_std = None
    if dataset.manifest.coordinates is not None:
        coords = dataset.manifest.coordinates
        csc = zscore_fit(coords, axis=0)
        position_std = csc.apply(coords).astype(np.float32)
    return PreparedData(dataset, s, t, splits, scaler, weather_scaled,
                        position_std)


@dataclass
class PreparedData:
    dataset: Dataset
    s: int
    t: int
    splits: tuple
    scaler: ZScore
    weather_scaled: np.ndarray | None
    position_std: np.ndarray | None

    def starts(self, split: str) -> np.ndarray:
        idx = {"train": 0, "val": 1, "test": 2}[split]
        return window_starts(self.splits[idx], self.s, self.t)

    def _aux(self, offsets: np.ndarray, length: int) -> AuxFeatures:
        ds = self.dataset
        steps = offsets[:, None] + np.arange(length)[None, :]
        weather = None
        if self.weather_scaled is not None:
            weather = self.weather_scaled[steps].astype(np.float32)
        return AuxFeatures(time_of_day=ds.time_of_day[steps],
                           day_of_week=ds.day_of_week[steps],
                           holiday=ds.holiday[steps],
                           position=self.position_std,
                           weather=weather)

    def batch(self, starts: np.ndarray) -> WindowBatch:
        ds, s, t = self.dataset, self.s, self.t
        starts = np.asarray(starts)
        x_steps = starts[:, None] + np.arange(s)[None, :]
        y_steps = starts[:, None] + s + np.arange(t)[None, :]
        x = self.scaler.apply(ds.traffic[x_steps]).astype(np.float32)
        x = x[:, None, :, :].transpose(0, 1, 3, 2)     # [B, 1, N, S]
        y = ds.traffic[y_steps][..., None].astype(np.float32)       # [B,T,N,1]
        y_valid = ds.valid[y_steps][..., None].astype(np.float32)
        return WindowBatch(x=x, y=y, y_valid=y_valid,
                           d_hist=self._aux(starts, s),
                           f_fut=self._aux(starts + s, t),
                           starts=starts)


# -- loading ------------------------------------------------------------------

def load_manifest(path: Path) -> DatasetManifest:
    path = Path(path)
    raw = json.loads((path / "manifest.json").read_text())
    nodes = raw["nodes"]
    coords = None
    if all("lat" in n and "lon" in n for n in nodes) and nodes:
        coords = np.array([[n["lat"], n["lon"]] for n in nodes], dtype=np.float64)
    cal = raw["calendar"]
    calendar = HolidayCalendar(
        start=dt.date.fromisoformat(cal["start"]),
        end=dt.date.fromisoformat(cal["end"]),
        holidays={dt.date.fromisoformat(d) for d in raw.get("holidays", [])})
    return DatasetManifest(
        name=raw["name"],
        period_minutes=int(raw["period_minutes"]),
        start_time=dt.datetime.fromisoformat(raw["start_time"]),
        node_ids=[n["id"] for n in nodes],
        coordinates=coords,
        files={k: str(path / v) for k, v in raw["files"].items()},
        weather_conditions=raw.get("weather_conditions", []),
        calendar=calendar)


def load_dataset(path) -> Dataset:
    path = Path(path)
    if not (path / "manifest.json").exists():
        raise FileNotFoundError(f"no manifest.json under {path}")
    man = load_manifest(path)
    traffic = pd.read_csv(man.files["traffic"])
    if list(traffic.columns) != man.node_ids:
        raise ValueError("traffic table columns do not match the node manifest")
    traffic = traffic.to_numpy(dtype=np.float32)
    valid = traffic != 0.0

    id_to_idx = {nid: i for i, nid in enumerate(man.node_ids)}
    dist = pd.read_csv(man.files["distances"])
    triples = [(id_to_idx[r.from_id], id_to_idx[r.to_id], float(r.distance))
               for r in dist.itertuples()]
    spec = GraphSpec(node_ids=man.node_ids, distances=triples,
                     coordinates=man.coordinates)

    n_steps = traffic.shape[0]
    step = dt.timedelta(minutes=man.period_minutes)
    timestamps = [man.start_time + i * step for i in range(n_steps)]
    tod, dow, hol = encode_time_features(timestamps, man.period_minutes,
                                         man.calendar)

    weather = None
    if "weather" in man.files:
        wdf = pd.read_csv(man.files["weather"])
        cond_idx = {c: i for i, c in enumerate(man.weather_conditions)}
        weather = np.zeros((n_steps, man.n_nodes, man.weather_dim),
                           dtype=np.float32)
        steps = wdf["step"].to_numpy()
        nodes = wdf["node"].map(id_to_idx).to_numpy()
        weather[steps, nodes, 0] = wdf["temperature"].to_numpy()
        weather[steps, nodes, 1] = wdf["humidity"].to_numpy()
        conds = wdf["condition"].map(cond_idx).to_numpy()
        weather[steps, nodes, 2 + conds] = 1.0

    return Dataset(manifest=man, traffic=traffic, valid=valid, spec=spec,
                   time_of_day=tod, day_of_week=dow, holiday=hol,
                   weather=weather)


# -- synthetic generator ----------------------------------------------------------

def synth_generate(n_nodes: int, n_steps: int, seed: int, out_dir,
                   period_minutes: int = 5) -> Path:
    """Ring of nodes with a daily sinusoid per node, neighbor coupling and
    seeded noise; emits the full on-disk dataset. Deterministic per seed."""
    if n_nodes < 2:
        raise ValueError("synthetic dataset needs at least 2 nodes")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    slots_per_day = 1440 // period_minutes

    node_ids = [f"n{i:03d}" for i in range(n_nodes)]
    angle = 2 * np.pi * np.arange(n_nodes) / n_nodes
    lat = 34.0 + 0.5 * np.sin(angle)
    lon = -118.0 + 0.5 * np.cos(angle)

    phase = rng.uniform(0, 2 * np.pi, size=n_nodes)
    amp = rng.uniform(2.0, 4.0, size=n_nodes)
    tod = 2 * np.pi * (np.arange(n_steps) % slots_per_day) / slots_per_day
    base = 10.0 + amp[None, :] * np.sin(tod[:, None] + phase[None, :])
    left, right = np.roll(base, 1, axis=1), np.roll(base, -1, axis=1)
    coupled = np.empty_like(base)
    coupled[0] = base[0]
    coupled[1:] = 0.5 * (left[:-1] + right[:-1])   # neighbor state, one step back
    signal = base + 0.6 * coupled + 0.1 * rng.standard_normal(base.shape)

    n_days = (n_steps * period_minutes) // 1440 + 2
    start = dt.datetime(2024, 1, 1)
    holidays = [(start.date() + dt.timedelta(days=d)).isoformat()
                for d in range(6, n_days, 7)]
    conditions = ["clear", "cloudy", "rain"]
    cond_codes = rng.integers(0, len(conditions), size=(n_steps, n_nodes))
    temperature = (15.0 + 8.0 * np.sin(tod[:, None] - np.pi / 2)
                   + rng.standard_normal((n_steps, n_nodes)))
    humidity = np.clip(0.5 + 0.2 * np.cos(tod[:, None])
                       + 0.05 * rng.standard_normal((n_steps, n_nodes)), 0, 1)

    pd.DataFrame(np.round(signal, 6), columns=node_ids).to_csv(
        out / "traffic.csv", index=False, float_format="%.6f")

    rows = []
    half = n_nodes // 2
    for i in range(n_nodes):
        for j in range(n_nodes):
            if i == j:
                continue
            ring = min(abs(i - j), n_nodes - abs(i - j))
            if ring <= half:
                rows.append((node_ids[i], node_ids[j], float(ring)))
    pd.DataFrame(rows, columns=["from_id", "to_id", "distance"]).to_csv(
        out / "distances.csv", index=False, float_format="%.6f")

    wrows = {"step": np.repeat(np.arange(n_steps), n_nodes),
             "node": np.tile(node_ids, n_steps),
             "temperature": np.round(temperature.reshape(-1), 4),
             "humidity": np.round(humidity.reshape(-1), 4),
             "condition": [conditions[c] for c in cond_codes.reshape(-1)]}
    pd.DataFrame(wrows).to_csv(out / "weather.csv", index=False,
                               float_format="%.4f")

    manifest = {
        "name": f"synth-{n_nodes}x{n_steps}-seed{seed}",
        "period_minutes": period_minutes,
        "start_time": start.isoformat(),
        "nodes": [{"id": nid, "lat": round(float(la), 6), "lon": round(float(lo), 6)}
                  for nid, la, lo in zip(node_ids, lat, lon)],
        "files": {"traffic": "traffic.csv", "distances": "distances.csv",
                  "weather": "weather.csv"},
        "weather_conditions": conditions,
        "holidays": holidays,
        "calendar": {"start": start.date().isoformat(),
                     "end": (start.date() + dt.timedelta(days=n_days)).isoformat()},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return out
