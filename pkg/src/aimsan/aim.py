"""Auxiliary-information embedding: independent two-layer branches for time,
position and weather, concatenated on the channel axis and broadcast to a
common [B, H*branches, N, T] layout."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, concat

TIME_DIM = 9        # time-of-day fraction + day-of-week one-hot + holiday flag
POSITION_DIM = 2    # standardized (lat, lon)
BRANCH_ORDER = ("time", "position", "weather")


class ConfigurationError(ValueError):
    """A requested branch has no matching attribute or weights."""


@dataclass
class HolidayCalendar:
    start: dt.date
    end: dt.date
    holidays: set

    def contains(self, day: dt.date) -> bool:
        return self.start <= day <= self.end


@dataclass
class AuxFeatures:
    """Raw auxiliary attributes for a window batch.

    time_of_day: [B, T] fraction of day in [0, 1); day_of_week: [B, T, 7]
    one-hot; holiday: [B, T] flag; position: [N, 2] standardized or None;
    weather: [B, T, N, p_w] standardized or None.
    """
    time_of_day: np.ndarray
    day_of_week: np.ndarray
    holiday: np.ndarray
    position: np.ndarray | None = None
    weather: np.ndarray | None = None

    def time_matrix(self) -> np.ndarray:
        return np.concatenate([self.time_of_day[..., None],
                               self.day_of_week,
                               self.holiday[..., None]], axis=-1)

    @property
    def n_steps(self) -> int:
        return self.time_of_day.shape[1]


@dataclass
class EmbeddedAux:
    values: Tensor  # [B, H * active_branches, N, T']


@dataclass
class AimBranch:
    w1: Tensor  # [H, p]
    b1: Tensor  # [H]
    w2: Tensor  # [H, H]
    b2: Tensor  # [H]


def _two_layer(feats: np.ndarray, br: AimBranch) -> Tensor:
    """linear -> tanh -> linear over the trailing feature axis."""
    x = Tensor(feats.astype(br.w1.dtype))
    hidden = (x @ br.w1.transpose((1, 0)) + br.b1).tanh()
    return hidden @ br.w2.transpose((1, 0)) + br.b2


def aim_forward(aux: AuxFeatures, params: dict, active_branches,
                n_nodes: int) -> EmbeddedAux:
    """Embed each active branch and concatenate on the channel axis.

    Time features broadcast over nodes, position over time; output is
    [B, H * |active|, N, T'].
    """
    active = [b for b in BRANCH_ORDER if b in set(active_branches)]
    if not active:
        raise ConfigurationError("at least one branch must be active")
    b_sz, t_sz = aux.time_of_day.shape
    parts = []
    for name in active:
        if name not in params:
            raise ConfigurationError(f"no weights for branch {name!r}")
        br = params[name]
        if name == "time":
            y = _two_layer(aux.time_matrix(), br)        # [B, T, H]
            y = y.transpose((0, 2, 1)).reshape(b_sz, -1, 1, t_sz)
            parts.append(y.expand((b_sz, y.shape[1], n_nodes, t_sz)))
        elif name == "position":
            if aux.position is None:
                raise ConfigurationError("position branch active but no coordinates")
            y = _two_layer(aux.position, br)             # [N, H]
            y = y.transpose((1, 0)).reshape(1, -1, n_nodes, 1)
            parts.append(y.expand((b_sz, y.shape[1], n_nodes, t_sz)))
        else:
            if aux.weather is None:
                raise ConfigurationError("weather branch active but no weather data")
            y = _two_layer(aux.weather, br)              # [B, T, N, H]
            parts.append(y.transpose((0, 3, 2, 1)))
    return EmbeddedAux(concat(parts, axis=1))


def temporal_align(e: EmbeddedAux, t_layer: int) -> EmbeddedAux:
    """Keep the last t_layer time slots (the current time window)."""
    t = e.values.shape[3]
    if t_layer > t:
        raise ShapeError(f"cannot align to {t_layer} slots from {t}")
    if t_layer == t:
        return e
    return EmbeddedAux(e.values.take_last(t_layer, axis=3))


def encode_time_features(timestamps, period_minutes: int,
                         calendar: HolidayCalendar) -> tuple:
    """Per-step time features: fraction of day, day-of-week one-hot, holiday.

    timestamps: sequence of datetime.datetime. Returns ([T], [T,7], [T])
    float32 arrays.
    """
    if 1440 % period_minutes != 0:
        raise ValueError(f"period {period_minutes}min does not divide one day")
    slots_per_day = 1440 // period_minutes
    tod = np.empty(len(timestamps), dtype=np.float32)
    dow = np.zeros((len(timestamps), 7), dtype=np.float32)
    hol = np.empty(len(timestamps), dtype=np.float32)
    for idx, ts in enumerate(timestamps):
        day = ts.date()
        if not calendar.contains(day):
            raise ValueError(f"timestamp {ts} outside calendar "
                             f"[{calendar.start}, {calendar.end}]")
        minutes = ts.hour * 60 + ts.minute
        tod[idx] = (minutes // period_minutes) / slots_per_day
        dow[idx, ts.weekday()] = 1.0
        hol[idx] = 1.0 if day in calendar.holidays else 0.0
    return tod, dow, hol
