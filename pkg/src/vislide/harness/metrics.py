"""Episode logs and the scalar metrics computed from them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..learning.reward import TERMS
from ..sim import LOG_COLUMNS


class MetricsError(ValueError):
    pass


AXIS_NAMES = ("x", "y", "z", "roll", "pitch", "yaw")


def episode_columns(adapted_axes) -> list:
    names = [AXIS_NAMES[a] for a in adapted_axes]
    return (["phase"] + list(LOG_COLUMNS) + [f"a_{n}" for n in names] + [f"a_filt_{n}" for n in names]
            + [f"r_{t}" for t in TERMS] + ["r_total"])


@dataclass
class EpisodeLog:
    """Control-rate time series of one instance, truncated after a fault.

    ``phase`` is 0 during the approach and 1 while sliding.
    """

    columns: list
    data: np.ndarray
    fault_code: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, float)
        if self.data.ndim != 2 or self.data.shape[1] != len(self.columns):
            raise ValueError(f"log data has shape {self.data.shape}, expected (n, {len(self.columns)})")
        self._index = {c: i for i, c in enumerate(self.columns)}

    def __len__(self):
        return self.data.shape[0]

    def col(self, name: str) -> np.ndarray:
        return self.data[:, self._index[name]]

    def has(self, name: str) -> bool:
        return name in self._index

    @property
    def sliding(self) -> np.ndarray:
        return self.col("phase") > 0.5


def window_mask(log: EpisodeLog, window=None) -> np.ndarray:
    """Rows of the sliding phase, optionally narrowed to a window.

    ``window`` is None, a boolean mask, or a mapping with one of ``t_s`` (time
    bounds) or ``s_m`` (tip arc-length bounds).
    """
    mask = log.sliding.copy()
    if window is None:
        return mask
    if isinstance(window, np.ndarray):
        if window.shape != mask.shape:
            raise MetricsError("window mask length does not match the log")
        return mask & window.astype(bool)
    if len(window) != 1:
        raise MetricsError("window needs exactly one of 't_s' or 's_m'")
    (key, (lo, hi)), = window.items()
    if key == "t_s":
        x = log.col("t_s")
    elif key == "s_m":
        x = log.col("tip_s_m")
    else:
        raise MetricsError(f"unknown window key {key!r}")
    return mask & (x >= lo) & (x <= hi)


def detachment_window(log: EpisodeLog, event_s: float, duration: float, lead: float = 0.01) -> np.ndarray:
    """Mask of ``duration`` seconds starting at the first contact loss once the
    tip has come within ``lead`` of ``event_s``; starts at the arrival itself
    when contact is never lost."""
    s = log.col("tip_s_m")
    slide = log.sliding
    reached = np.flatnonzero(slide & (s >= event_s - lead))
    mask = np.zeros(len(log), bool)
    if reached.size == 0:
        return mask
    i0 = reached[0]
    lost = np.flatnonzero(log.col("in_contact")[i0:] < 0.5)
    start = i0 + (lost[0] if lost.size else 0)
    t = log.col("t_s")
    mask[start:] = t[start:] < t[start] + duration - 1e-9
    return mask


@dataclass(frozen=True)
class Metrics:
    mean_tilt_deg: float
    rms_pitch_rate: float
    rms_position_error: float
    rms_attitude_error: float
    contact_loss_fraction: float
    fault: bool

    FIELDS = ("mean_tilt_deg", "rms_pitch_rate", "rms_position_error", "rms_attitude_error",
              "contact_loss_fraction", "fault")

    def as_row(self) -> list:
        return [getattr(self, f) for f in self.FIELDS]

    @classmethod
    def mean(cls, items) -> "Metrics":
        items = list(items)
        vals = [float(np.mean([getattr(m, f) for m in items])) for f in cls.FIELDS[:-1]]
        return cls(*vals, any(m.fault for m in items))


def _rms(x) -> float:
    return float(np.sqrt(np.mean(np.square(x)))) if len(x) else 0.0


def compute_metrics(log: EpisodeLog, window=None) -> Metrics:
    """Tilt, pitch-rate and tracking statistics over the sliding phase (or a window of it)."""
    m = window_mask(log, window)
    if not log.sliding.any():
        raise MetricsError("log has no sliding-phase samples")
    if not m.any():
        raise MetricsError("window selects no sliding-phase samples")
    d = log.data[m]
    idx = log._index
    e_p = d[:, [idx["ex_m"], idx["ey_m"], idx["ez_m"]]]
    e_R = d[:, [idx["eRx_rad"], idx["eRy_rad"], idx["eRz_rad"]]]
    return Metrics(
        mean_tilt_deg=math.degrees(float(np.mean(d[:, idx["tilt_rad"]]))),
        rms_pitch_rate=_rms(d[:, idx["wy_rad_per_s"]]),
        rms_position_error=_rms(np.linalg.norm(e_p, axis=1)),
        rms_attitude_error=_rms(np.linalg.norm(e_R, axis=1)),
        contact_loss_fraction=float(np.mean(d[:, idx["in_contact"]] < 0.5)),
        fault=bool(log.fault_code != 0),
    )
