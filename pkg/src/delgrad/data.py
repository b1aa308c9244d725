"""Yin-Yang classification data and time-to-first-spike input encoding."""

import io
from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np

BIG_RADIUS = 0.5
SMALL_RADIUS = BIG_RADIUS / 2
DOT_RADIUS = BIG_RADIUS / 4
CENTER = (0.5, 0.5)
TOP = (0.5, 0.5 + BIG_RADIUS / 2)
BOTTOM = (0.5, 0.5 - BIG_RADIUS / 2)

SPLIT_SIZES = {"train": 5000, "validation": 1000, "test": 1000}


class Region(IntEnum):
    YIN = 0
    YANG = 1
    DOT = 2


@dataclass(frozen=True)
class EncodingConfig:
    t_early: float = 0.15
    t_late: float = 2.0

    def __post_init__(self):
        if not (self.t_late > self.t_early >= 0):
            raise ValueError("need t_late > t_early >= 0")

    @property
    def span(self):
        return self.t_late - self.t_early


def rescale_span(cfg, span):
    """Copy of ``cfg`` whose latest input time is ``t_early + span``."""
    if not span > 0:
        raise ValueError("span must be positive")
    return replace(cfg, t_late=cfg.t_early + float(span))


def _dist(x, y, c):
    return np.hypot(x - c[0], y - c[1])


def in_disc(x, y):
    return _dist(x, y, CENTER) <= BIG_RADIUS


def region(x, y):
    """Region label of points inside the big disc (vectorised)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d_top = _dist(x, y, TOP)
    d_bot = _dist(x, y, BOTTOM)
    dot = (d_top <= DOT_RADIUS) | (d_bot <= DOT_RADIUS)
    yin = (d_bot <= SMALL_RADIUS) | ((x > 0.5) & (d_top > SMALL_RADIUS))
    out = np.where(yin, Region.YIN, Region.YANG)
    return np.where(dot, Region.DOT, out).astype(int)


@dataclass
class YinYangData:
    xy: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    def encode(self, cfg=EncodingConfig()):
        return encode(self.xy, cfg)


def generate(seed, n):
    """``n`` class-balanced points, deterministic in ``seed``.

    Sample ``i`` targets class ``i % 3``; candidates are drawn uniformly on
    the unit square and rejected until one falls inside the disc with the
    targeted label.  The result is shuffled with the same generator.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    xy = np.empty((n, 2))
    labels = np.empty(n, dtype=int)
    for i in range(n):
        goal = i % 3
        while True:
            x, y = rng.random(2)
            if in_disc(x, y) and region(x, y) == goal:
                break
        xy[i] = x, y
        labels[i] = goal
    perm = rng.permutation(n)
    return YinYangData(xy[perm], labels[perm])


def make_splits(seed, sizes=None):
    """Train/validation/test sets from independent child seeds."""
    sizes = dict(SPLIT_SIZES if sizes is None else sizes)
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    return {name: generate(child, n) for (name, n), child in zip(sizes.items(), children)}


def encode(xy, cfg=EncodingConfig()):
    """Spike times for features (x, y, 1-x, 1-y): later for larger values."""
    xy = np.asarray(xy, dtype=float)
    single = xy.ndim == 1
    xy = np.atleast_2d(xy)
    if np.any((xy < 0) | (xy > 1)):
        raise ValueError("coordinates must lie in [0, 1]")
    feats = np.concatenate([xy, 1.0 - xy], axis=1)
    t = cfg.t_early + feats * cfg.span
    return t[0] if single else t


def to_csv(data, path, cfg=EncodingConfig(), seed=None):
    """Write ``x,y,label,t_x,t_y,t_1mx,t_1my`` with a commented config header."""
    times = encode(data.xy, cfg)
    buf = io.StringIO()
    buf.write(f"# yinyang seed={seed} n={len(data)} t_early={cfg.t_early!r} t_late={cfg.t_late!r}\n")
    buf.write("x,y,label,t_x,t_y,t_1mx,t_1my\n")
    for (x, y), lab, t in zip(data.xy, data.labels, times):
        buf.write(",".join([repr(float(x)), repr(float(y)), str(int(lab))]
                           + [repr(float(v)) for v in t]) + "\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def from_csv(path):
    arr = np.loadtxt(path, delimiter=",", comments="#", skiprows=2, ndmin=2)
    return YinYangData(arr[:, :2], arr[:, 2].astype(int))


def splits_to_csv(splits, path, cfg=EncodingConfig(), header=""):
    """All splits in one file with a leading ``split`` column."""
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    buf.write(f"# t_early={cfg.t_early!r} t_late={cfg.t_late!r}\n")
    buf.write("split,x,y,label,t_x,t_y,t_1mx,t_1my\n")
    for name, data in splits.items():
        times = encode(data.xy, cfg)
        for (x, y), lab, t in zip(data.xy, data.labels, times):
            buf.write(",".join([name, repr(float(x)), repr(float(y)), str(int(lab))]
                               + [repr(float(v)) for v in t]) + "\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def splits_from_csv(path):
    out = {}
    with open(path) as fh:
        rows = [ln.rstrip("\n").split(",") for ln in fh if not ln.startswith("#")]
    for r in rows[1:]:
        out.setdefault(r[0], []).append([float(r[1]), float(r[2]), int(r[3])])
    return {k: YinYangData(np.array(v)[:, :2], np.array(v)[:, 2].astype(int))
            for k, v in out.items()}
