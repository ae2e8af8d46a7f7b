"""Next-note model with pairwise feature submodels and four output heads.

Each of the six unordered pairs of {pitch, onset, duration, velocity} feeds
a dense submodel. Each feature's head concatenates the three submodels whose
pair contains that feature and predicts the feature for the next note.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError
from .midi import FEATURES, FeatureScalers, NoteDataset, NoteEvent, normalize_features
from .nn import ModelGraph, TrainConfig, TrainReport, train

log = logging.getLogger(__name__)

PAIRS = (
    ("pitch", "duration"),
    ("pitch", "onset"),
    ("pitch", "velocity"),
    ("duration", "velocity"),
    ("onset", "velocity"),
    ("duration", "onset"),
)
# column of each feature in the normalized feature matrix
COLUMN = {"pitch": 0, "onset": 1, "duration": 2, "velocity": 3}
MIN_SECONDS = 1e-3


@dataclass
class MimoSpec:
    sub_layers: int = 2
    sub_width: int = 32
    head_layers: int = 2
    head_width: int = 32
    activation: str = "tanh"
    head_loss_weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        for k in ("sub_layers", "sub_width", "head_width"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be >= 1")
        if self.head_layers < 0:
            raise ConfigError("head_layers must be >= 0")
        self.head_loss_weights = tuple(float(w) for w in self.head_loss_weights)
        if len(self.head_loss_weights) != 4 or any(w < 0 for w in self.head_loss_weights):
            raise ConfigError("head_loss_weights needs 4 non-negative values")


def submodel_name(pair) -> str:
    return "sub_" + "_".join(pair)


def head_name(feature: str) -> str:
    return "head_" + feature


def build_mimo(spec: MimoSpec, seed: int = 0) -> ModelGraph:
    g = ModelGraph(seed=seed)
    for f in FEATURES:
        g.add_input(f, 1)
    subs = {}
    for pair in PAIRS:
        name = submodel_name(pair)
        h = g.add_concat(list(pair), name=f"{name}.in")
        for i in range(spec.sub_layers):
            h = g.add_dense(h, spec.sub_width, spec.activation, name=f"{name}.dense{i}")
        subs[pair] = h
    outs = []
    for f in FEATURES:
        h = g.add_concat([subs[p] for p in PAIRS if f in p], name=f"{head_name(f)}.in")
        for i in range(spec.head_layers):
            h = g.add_dense(h, spec.head_width, spec.activation, name=f"{head_name(f)}.dense{i}")
        outs.append(g.add_dense(h, 1, "linear", name=head_name(f)))
    g.set_outputs(outs)
    return g


def make_training_pairs(dataset: NoteDataset) -> tuple[np.ndarray, np.ndarray, FeatureScalers]:
    """Normalized features of each note and of the note after it."""
    if len(dataset) < 2:
        raise DataError(f"need at least 2 notes to form training pairs, got {len(dataset)}")
    feats, scalers = normalize_features(dataset)
    return feats[:-1], feats[1:], scalers


def _feeds(x: np.ndarray) -> dict[str, np.ndarray]:
    x = np.atleast_2d(x)
    return {f: x[:, [COLUMN[f]]] for f in FEATURES}


def train_mimo(graph: ModelGraph, inputs: np.ndarray, targets: np.ndarray, config: TrainConfig,
               head_loss_weights=(1.0, 1.0, 1.0, 1.0)) -> TrainReport:
    """Train on next-note pairs; total loss is the weighted sum of head MSEs.

    ``report.head_losses`` is keyed by feature name and holds unweighted
    per-head curves.
    """
    if len(inputs) == 0:
        raise DataError("no training pairs")
    targets = np.atleast_2d(targets)
    weights = {head_name(f): float(w) for f, w in zip(FEATURES, head_loss_weights)}
    report = train(
        graph,
        _feeds(inputs),
        {head_name(f): targets[:, [COLUMN[f]]] for f in FEATURES},
        config,
        loss_weights=weights,
    )
    report.head_losses = {f: report.head_losses[head_name(f)] for f in FEATURES}
    return report


@dataclass
class NotePrediction:
    normalized: np.ndarray  # pitch, onset interval, duration, velocity
    pitch: int
    onset_delta: float
    duration: float
    velocity: int
    clamped: list[str] = field(default_factory=list)


def predict_next(graph: ModelGraph, features: np.ndarray, scalers: FeatureScalers) -> NotePrediction:
    out = graph.forward(_feeds(features))
    norm = np.array([out[head_name(f)][0, 0] for f in FEATURES])
    raw = scalers.inverse(norm)
    clamped = []
    pitch = int(np.rint(raw[0]))
    if not 0 <= pitch <= 127:
        pitch = int(np.clip(pitch, 0, 127))
        clamped.append("pitch")
    velocity = int(np.rint(raw[3]))
    if not 1 <= velocity <= 127:
        velocity = int(np.clip(velocity, 1, 127))
        clamped.append("velocity")
    delta, duration = float(raw[1]), float(raw[2])
    if not delta >= MIN_SECONDS:
        delta = MIN_SECONDS
        clamped.append("onset")
    if not duration >= MIN_SECONDS:
        duration = MIN_SECONDS
        clamped.append("duration")
    return NotePrediction(norm, pitch, delta, duration, velocity, clamped)


def generate_sequence(graph: ModelGraph, seed_note: NoteEvent, length: int,
                      scalers: FeatureScalers) -> NoteDataset:
    """Deterministic autoregressive rollout of ``length`` notes after ``seed_note``.

    The seed's onset interval is its onset measured from time zero, the same
    convention the training features use for a file's first note. Each
    prediction is clamped into MIDI ranges, turned into an absolute onset and
    fed back. The number of clamped values is stored in ``clamp_count``.
    """
    if length < 1:
        raise ConfigError(f"length must be >= 1, got {length}")
    raw = np.array([seed_note.pitch, seed_note.onset, seed_note.duration, seed_note.velocity], dtype=np.float64)
    onset = seed_note.onset
    events, clamps = [], 0
    for _ in range(length):
        pred = predict_next(graph, scalers.transform(raw), scalers)
        clamps += len(pred.clamped)
        onset = onset + pred.onset_delta
        events.append(NoteEvent(onset, pred.duration, pred.pitch, pred.velocity))
        raw = np.array([pred.pitch, pred.onset_delta, pred.duration, pred.velocity], dtype=np.float64)
    if clamps:
        log.info("rollout clamped %d predicted value(s)", clamps)
    return NoteDataset(events, ["generated"] * len(events), clamp_count=clamps)


# piano roll


def roll_geometry(dataset: NoteDataset, width_px: int, height_px: int):
    """Pixel box ``(x0, y0, x1, y1)`` (inclusive) for every note.

    Time maps linearly from the first onset to the last offset across the
    width. Pitch rows run from one semitone above the highest note (top) to
    one below the lowest (bottom), each ``height / rows`` pixels tall.
    """
    arr = dataset.to_array()
    t0, t1 = arr[:, 0].min(), (arr[:, 0] + arr[:, 1]).max()
    pmin, pmax = int(arr[:, 2].min()), int(arr[:, 2].max())
    rows = pmax - pmin + 3
    span = t1 - t0
    boxes = []
    for on, dur, pitch, _ in arr:
        x0 = int(np.floor((on - t0) / span * width_px))
        x1 = int(np.ceil((on + dur - t0) / span * width_px)) - 1
        x0 = min(max(x0, 0), width_px - 1)
        x1 = min(max(x1, x0), width_px - 1)
        y0 = int(np.floor((pmax + 1 - pitch) * height_px / rows))
        y1 = max(y0, int(np.floor((pmax + 2 - pitch) * height_px / rows)) - 1)
        boxes.append((x0, y0, x1, y1))
    return boxes


def render_piano_roll(dataset: NoteDataset, width_px: int = 800, height_px: int = 400) -> bytes:
    """PNG of the notes: time on x, MIDI pitch on y (high at the top)."""
    if len(dataset) == 0:
        raise DataError("cannot draw an empty piano roll")
    if width_px < 1 or height_px < 1:
        raise ConfigError("image size must be positive")
    img = np.full((height_px, width_px, 3), 255, dtype=np.uint8)
    for x0, y0, x1, y1 in roll_geometry(dataset, width_px, height_px):
        img[y0:y1 + 1, x0:x1 + 1] = (30, 60, 160)
    out = io.BytesIO()
    Image.fromarray(img, "RGB").save(out, format="PNG", compress_level=6)
    return out.getvalue()
