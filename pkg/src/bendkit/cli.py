"""Command-line entry point for every pipeline.

Usage: ``bendkit [--config FILE] [--seed N] GROUP ACTION [options]``.

Option values resolve in this order: command line, then the ``--config``
file, then built-in defaults. The config file holds one ``key = value`` per
line (``#`` starts a comment); keys are option names with underscores, list
values are comma-separated, and relative paths are taken relative to the
config file. The log level comes from the ``BENDKIT_LOG_LEVEL`` environment
variable (default ``INFO``); logs go to stderr.

Every subcommand writes only inside its ``--out`` directory (``fx bench``
writes nothing and prints a JSON report). Failures exit with status 1 and an
``error [category]: message`` line; usage errors exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable

from . import __version__
from .blocks import (
    BlockModelSpec,
    DatasetMixture,
    build_block_model,
    default_seed_block,
    export_sound_set,
    generate_blocks,
    train_blocks,
)
from .dsp import AudioBuffer, load_wav, save_wav
from .errors import BendkitError, ConfigError, DataError, NumericError
from .genere import learn_from_midi, listing_scene, markov_scene, render_png, render_scene
from .genere.markov import dumps as markov_dumps
from .genere.scene import load_scene
from .grufx import GruFxSpec, benchmark_stream, build_gru_fx, render_file, self_prediction_target, train_fx
from .midi import CorpusManifest, FeatureScalers, NoteEvent, emit_midi, get_data_for_composer
from .mimo import MimoSpec, build_mimo, generate_sequence, make_training_pairs, render_piano_roll, train_mimo
from .nn import TrainConfig, TrainReport, load_model, save_model
from .sampler import Envelope, SamplerInstrumentSpec, map_samples, write_instrument
from .wavetable import (
    Wavetable,
    WavetableModelSpec,
    build_wavetable_model,
    export_wavetable_instrument,
    generate_wavetable,
    train_wavetable,
)

log = logging.getLogger("bendkit")

LOG_ENV = "BENDKIT_LOG_LEVEL"


# option registry


@dataclass(frozen=True)
class Param:
    name: str
    kind: str  # int, float, str, path, paths, strs
    default: Any = None
    help: str = ""
    required: bool = False
    choices: tuple | None = None

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")

    @property
    def is_list(self) -> bool:
        return self.kind in ("paths", "strs")


def _convert(p: Param, raw: str, base: Path | None = None):
    try:
        if p.kind == "int":
            value = int(raw)
        elif p.kind == "float":
            value = float(raw)
        elif p.kind in ("path", "paths"):
            value = Path(raw)
            if base is not None and not value.is_absolute():
                value = base / value
        else:
            value = raw
    except ValueError as exc:
        raise ConfigError(f"{p.name}: cannot read {raw!r} as {p.kind}") from exc
    if p.choices is not None and value not in p.choices:
        raise ConfigError(f"{p.name} must be one of {list(p.choices)}, got {value!r}")
    return value


def _train_params(epochs: int, lr: float, batch: int) -> list[Param]:
    return [
        Param("epochs", "int", epochs, "training epochs"),
        Param("learning_rate", "float", lr, "optimizer step size"),
        Param("batch_size", "int", batch, "mini-batch size"),
        Param("optimizer", "str", "adam", "optimizer", choices=("adam", "sgd")),
    ]


OUT = Param("out", "path", None, "output directory", required=True)
MANIFEST = Param("manifest", "path", None, "corpus manifest (path<TAB>composer lines)", required=True)
COMPOSER = Param("composer", "strs", None, "composer name(s) to select; repeatable", required=True)
AUDIO = Param("audio", "paths", None, "WAV files or directories of WAV files; repeatable", required=True)
MODEL = Param("model", "path", None, "model file written by the matching train command", required=True)
ENVELOPE = [
    Param("attack", "float", 0.01, "envelope attack (s)"),
    Param("decay", "float", 0.1, "envelope decay (s)"),
    Param("sustain", "float", 1.0, "envelope sustain level"),
    Param("release", "float", 0.3, "envelope release (s)"),
]

COMMANDS: dict[tuple[str, str | None], tuple[str, list[Param]]] = {
    ("ingest", None): ("read a MIDI corpus and write a note table, summary and piano roll", [
        MANIFEST, COMPOSER, OUT,
    ]),
    ("nn1", "train"): ("train the four-feature next-note model", [
        MANIFEST, COMPOSER, OUT,
        Param("sub_layers", "int", 2, "dense layers per pairwise submodel"),
        Param("sub_width", "int", 32, "units per submodel layer"),
        Param("head_layers", "int", 2, "dense layers per output head"),
        Param("head_width", "int", 32, "units per head layer"),
        *_train_params(200, 1e-3, 32),
    ]),
    ("nn1", "generate"): ("roll out a note sequence as MIDI plus a piano roll", [
        MODEL, OUT, Param("length", "int", 32, "notes to generate"),
    ]),
    ("nn2", "train"): ("train the next-block audio model", [
        AUDIO, OUT,
        Param("block_size", "int", 44100, "samples per block; each generated block becomes one file"),
        Param("layers", "int", 2, "hidden dense layers"),
        Param("width", "int", 32, "units per hidden layer"),
        Param("drop_rate", "float", 0.5, "dropout rate after each hidden layer"),
        *_train_params(20, 1e-3, 256),
    ]),
    ("nn2", "generate"): ("roll out blocks and write them as a sampler instrument", [
        MODEL, OUT, Param("blocks", "int", 16, "number of blocks (one WAV each)"),
        Param("name", "str", "generated", "instrument name"), *ENVELOPE,
    ]),
    ("nn2", "export"): ("package existing WAV files as a sampler instrument", [
        AUDIO, OUT, Param("name", "str", "instrument", "instrument name"),
        Param("strategy", "str", "even_split", "key mapping", choices=("even_split", "round_robin_chromatic")),
        *ENVELOPE,
    ]),
    ("fx", "train"): ("train the recurrent audio effect", [
        Param("input", "path", None, "dry input WAV", required=True),
        Param("target", "path", None, "processed target WAV (omit for identity)"),
        Param("mode", "str", "identity", "what to learn when no target is given", choices=("identity", "predict")),
        OUT,
        Param("layers", "int", 4, "stacked GRU layers"),
        Param("memory", "int", 8, "past samples fed per step"),
        Param("scaler", "int", 1, "width multiplier"),
        Param("activation", "str", "tanh", "output activation"),
        *_train_params(10, 1e-2, 8),
    ]),
    ("fx", "render"): ("process a WAV file through a trained effect", [
        MODEL, Param("input", "path", None, "WAV to process", required=True), OUT,
    ]),
    ("fx", "bench"): ("measure streaming throughput (prints JSON, writes nothing)", [
        MODEL, Param("seconds", "float", 5.0, "seconds of audio to stream"),
        Param("sample_rate", "int", 44100, "sample rate for the real-time factor"),
        Param("block", "int", 256, "samples per processing call"),
    ]),
    ("wavetable", "train"): ("train the feature-to-wavetable model", [
        AUDIO, OUT,
        Param("feature", "str", "mfcc", "input features", choices=("mfcc", "stft")),
        Param("loss_mode", "str", "deployed", "training target", choices=("deployed", "spectral")),
        Param("block_size", "int", 1024, "wavetable length"),
        Param("layers", "int", 2, "hidden dense layers"),
        Param("width", "int", 64, "units per hidden layer"),
        *_train_params(200, 1e-3, 8),
    ]),
    ("wavetable", "generate"): ("generate one wavetable from a source WAV", [
        MODEL, Param("source", "path", None, "WAV whose features drive the model", required=True), OUT,
    ]),
    ("wavetable", "export"): ("package a wavetable WAV as a looping sampler instrument", [
        Param("table", "path", None, "single-cycle WAV", required=True), OUT,
        Param("name", "str", "wavetable", "instrument name"), *ENVELOPE,
    ]),
    ("genere", "render"): ("render a graphic score page to PNG", [
        Param("scene", "path", None, "scene JSON (default: random nine-system layout)"), OUT,
    ]),
    ("genere", "markov"): ("learn Markov chains from MIDI and render a score from them", [
        MANIFEST, COMPOSER, OUT,
        Param("systems", "int", 9, "staves on the page"),
        Param("per_system", "int", 8, "notes per staff"),
    ]),
}

GROUP_HELP = {
    "nn1": "next-note model over MIDI corpora",
    "nn2": "next-block audio model and sound-set export",
    "fx": "recurrent sample-by-sample audio effect",
    "wavetable": "single-cycle wavetable generator",
    "genere": "graphic score pages",
}

GLOBAL_KEYS = {"seed"}


def _known_keys() -> set[str]:
    return GLOBAL_KEYS | {p.name for _, params in COMMANDS.values() for p in params}


def read_config(path: Path) -> dict[str, str]:
    """Parse a flat ``key = value`` file into raw strings."""
    if not path.is_file():
        raise DataError(f"config file not found: {path}")
    known = _known_keys()
    values = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value.strip()
    return values


def resolve(params: list[Param], cli: dict, config: dict[str, str], config_dir: Path | None) -> dict:
    """Merge command line over config file over defaults, converting types."""
    out = {}
    for p in params:
        given = cli.get(p.name)
        if given is not None:
            value = [_convert(p, v) for v in given] if p.is_list else _convert(p, given)
        elif p.name in config:
            raw = config[p.name]
            value = ([_convert(p, v.strip(), config_dir) for v in raw.split(",") if v.strip()]
                     if p.is_list else _convert(p, raw, config_dir))
        else:
            value = p.default
        if p.required and value in (None, []):
            raise ConfigError(f"missing required option {p.flag}")
        out[p.name] = value
    return out


# input helpers


def _existing(path: Path, what: str) -> Path:
    if not path.exists():
        raise DataError(f"{what} not found: {path}")
    return path


def _wav_files(paths: list[Path]) -> list[Path]:
    files = []
    for p in paths:
        _existing(p, "audio path")
        if p.is_dir():
            found = sorted(p.glob("*.wav"))
            if not found:
                raise DataError(f"no .wav files in {p}")
            files += found
        else:
            files.append(p)
    return files


def _validate_inputs(opts: dict) -> None:
    """Check every input path before any work starts."""
    for key in ("manifest", "model", "input", "target", "source", "table", "scene"):
        if opts.get(key) is not None:
            _existing(opts[key], key)
    if opts.get("audio"):
        opts["audio"] = _wav_files(opts["audio"])


def _train_config(opts: dict, seed: int) -> TrainConfig:
    return TrainConfig(learning_rate=opts["learning_rate"], epochs=opts["epochs"],
                       batch_size=opts["batch_size"], seed=seed, optimizer=opts["optimizer"])


def _check_report(report: TrainReport, what: str) -> None:
    if report.aborted:
        raise NumericError(f"{what} training diverged: {report.abort_reason}")
    log.info("%s training finished: %d steps, final loss %.6g", what, report.steps, report.final_loss)


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _envelope(opts: dict) -> Envelope:
    return Envelope(opts["attack"], opts["decay"], opts["sustain"], opts["release"])


def _meta(kind: str, seed: int, **extra) -> dict:
    return {"kind": kind, "seed": seed, "bendkit_version": __version__, **extra}


def _load(path: Path, kind: str):
    graph, meta, extras = load_model(path)
    if meta.get("kind") != kind:
        raise DataError(f"{path} holds a {meta.get('kind', 'unknown')!r} model, expected {kind!r}")
    return graph, meta, extras


def _dataset(opts: dict):
    return get_data_for_composer(CorpusManifest.read(opts["manifest"]), opts["composer"])


# subcommands


def cmd_ingest(opts: dict, seed: int, out: Path) -> None:
    ds = _dataset(opts)
    lines = ["onset\tduration\tpitch\tvelocity\tsource"]
    lines += [f"{e.onset!r}\t{e.duration!r}\t{e.pitch}\t{e.velocity}\t{s}"
              for e, s in zip(ds.events, ds.source_labels)]
    (out / "notes.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    arr = ds.to_array()
    _write_json(out / "summary.json", {
        "notes": len(ds), "composers": sorted(set(ds.source_labels)), "tempo_bpm": ds.tempo_bpm,
        "pitch_range": [int(arr[:, 2].min()), int(arr[:, 2].max())],
        "duration_seconds": float((arr[:, 0] + arr[:, 1]).max()), "unclosed_notes": ds.unclosed_notes,
    })
    (out / "roll.png").write_bytes(render_piano_roll(ds))


def cmd_nn1_train(opts: dict, seed: int, out: Path) -> None:
    ds = _dataset(opts)
    x, y, scalers = make_training_pairs(ds)
    spec = MimoSpec(opts["sub_layers"], opts["sub_width"], opts["head_layers"], opts["head_width"])
    graph = build_mimo(spec, seed)
    _check_report(train_mimo(graph, x, y, _train_config(opts, seed)), "nn1")
    first = ds.events[0]
    save_model(out / "nn1.bkm", graph, _meta("nn1", seed, scalers=scalers.to_dict(),
                                            seed_note=[first.onset, first.duration, first.pitch, first.velocity],
                                            tempo_bpm=ds.tempo_bpm))


def cmd_nn1_generate(opts: dict, seed: int, out: Path) -> None:
    graph, meta, _ = _load(opts["model"], "nn1")
    onset, duration, pitch, velocity = meta["seed_note"]
    seq = generate_sequence(graph, NoteEvent(onset, duration, int(pitch), int(velocity)), opts["length"],
                            FeatureScalers.from_dict(meta["scalers"]))
    (out / "generated.mid").write_bytes(emit_midi(seq.events, 480, meta.get("tempo_bpm", 120.0)))
    (out / "generated.png").write_bytes(render_piano_roll(seq))
    log.info("generated %d notes (%d clamped values)", len(seq), seq.clamp_count)


def _mixture(paths: list[Path]) -> DatasetMixture:
    return DatasetMixture([(p.name, [load_wav(p)]) for p in paths])


def cmd_nn2_train(opts: dict, seed: int, out: Path) -> None:
    mixture = _mixture(opts["audio"])
    spec = BlockModelSpec(opts["layers"], opts["width"], opts["block_size"], drop_rate=opts["drop_rate"])
    graph = build_block_model(spec, seed)
    _check_report(train_blocks(graph, mixture, spec, _train_config(opts, seed)), "nn2")
    seed_block = default_seed_block(mixture, spec.block_size, seed)
    save_model(out / "nn2.bkm", graph, _meta("nn2", seed, sample_rate=mixture.sample_rate,
                                            sources=[p.name for p in opts["audio"]]),
               {"seed_block": seed_block})


def cmd_nn2_generate(opts: dict, seed: int, out: Path) -> None:
    graph, meta, extras = _load(opts["model"], "nn2")
    sr = int(meta["sample_rate"])
    blocks, clipped = generate_blocks(graph, extras["seed_block"], opts["blocks"], sr)
    export_sound_set(blocks, out, _envelope(opts), opts["name"], clip_count=clipped,
                     provenance={"seed": seed, "model": opts["model"].name, "seed_block": "first training block"})


def cmd_nn2_export(opts: dict, seed: int, out: Path) -> None:
    names = []
    for p in opts["audio"]:
        load_wav(p)  # reject unreadable files before copying
        if p.name in names:
            raise DataError(f"two input files are both named {p.name}")
        (out / p.name).write_bytes(p.read_bytes())
        names.append(p.name)
    spec = SamplerInstrumentSpec(opts["name"], map_samples(names, opts["strategy"]), _envelope(opts))
    write_instrument(out, spec, f"{opts['name']}.dspreset")


def cmd_fx_train(opts: dict, seed: int, out: Path) -> None:
    dry = load_wav(opts["input"])
    if opts["target"] is not None:
        target = load_wav(opts["target"])
    elif opts["mode"] == "predict":
        target = self_prediction_target(dry)
    else:
        target = dry
    spec = GruFxSpec(opts["layers"], opts["memory"], opts["activation"], opts["scaler"])
    graph = build_gru_fx(spec, seed)
    _check_report(train_fx(graph, dry, target, spec, _train_config(opts, seed)), "fx")
    save_model(out / "fx.bkm", graph, _meta("fx", seed, sample_rate=dry.sample_rate))


def cmd_fx_render(opts: dict, seed: int, out: Path) -> None:
    graph, _, _ = _load(opts["model"], "fx")
    rendered, clips = render_file(graph, load_wav(opts["input"]))
    save_wav(out / "rendered.wav", rendered)
    _write_json(out / "render.json", {"input": opts["input"].name, "samples": len(rendered), "clipped": clips})


def cmd_fx_bench(opts: dict, seed: int, out: Path | None) -> None:
    graph, _, _ = _load(opts["model"], "fx")
    report = benchmark_stream(graph, opts["seconds"], opts["sample_rate"], opts["block"], seed)
    print(json.dumps(asdict(report), sort_keys=True))


def _wavetable_spec(opts: dict) -> WavetableModelSpec:
    return WavetableModelSpec(opts["layers"], opts["width"], opts["block_size"], opts["feature"], opts["loss_mode"])


def cmd_wavetable_train(opts: dict, seed: int, out: Path) -> None:
    corpus = [load_wav(p) for p in opts["audio"]]
    spec = _wavetable_spec(opts)
    graph = build_wavetable_model(spec, seed)
    _check_report(train_wavetable(graph, corpus, spec, _train_config(opts, seed)), "wavetable")
    save_model(out / "wavetable.bkm", graph, _meta("wavetable", seed, spec=asdict(spec)))


def cmd_wavetable_generate(opts: dict, seed: int, out: Path) -> None:
    graph, meta, _ = _load(opts["model"], "wavetable")
    source = load_wav(opts["source"])
    table = generate_wavetable(graph, source, WavetableModelSpec(**meta["spec"]))
    save_wav(out / "wavetable.wav", AudioBuffer(table.samples, source.sample_rate))
    _write_json(out / "wavetable.json", {"samples": len(table), "discontinuity": table.discontinuity,
                                         "source": opts["source"].name})


def cmd_wavetable_export(opts: dict, seed: int, out: Path) -> None:
    buf = load_wav(opts["table"])
    export_wavetable_instrument(Wavetable(buf.samples), out, _envelope(opts), buf.sample_rate, opts["name"])


def cmd_genere_render(opts: dict, seed: int, out: Path) -> None:
    scene = load_scene(opts["scene"]) if opts["scene"] is not None else listing_scene(seed)
    (out / "score.png").write_bytes(render_png(render_scene(scene)))


def cmd_genere_markov(opts: dict, seed: int, out: Path) -> None:
    table = learn_from_midi(_dataset(opts))
    (out / "markov.txt").write_text(markov_dumps(table), encoding="utf-8")
    scene = markov_scene(table, seed, opts["systems"], opts["per_system"])
    (out / "score.png").write_bytes(render_png(render_scene(scene)))


HANDLERS: dict[tuple[str, str | None], Callable[[dict, int, Path], None]] = {
    ("ingest", None): cmd_ingest,
    ("nn1", "train"): cmd_nn1_train,
    ("nn1", "generate"): cmd_nn1_generate,
    ("nn2", "train"): cmd_nn2_train,
    ("nn2", "generate"): cmd_nn2_generate,
    ("nn2", "export"): cmd_nn2_export,
    ("fx", "train"): cmd_fx_train,
    ("fx", "render"): cmd_fx_render,
    ("fx", "bench"): cmd_fx_bench,
    ("wavetable", "train"): cmd_wavetable_train,
    ("wavetable", "generate"): cmd_wavetable_generate,
    ("wavetable", "export"): cmd_wavetable_export,
    ("genere", "render"): cmd_genere_render,
    ("genere", "markov"): cmd_genere_markov,
}


# parser and dispatch


def _add_params(parser: argparse.ArgumentParser, params: list[Param]) -> None:
    for p in params:
        extra = {"action": "append"} if p.is_list else {}
        default = "" if p.default is None else f" (default: {p.default})"
        parser.add_argument(p.flag, dest=p.name, default=None, help=p.help + default, **extra)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bendkit", description="Music-ML pipelines from the command line.")
    parser.add_argument("--version", action="version", version=f"bendkit {__version__}")
    parser.add_argument("--config", type=Path, help="key = value file with option defaults")
    parser.add_argument("--seed", type=int, default=None, help="seed for every random choice (default: 0)")
    groups = parser.add_subparsers(dest="group", required=True, metavar="COMMAND")
    by_group: dict[str, argparse._SubParsersAction] = {}
    for (group, action), (help_text, params) in COMMANDS.items():
        if action is None:
            _add_params(groups.add_parser(group, help=help_text), params)
            continue
        if group not in by_group:
            sub = groups.add_parser(group, help=GROUP_HELP[group])
            by_group[group] = sub.add_subparsers(dest="action", required=True, metavar="ACTION")
        _add_params(by_group[group].add_parser(action, help=help_text), params)
    return parser


def _setup_logging() -> None:
    level = os.environ.get(LOG_ENV, "INFO").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "INFO"
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True)


def _printable(opts: dict) -> dict:
    def conv(v):
        if isinstance(v, Path):
            return str(v)
        if isinstance(v, list):
            return [conv(x) for x in v]
        return v
    return {k: conv(v) for k, v in sorted(opts.items())}


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    key = (args.group, getattr(args, "action", None))
    try:
        config, config_dir = {}, None
        if args.config is not None:
            config, config_dir = read_config(args.config), args.config.resolve().parent
        seed = args.seed if args.seed is not None else _convert(Param("seed", "int"), config.get("seed", "0"))
        opts = resolve(COMMANDS[key][1], vars(args), config, config_dir)
        _validate_inputs(opts)
        log.info("command %s", " ".join(k for k in key if k))
        log.info("seed %d", seed)
        log.info("config %s", json.dumps(_printable(opts), sort_keys=True))
        out = opts.get("out")
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
        HANDLERS[key](opts, seed, out)
    except BendkitError as exc:
        print(f"error [{exc.category}]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
