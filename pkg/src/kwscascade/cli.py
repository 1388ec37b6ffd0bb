"""Command-line entry point: one executable, one subcommand per task.

stdout carries machine-readable output only (JSON lines or CSV); anything
meant for humans goes to stderr. Exit codes: 0 success, 1 negative answer
where a yes/no was asked (verify rejected), 2 usage or configuration
error, 3 memory budget violation.
"""

import argparse
import json
import sys

from . import audio_io, speaker, synthetic
from .cascade import (
    BudgetViolationError,
    Cascade,
    CascadeConfig,
    MemoryBudget,
    enforce_budget,
)
from .decoder import DecoderConfig, StreamingDecoder
from .encoder import (
    ModelKind,
    ModelParseError,
    build_model_from_description,
    load_model,
    serialize_model,
)
from .evaluation import PipelineScorer, cascade_table
from .frontend import ArithmeticMode, ConfigError, FrontendConfig
from .quantize import AccumMode

EXIT_OK = 0
EXIT_NEGATIVE = 1
EXIT_USAGE = 2
EXIT_BUDGET = 3

# Every config-file key, its parser, and where it lands. Unknown keys are
# hard errors so typos surface instead of silently using defaults.
_CONFIG_KEYS = {
    "frontend.frame_length_ms": int,
    "frontend.hop_ms": int,
    "frontend.num_channels": int,
    "frontend.fft_size": int,
    "frontend.mel_low_hz": float,
    "frontend.mel_high_hz": float,
    "frontend.log_floor": float,
    "frontend.noise_suppression": lambda v: v.lower() in ("1", "true", "on", "yes"),
    "frontend.arithmetic_mode": str,  # float | fixed_point
    "stage1.num_units": int,
    "stage1.smoothing_window_frames": int,
    "stage1.score_window_frames": int,
    "stage1.threshold": float,
    "stage2.num_units": int,
    "stage2.smoothing_window_frames": int,
    "stage2.score_window_frames": int,
    "stage2.threshold": float,
    "cascade.stage2_window_ms": int,
    "cascade.refractory_ms": int,
    "cascade.buffer_capacity_samples": int,
    "budget.total_bytes": int,
    "budget.program_bytes": int,
    "budget.tables_bytes": int,
    "budget.buffer_bytes": int,
    "budget.model_budget_bytes": int,
    "speaker.threshold": float,
    "eval.refractory_ms": float,
    "eval.hit_window_ms": float,
}


class CliError(Exception):
    def __init__(self, message, code=EXIT_USAGE):
        super().__init__(message)
        self.code = code


def load_config_file(path):
    """Parse 'key = value' lines; unknown keys are errors."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in _CONFIG_KEYS:
                raise CliError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                values[key] = _CONFIG_KEYS[key](value)
            except ValueError as exc:
                raise CliError(f"{path}:{lineno}: bad value for {key}: {exc}")
    return values


def _frontend_from(cfg):
    kwargs = {}
    mapping = {
        "frontend.frame_length_ms": "frame_length_ms",
        "frontend.hop_ms": "hop_ms",
        "frontend.num_channels": "num_channels",
        "frontend.fft_size": "fft_size",
        "frontend.mel_low_hz": "mel_low_hz",
        "frontend.mel_high_hz": "mel_high_hz",
        "frontend.log_floor": "log_floor",
        "frontend.noise_suppression": "noise_suppression_enabled",
    }
    for key, attr in mapping.items():
        if key in cfg:
            kwargs[attr] = cfg[key]
    if "frontend.arithmetic_mode" in cfg:
        mode = cfg["frontend.arithmetic_mode"]
        try:
            kwargs["arithmetic_mode"] = ArithmeticMode(mode)
        except ValueError:
            raise CliError(f"frontend.arithmetic_mode must be float or fixed_point, got {mode!r}")
    return FrontendConfig(**kwargs)


def _decoder_from(cfg, prefix, num_units, default_threshold=0.5):
    def get(name, fallback):
        return cfg.get(f"{prefix}.{name}", fallback)

    return DecoderConfig(
        num_units=get("num_units", num_units),
        smoothing_window_frames=get("smoothing_window_frames", 30),
        score_window_frames=get("score_window_frames", 100),
        threshold=get("threshold", default_threshold),
    )


def _budget_from(cfg):
    kwargs = {}
    for key in ("total_bytes", "program_bytes", "tables_bytes", "buffer_bytes",
                "model_budget_bytes"):
        if f"budget.{key}" in cfg:
            kwargs[key] = cfg[f"budget.{key}"]
    return MemoryBudget(**kwargs)


def _read_model(path):
    with open(path, "rb") as fh:
        return load_model(fh.read())


def _read_audio(source):
    if source == "-":
        return audio_io.read_raw_pcm()
    return audio_io.read_wav(source)


def _emit(obj):
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_quantize_model(args):
    with open(args.input) as fh:
        model = build_model_from_description(fh.read())
    data = serialize_model(model)
    with open(args.output, "wb") as fh:
        fh.write(data)
    report = {
        "output": args.output,
        "byte_size": len(data),
        "kind": model.kind.name.lower(),
        "layers": [
            {
                "in_dim": layer.in_dim,
                "out_dim": layer.out_dim,
                "weight_min": layer.weights.params.min_val,
                "weight_max": layer.weights.params.max_val,
                "weight_scale": layer.weights.params.scale,
                "weight_zero_point": layer.weights.params.zero_point,
                "input_min": layer.input_params.min_val,
                "input_max": layer.input_params.max_val,
            }
            for layer in model.layers
        ],
    }
    _emit(report)
    return EXIT_OK


def cmd_score(args):
    cfg = load_config_file(args.config) if args.config else {}
    if args.posteriors.endswith(".csv"):
        with open(args.posteriors) as fh:
            posteriors, num_units = audio_io.read_posteriors_csv(fh)
    else:
        with open(args.posteriors, "rb") as fh:
            posteriors, num_units = audio_io.read_posteriors(fh)
    decoder_cfg = _decoder_from(cfg, "stage1", num_units)
    dec = StreamingDecoder(decoder_cfg)
    sys.stdout.write("record,frame,score\n")
    last_hyp = None
    for row in posteriors:
        frame, hyp = dec.push(row[:num_units])
        sys.stdout.write(f"score,{frame},{hyp.score:.9f}\n")
        last_hyp = hyp
    if last_hyp is not None:
        cells = ",".join(str(a) for a in last_hyp.alignment)
        sys.stdout.write(f"alignment,{last_hyp.end_frame},{cells}\n")
    return EXIT_OK


def cmd_run_cascade(args):
    cfg = load_config_file(args.config) if args.config else {}
    stage1 = _read_model(args.stage1)
    stage2 = _read_model(args.stage2)
    frontend = _frontend_from(cfg)
    cascade_cfg = CascadeConfig(
        frontend=frontend,
        stage1_decoder=_decoder_from(cfg, "stage1", stage1.num_units),
        stage2_decoder=_decoder_from(cfg, "stage2", stage2.num_units),
        budget=_budget_from(cfg),
        buffer_capacity_samples=cfg.get("cascade.buffer_capacity_samples", 32000),
        stage2_window_ms=cfg.get("cascade.stage2_window_ms", 1000),
        refractory_ms=cfg.get("cascade.refractory_ms", 1000),
    )
    speaker_model = _read_model(args.speaker_model) if args.speaker_model else None
    profile = None
    if args.speaker_profile:
        with open(args.speaker_profile, "rb") as fh:
            profile = speaker.load_profile(fh.read())
        if speaker_model is None:
            raise CliError("--speaker-profile needs --speaker-model")
    cascade = Cascade(cascade_cfg, stage1, stage2, speaker_model, profile)
    chunk = _read_audio(args.input)
    step = frontend.hop_samples * 16  # 160 ms chunks
    for start in range(0, len(chunk.samples), step):
        for event in cascade.push_audio(chunk.samples[start : start + step]):
            _emit(event.to_dict())
    return EXIT_OK


def _segment_signature(wav_path, stage2_model, embedding_model, frontend, decoder_cfg):
    """Best stage-2 alignment over the file, embedded into one signature."""
    from .cascade import DetectorStream

    chunk = _read_audio(wav_path)
    det = DetectorStream(frontend, stage2_model, decoder_cfg,
                         AccumMode.FLOAT, keep_features=True)
    hits = det.push(chunk.samples)
    if not hits:
        raise CliError(f"{wav_path}: too short to score")
    _, best = max(hits, key=lambda item: item[1].score)
    first, last = best.alignment[0], best.alignment[-1]
    segment = [f for f in det.features if first <= f.frame_index <= last]
    return speaker.embed(segment, embedding_model), best


def cmd_enroll(args):
    cfg = load_config_file(args.config) if args.config else {}
    stage2 = _read_model(args.stage2)
    embedding = _read_model(args.embedding_model)
    if embedding.kind is not ModelKind.EMBEDDING:
        raise CliError(f"{args.embedding_model} is not an embedding model")
    frontend = _frontend_from(cfg)
    decoder_cfg = _decoder_from(cfg, "stage2", stage2.num_units)
    signatures = []
    for path in args.wavs:
        signature, _ = _segment_signature(path, stage2, embedding, frontend, decoder_cfg)
        signatures.append(signature)
    threshold = cfg.get("speaker.threshold", args.threshold)
    profile = speaker.enroll(signatures, threshold)
    with open(args.output, "wb") as fh:
        fh.write(speaker.serialize_profile(profile))
    _emit({
        "output": args.output,
        "dim": len(profile.signature.vector),
        "num_enrollment_utterances": profile.num_enrollment_utterances,
        "threshold": threshold,
    })
    return EXIT_OK


def cmd_verify(args):
    cfg = load_config_file(args.config) if args.config else {}
    stage2 = _read_model(args.stage2)
    embedding = _read_model(args.embedding_model)
    frontend = _frontend_from(cfg)
    decoder_cfg = _decoder_from(cfg, "stage2", stage2.num_units)
    with open(args.profile, "rb") as fh:
        profile = speaker.load_profile(fh.read())
    signature, _ = _segment_signature(args.wav, stage2, embedding, frontend, decoder_cfg)
    result = speaker.verify(signature, profile)
    _emit({"score": round(result.score, 6), "accepted": result.accepted})
    return EXIT_OK if result.accepted else EXIT_NEGATIVE


def cmd_evaluate(args):
    cfg = load_config_file(args.config) if args.config else {}
    stage1_model = _read_model(args.stage1)
    stage2_model = _read_model(args.stage2)
    frontend = _frontend_from(cfg)
    budget = _budget_from(cfg)
    enforce_budget(budget, stage1_model, stage=1)
    corpus = synthetic.load_audio_corpus(args.manifest, num_units=stage1_model.num_units)
    stage1 = PipelineScorer(frontend, stage1_model,
                            _decoder_from(cfg, "stage1", stage1_model.num_units),
                            AccumMode.FIXED)
    stage2 = PipelineScorer(frontend, stage2_model,
                            _decoder_from(cfg, "stage2", stage2_model.num_units),
                            AccumMode.FLOAT)
    thresholds = [float(v) for v in args.thresholds.split(",")]
    if sorted(thresholds) != thresholds:
        raise CliError("--thresholds must be ascending")
    table = cascade_table(
        stage1, stage2, corpus, thresholds,
        stage2_threshold=args.stage2_threshold,
        refractory_ms=cfg.get("eval.refractory_ms", 1000.0),
        hit_window_ms=cfg.get("eval.hit_window_ms", 750.0),
        parallelism=args.parallelism,
    )
    sys.stdout.write(table.render_csv() + "\n")
    sys.stderr.write(table.render_text() + "\n")
    return EXIT_OK


def cmd_gen_corpus(args):
    manifest = synthetic.generate_audio_corpus(
        seed=args.seed,
        out_dir=args.out_dir,
        num_units=args.num_units,
        num_positives=args.positives,
        num_negatives=args.negatives,
        negative_seconds=args.negative_seconds,
    )
    _emit({"manifest": manifest, "seed": args.seed})
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument plumbing
# ---------------------------------------------------------------------------


def _config_epilog():
    keys = "\n".join(f"  {key}" for key in _CONFIG_KEYS)
    return "config file keys (key = value per line, unknown keys are errors):\n" + keys


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kwscascade",
        description="Two-stage keyword-spotting cascade tools",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    epilog = _config_epilog()
    fmt = argparse.RawDescriptionHelpFormatter

    p = sub.add_parser("quantize-model",
                       help="quantize a float-weight text model description to binary")
    p.add_argument("input", help="text model description")
    p.add_argument("output", help="binary model path")
    p.set_defaults(func=cmd_quantize_model)

    p = sub.add_parser("score", help="decode a posterior stream to per-frame scores",
                       epilog=epilog, formatter_class=fmt)
    p.add_argument("--posteriors", required=True,
                   help="binary posterior stream, or CSV if the name ends in .csv")
    p.add_argument("--config", help="config file (key = value)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("run-cascade", help="run the two-stage cascade over audio",
                       epilog=epilog, formatter_class=fmt)
    p.add_argument("--stage1", required=True, help="stage-1 model (budget enforced)")
    p.add_argument("--stage2", required=True, help="stage-2 model")
    p.add_argument("--speaker-profile", help="enrolled profile file")
    p.add_argument("--speaker-model", help="embedding model for verification")
    p.add_argument("--input", required=True, help="WAV path, or - for raw PCM on stdin")
    p.add_argument("--config", help="config file (key = value)")
    p.set_defaults(func=cmd_run_cascade)

    p = sub.add_parser("enroll", help="build a speaker profile from keyword recordings",
                       epilog=epilog, formatter_class=fmt)
    p.add_argument("wavs", nargs="+", help="enrollment WAV files")
    p.add_argument("--stage2", required=True, help="stage-2 model for segmentation")
    p.add_argument("--embedding-model", required=True)
    p.add_argument("--out", dest="output", required=True, help="profile output path")
    p.add_argument("--threshold", type=float, default=0.6)
    p.add_argument("--config", help="config file (key = value)")
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser("verify", help="verify a recording against a profile",
                       epilog=epilog, formatter_class=fmt)
    p.add_argument("wav")
    p.add_argument("--profile", required=True)
    p.add_argument("--stage2", required=True, help="stage-2 model for segmentation")
    p.add_argument("--embedding-model", required=True)
    p.add_argument("--config", help="config file (key = value)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("evaluate", help="cascade operating-point table over a corpus",
                       epilog=epilog, formatter_class=fmt)
    p.add_argument("--manifest", required=True, help="corpus manifest file")
    p.add_argument("--stage1", required=True)
    p.add_argument("--stage2", required=True)
    p.add_argument("--thresholds", required=True,
                   help="comma-separated ascending stage-1 thresholds")
    p.add_argument("--stage2-threshold", type=float, default=0.5)
    p.add_argument("--parallelism", type=int, default=1,
                   help="streams scored concurrently; output is identical at any degree")
    p.add_argument("--config", help="config file (key = value)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gen-corpus", help="generate a seeded synthetic audio corpus")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--num-units", type=int, default=3)
    p.add_argument("--positives", type=int, default=5)
    p.add_argument("--negatives", type=int, default=2)
    p.add_argument("--negative-seconds", type=float, default=20.0)
    p.set_defaults(func=cmd_gen_corpus)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help; keep both.
        return int(exc.code or 0)
    try:
        return args.func(args)
    except BudgetViolationError as exc:
        sys.stderr.write(f"error: budget: {exc}\n")
        return EXIT_BUDGET
    except CliError as exc:
        sys.stderr.write(f"error: usage: {exc}\n")
        return exc.code
    except (ConfigError, ModelParseError, ValueError, OSError) as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
