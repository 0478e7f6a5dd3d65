# main.py

import os
import sys
import time
import signal
import argparse
from contextlib import contextmanager

from Core.errors import EXIT_OK, EXIT_RUNTIME_FAILURE, ConfigError, TableQAError
from Core.event_manager import EventManager, EVAL_COMPLETE, TRAIN_COMPLETE, TRAIN_EPOCH, TRAIN_STEP
from Core.cell_highlighter import HIGHLIGHT_SOURCES, SOURCE_QUESTION, highlight
from Core.perturbations import PERTURBATION_KINDS, PerturbationSpec
from Core.table import linearize_table
from Managers.ablation_manager import run_preset
from Managers.dataset_manager import (
    build_vocabulary, donor_tables, generate_split, load_dataset, perturb_dataset, save_dataset,
    unseen_tokens,
)
from Managers.diagnostics_manager import PROJECTIONS, diagnose
from Managers.evaluation_manager import evaluate, write_score_dump
from Managers.training_manager import Trainer, load_checkpoint
from Utils.config_utils import coerce, load_generator_config, load_preset, load_train_config
from Utils.log_utils import get_logger, DEBUG_L1, DEBUG_L2, LOG_LEVEL_DEBUG, LOG_LEVEL_INFO
from Utils.manifest_utils import RunManifest
from Utils.save_utils import JsonlStream, staged_outputs, write_json, write_jsonl

logger = get_logger()

METRICS_SCHEMA = "tableqa-metrics"
AUDIT_SCHEMA = "tableqa-highlight-audit"
METRIC_TOPICS = (TRAIN_STEP, TRAIN_EPOCH, TRAIN_COMPLETE, EVAL_COMPLETE)


# ─── Helpers ───

def resolve(args, path):
    """Paths are relative to --workdir unless absolute."""
    if not path:
        return path
    return path if os.path.isabs(path) else os.path.join(args.workdir, path)


def parse_overrides(pairs):
    overrides = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"Override must look like key=value, got {pair!r}")
        key, value = (part.strip() for part in pair.split("=", 1))
        overrides[key] = coerce(key, value)
    return overrides


def train_overrides(args):
    overrides = parse_overrides(args.set)
    for key in ("seed", "epochs", "lr", "max_steps"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return overrides


def heldout_path(path):
    stem, ext = os.path.splitext(path)
    return f"{stem}_heldout{ext or '.jsonl'}"


def perturbation_specs(kinds, seed, donors=(), literal=False):
    try:
        return [PerturbationSpec(kind, seed, tuple(donors), literal) for kind in kinds or []]
    except ValueError as e:
        raise ConfigError(f"{e}; expected one of {PERTURBATION_KINDS}") from e


@contextmanager
def metrics_stream(path, command, outputs):
    """Training / evaluation events go to a JSON-lines file while the block runs. Yields None without a path."""
    if not path:
        yield None
        return
    outputs.append(path)
    stream = JsonlStream(path, header={"schema": METRICS_SCHEMA, "version": 1, "command": command})

    def recorder(topic):
        return lambda data: stream.write({"event": topic, **(data or {})})

    try:
        with EventManager.get_instance().subscribed({t: recorder(t) for t in METRIC_TOPICS}):
            yield stream
    finally:
        stream.close()


# ─── Commands ───

def cmd_generate(args, manifest, outputs):
    # Generator settings: file, then --seed
    cfg = load_generator_config(resolve(args, args.config), args.seed)
    manifest.seed = cfg.seed
    manifest.set_config(cfg.to_dict())

    # Held-out examples continue the index sequence after the training ones
    out = resolve(args, args.out)
    train, held_out = generate_split(cfg, args.n, args.holdout)
    outputs.append(out)
    save_dataset(out, train, cfg, start=0)
    manifest.add_output(out)
    if held_out:
        path = resolve(args, args.holdout_out) or heldout_path(out)
        outputs.append(path)
        save_dataset(path, held_out, cfg, start=args.n, split="heldout")
        manifest.add_output(path)
    logger.info("Main", f"Generated {len(train)} training and {len(held_out)} held-out examples (seed {cfg.seed})")


def cmd_train(args, manifest, outputs):
    cfg = load_train_config(resolve(args, args.config), train_overrides(args))
    manifest.seed = cfg.seed
    manifest.set_config(cfg.to_dict())

    # Load training (and optional per-epoch evaluation) data
    data = resolve(args, args.data)
    manifest.add_dataset(data)
    _, examples = load_dataset(data)
    eval_examples = None
    if args.eval_data:
        manifest.add_dataset(resolve(args, args.eval_data))
        _, eval_examples = load_dataset(resolve(args, args.eval_data))

    # Train; events are recorded while the block runs
    checkpoint = resolve(args, args.checkpoint or cfg.checkpoint)
    outputs.append(checkpoint)
    with metrics_stream(resolve(args, args.metrics), "train", outputs):
        vocab = build_vocabulary(examples)
        result = Trainer(cfg, vocab).train(examples, eval_examples, checkpoint)
    manifest.add_output(checkpoint)
    if args.metrics:
        manifest.add_output(resolve(args, args.metrics))
    logger.info("Main", f"Final loss {result.loss_curve[-1]:.4f} after {result.steps} steps"
                if result.loss_curve else "No training steps were run")


def cmd_eval(args, manifest, outputs):
    # The checkpoint vocabulary must be built on the current generator vocabulary
    checkpoint = resolve(args, args.checkpoint)
    model, vocab, stored_cfg, _ = load_checkpoint(checkpoint, base=build_vocabulary())
    cfg = stored_cfg.with_overrides(**parse_overrides(args.set))
    manifest.seed = cfg.seed
    manifest.set_config(cfg.to_dict())
    manifest.add_dataset(checkpoint)

    data = resolve(args, args.data)
    manifest.add_dataset(data)
    _, examples = load_dataset(data)
    unseen = unseen_tokens(examples, vocab)
    if unseen:
        logger.warning("Main", f"{len(unseen)} tokens of {data} are outside the checkpoint vocabulary: {unseen[:8]}")

    # Perturbations
    donors = ()
    if args.donors:
        manifest.add_dataset(resolve(args, args.donors))
        donors = donor_tables(load_dataset(resolve(args, args.donors))[1])
    seed = cfg.seed if args.perturb_seed is None else args.perturb_seed
    specs = perturbation_specs(args.perturb, seed, donors, args.literal)

    with metrics_stream(resolve(args, args.metrics), "eval", outputs):
        report, predictions = evaluate(model, examples, specs, vocab, cfg, label=args.label,
                                       keep_predictions=True)

    # Report, then the optional score dump
    out = resolve(args, args.out)
    outputs.append(out)
    write_json(out, report.to_dict())
    manifest.add_output(out)
    if args.dump:
        dump = resolve(args, args.dump)
        outputs.append(dump)
        write_score_dump(dump, predictions if args.latents else _without_latents(predictions), args.label)
        manifest.add_output(dump)
    if args.metrics:
        manifest.add_output(resolve(args, args.metrics))


def _without_latents(predictions):
    for p in predictions:
        p.latents = None
    return predictions


def cmd_perturb(args, manifest, outputs):
    source = resolve(args, args.input)
    manifest.add_dataset(source)
    header, examples = load_dataset(source)
    donors = ()
    if args.donors:
        manifest.add_dataset(resolve(args, args.donors))
        donors = donor_tables(load_dataset(resolve(args, args.donors))[1])
    spec = perturbation_specs([args.kind], args.seed, donors, args.literal)[0]
    manifest.seed = args.seed
    manifest.set_config({"kind": spec.kind, "seed": args.seed, "literal": args.literal})

    # Perturbed copies keep the source indices and record how they were made
    perturbed = perturb_dataset(examples, spec)
    out = resolve(args, args.out)
    outputs.append(out)
    save_dataset(out, perturbed, None, start=header.get("start", 0),
                 perturbation={"kind": spec.kind, "seed": args.seed, "literal": args.literal},
                 source=os.path.basename(source))
    manifest.add_output(out)


def cmd_ablate(args, manifest, outputs):
    preset = load_preset(args.grid)
    base = load_train_config(resolve(args, args.config), train_overrides(args))
    manifest.seed = base.seed
    manifest.set_config({"base": base.to_dict(), "preset": preset, "seeds": args.seeds})

    # Evaluation falls back to the training data
    data, eval_data = resolve(args, args.data), resolve(args, args.eval_data or args.data)
    manifest.add_dataset(data)
    manifest.add_dataset(eval_data)
    _, train_examples = load_dataset(data)
    _, eval_examples = load_dataset(eval_data)
    vocab = build_vocabulary(list(train_examples) + list(eval_examples))

    # Every (row, seed) run is streamed as it finishes
    dump_dir = resolve(args, args.dump_dir)
    with metrics_stream(resolve(args, args.metrics), "ablate", outputs) as stream:
        on_run = (lambda record: stream.write({"event": "ablate/run", **record})) if stream else None
        result = run_preset(preset, base, train_examples, eval_examples, vocab, args.seeds, dump_dir, on_run=on_run)

    out = resolve(args, args.out)
    outputs.append(out)
    write_json(out, result.to_dict())
    manifest.add_output(out)
    for row in result.rows:
        for run in row.runs:
            if "score_dump" in run:
                manifest.add_output(run["score_dump"])
    if args.metrics:
        manifest.add_output(resolve(args, args.metrics))

    # Summary
    for row in result.rows:
        mean = row.mean()
        logger.info("Main", f"{row.label:>18}: accuracy {mean['accuracy']:.2f}")
    failed = [v["name"] for v in result.verdicts if not v["holds"]]
    if failed:
        logger.warning("Main", f"Comparisons not holding for a seed majority: {failed}")


def cmd_diagnose(args, manifest, outputs):
    dumps = [resolve(args, path) for path in args.dump]
    for path in dumps:
        manifest.add_dataset(path)
    projection = None if args.projection == "none" else args.projection
    manifest.seed = args.seed
    manifest.set_config({"projection": projection, "seed": args.seed})
    result = diagnose(dumps, projection, args.seed)

    out = resolve(args, args.out)
    outputs.append(out)
    write_json(out, result)
    manifest.add_output(out)

    # Plots need matplotlib, imported only on request
    if args.plot:
        from Tools.plot_diagnostics import plot_diagnostics
        plot_dir = resolve(args, args.plot)
        outputs.extend(os.path.join(plot_dir, name) for name in ("score_histograms.png", "latent_projection.png"))
        for path in plot_diagnostics(result, plot_dir):
            manifest.add_output(path)


def cmd_highlight(args, manifest, outputs):
    source_path = resolve(args, args.input)
    manifest.add_dataset(source_path)
    _, examples = load_dataset(source_path)
    manifest.set_config({"source": args.source})
    vocab = build_vocabulary(examples)

    # One audit record per example
    records = []
    for ex in examples:
        text = ex.question if args.source == SOURCE_QUESTION else ex.parsing_statement
        result = highlight(ex.table, linearize_table(ex.table, vocab), text, args.source)
        records.append({
            "example_id": ex.example_id,
            "source": args.source,
            "text": text,
            "highlighted": result.highlighted_strings,
            "matched": sorted([c.row, c.col] for c in result.matched_coords),
            "gold": sorted([c.row, c.col] for c in ex.gold_cells),
        })
        logger.debug_at_level(DEBUG_L2, "Main", f"{ex.example_id}: {result.joined}")
    out = resolve(args, args.out)
    outputs.append(out)
    write_jsonl(out, records, header={"schema": AUDIT_SCHEMA, "version": 1, "source": args.source})
    manifest.add_output(out)
    logger.info("Main", f"Wrote {len(records)} highlight audit records to {out}")


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "perturb": cmd_perturb,
    "ablate": cmd_ablate,
    "diagnose": cmd_diagnose,
    "highlight": cmd_highlight,
}


# ─── Argument parsing ───

def _add_train_overrides(parser):
    parser.add_argument("--config", help="Flat key = value training config file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override a config field (repeatable)")
    parser.add_argument("--seed", type=int, help="Random seed")
    parser.add_argument("--epochs", type=int, help="Training epochs")
    parser.add_argument("--lr", type=float, help="Learning rate")
    parser.add_argument("--max-steps", dest="max_steps", type=int, help="Stop after N optimizer steps")


def build_parser():
    parser = argparse.ArgumentParser(description="Relevance-gated table question answering")
    parser.add_argument("--workdir", default=".", help="Root for all relative paths")
    parser.add_argument("-v", "--verbose", action="store_true", help="Enable verbose logging")
    parser.add_argument("--debug", type=int, choices=[1, 2, 3], default=1,
                        help="Debug level (1=Basic, 2=Medium, 3=Verbose)")
    parser.add_argument("--log", action="store_true", help="Enable file logging")
    parser.add_argument("--no-color", action="store_true", help="Disable colored output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="Generate a synthetic QA dataset")
    p.add_argument("--n", type=int, default=2000, help="Number of training examples")
    p.add_argument("--holdout", type=int, default=0, help="Number of held-out examples")
    p.add_argument("--seed", type=int, help="Generator seed (default: $TABLEQA_SEED or 7)")
    p.add_argument("--config", help="Generator config JSON (default Config/generator.json)")
    p.add_argument("--out", default="data/train.jsonl")
    p.add_argument("--holdout-out", dest="holdout_out", help="Held-out file (default <out>_heldout.jsonl)")

    p = sub.add_parser("train", help="Train the relevance-gated QA model")
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", dest="eval_data")
    p.add_argument("--checkpoint")
    p.add_argument("--metrics", help="JSON-lines metrics stream")
    _add_train_overrides(p)

    p = sub.add_parser("eval", help="Evaluate a checkpoint on clean and perturbed data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--perturb", nargs="*", default=[], help=f"Perturbation kinds {PERTURBATION_KINDS}")
    p.add_argument("--perturb-seed", dest="perturb_seed", type=int)
    p.add_argument("--donors", help="Dataset whose tables feed row addition / cell replacement")
    p.add_argument("--literal", action="store_true", help="Cell replacement counts as literal percentages")
    p.add_argument("--dump", help="Score dump (JSON lines)")
    p.add_argument("--latents", action="store_true", help="Include table-token latents in the score dump")
    p.add_argument("--label", default="model")
    p.add_argument("--metrics", help="JSON-lines metrics stream")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override an inference field")
    p.add_argument("--out", default="reports/eval.json")

    p = sub.add_parser("perturb", help="Write a perturbed copy of a dataset")
    p.add_argument("--kind", required=True, help=f"One of {PERTURBATION_KINDS}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--donors")
    p.add_argument("--literal", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("ablate", help="Run an ablation grid preset")
    p.add_argument("--grid", required=True, help="Preset name in Config/Presets or a JSON path")
    p.add_argument("--seeds", type=int, default=1, help="Seeds per row")
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", dest="eval_data")
    p.add_argument("--dump-dir", dest="dump_dir", help="Write a score dump per (row, seed)")
    p.add_argument("--metrics", help="JSON-lines metrics stream")
    p.add_argument("--out", default="reports/ablation.json")
    _add_train_overrides(p)

    p = sub.add_parser("diagnose", help="Score histograms and latent projections from score dumps")
    p.add_argument("--dump", nargs="+", required=True)
    p.add_argument("--projection", choices=PROJECTIONS + ("none",), default="pca")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--plot", metavar="DIR", help="Also write PNG plots into DIR")
    p.add_argument("--out", default="reports/diagnostics.json")

    p = sub.add_parser("highlight", help="Audit the cell highlighter over a dataset")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--source", choices=HIGHLIGHT_SOURCES, default="statement")
    p.add_argument("--out", required=True)
    return parser


def configure_logging(args):
    logger.configure(
        verbose=args.verbose,
        console_level=LOG_LEVEL_DEBUG if args.verbose else LOG_LEVEL_INFO,
        debug_level=args.debug,
        log_directory=os.path.join(args.workdir, "logs"),
        colored_output=not args.no_color,
    )
    if args.log:
        timestamp = time.strftime("%Y%m%d_%H%M%S")
        logger.configure_file_logging(enabled=True, level=LOG_LEVEL_DEBUG, filename=f"tableqa_{timestamp}.log")


def manifest_location(args, manifest):
    """Next to the first output; failed runs without outputs go to <workdir>/runs/."""
    if manifest.outputs:
        return f"{manifest.outputs[0]}.manifest.json"
    stamp = time.strftime("%Y%m%d_%H%M%S")
    return os.path.join(args.workdir, "runs", f"{args.command}_{stamp}_{os.getpid()}.manifest.json")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args)
    arguments = {k: v for k, v in vars(args).items() if isinstance(v, (str, int, float, bool, list, type(None)))}
    manifest = RunManifest.start(args.command, arguments)
    logger.debug_at_level(DEBUG_L1, "Main", f"Command '{args.command}' in {os.path.abspath(args.workdir)}")

    status, code = "ok", EXIT_OK
    try:
        with staged_outputs() as outputs:
            with logger.timed("Main", f"Command '{args.command}'"):
                COMMANDS[args.command](args, manifest, outputs)
    except TableQAError as e:
        logger.error("Main", f"{type(e).__name__}: {e}")
        status, code = "failed", e.exit_code
    except KeyboardInterrupt:
        logger.warning("Main", "Interrupted; partial outputs removed")
        status, code = "interrupted", EXIT_RUNTIME_FAILURE
    except Exception as e:
        logger.error("Main", f"Unexpected {type(e).__name__}: {e}")
        status, code = "failed", EXIT_RUNTIME_FAILURE

    manifest_path = manifest_location(args, manifest)
    try:
        manifest.finish(manifest_path, status)
    except OSError as e:
        logger.error("Main", f"Could not write manifest {manifest_path}: {e}")
        code = code or EXIT_RUNTIME_FAILURE
    logger.shutdown()
    return code


if __name__ == '__main__':
    def signal_handler(sig, frame):
        get_logger().info("Main", f"Received signal {sig}, shutting down")
        raise KeyboardInterrupt

    signal.signal(signal.SIGINT, signal_handler)
    signal.signal(signal.SIGTERM, signal_handler)
    sys.exit(main())
