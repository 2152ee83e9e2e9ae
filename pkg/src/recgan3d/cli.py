"""Command-line interface: ``recgan3d {synth,train,eval,complete,export-mesh,experiment}``.

Every option can also be given in a flat ``key=value`` file passed with
``--config``; keys are the long flag names with dashes or underscores.
Command-line flags win over the file, the file wins over built-in defaults,
and unknown keys are rejected.  Exit codes: 0 success, 1 hard error, 2 usage
error.
"""
from __future__ import annotations

import argparse
import logging
import secrets
import sys
from pathlib import Path

import torch

from . import dataset as ds
from . import evalharness as ev
from .losses import LossWeights
from .meshscan import EmptyGeometryError, MeshFormatError, PinholeCamera, voxel_cubes, write_obj
from .nnarch import ModelSpec, SpecError
from .train import (
    CheckpointError,
    Trainer,
    TrainingDiverged,
    TrainSpec,
    build_models,
    deterministic_mode,
    load_checkpoint,
    load_generator,
)
from .voxelgrid import PROBABILITY, GridFormatError, OccupancyGrid, load_grid, save_grid, threshold

HARD_ERRORS = (ds.DatasetError, ev.ExperimentError, SpecError, CheckpointError, GridFormatError,
               MeshFormatError, EmptyGeometryError, TrainingDiverged, OSError, ValueError)


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(kind):
    def convert(text):
        return None if str(text).strip().lower() in ("", "none") else kind(text)
    convert.__name__ = kind.__name__
    return convert


class Command:
    """One subcommand: its parser plus the default and type of every key."""

    def __init__(self, sub, name, handler, help):
        self.name = name
        self.handler = handler
        self.parser = sub.add_parser(name, help=help, argument_default=argparse.SUPPRESS)
        self.parser.set_defaults(command=self)
        self.parser.add_argument("--config", help="key=value file with option values")
        self.defaults, self.types, self.required = {}, {}, set()

    def opt(self, flag, default=None, type=str, required=False, **kw):
        key = flag.lstrip("-").replace("-", "_")
        self.defaults[key] = default
        self.types[key] = _bool if type is bool else type
        if required:
            self.required.add(key)
        if type is bool:
            self.parser.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction, **kw)
        else:
            self.parser.add_argument(flag, dest=key, type=type, **kw)

    def resolve(self, ns):
        values = dict(self.defaults)
        if getattr(ns, "config", None):
            for key, text in read_config(ns.config).items():
                if key not in self.types:
                    self.parser.error(f"{ns.config}: unknown key {key!r} for '{self.name}'")
                try:
                    values[key] = self.types[key](text)
                except (TypeError, ValueError) as exc:
                    self.parser.error(f"{ns.config}: bad value for {key!r}: {exc}")
        for key in self.defaults:
            if key in ns:
                values[key] = getattr(ns, key)
        missing = sorted(k for k in self.required if values.get(k) is None)
        if missing:
            self.parser.error("missing required option(s): " + ", ".join("--" + k.replace("_", "-")
                                                                         for k in missing))
        return values


def read_config(path):
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SystemExit(f"error: cannot read config file: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise SystemExit(f"error: {path}:{lineno}: expected key=value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def print_config(name, cfg):
    print(f"[{name}] resolved configuration:")
    for key in sorted(cfg):
        print(f"  {key} = {cfg[key]}")
    sys.stdout.flush()


def resolve_seed(cfg):
    if cfg.get("seed") is None:
        cfg["seed"] = secrets.randbelow(2 ** 31)
        print(f"no --seed given; drew seed {cfg['seed']} (pass --seed {cfg['seed']} to reproduce)")
    return cfg["seed"]


# -- training options shared by train and experiment ------------------------------------


def add_training_options(cmd):
    cmd.opt("--res", None, _optional(int), help="grid resolution (default: that of the data)")
    cmd.opt("--ae-only", False, bool, help="autoencoder-only ablation: force beta=1")
    cmd.opt("--seed", None, _optional(int), help="single source of all randomness")
    cmd.opt("--batch-size", 8, int)
    cmd.opt("--alpha", 0.85, float, help="weight of occupied voxels in the reconstruction loss")
    cmd.opt("--beta", 0.05, float, help="reconstruction vs adversarial mix of the generator loss")
    cmd.opt("--lam", 10.0, float, help="gradient-penalty weight")
    cmd.opt("--gp-interpolant", "real_fake", str, choices=["real_fake", "input_fake"])
    cmd.opt("--gp-mode", "autograd", str, choices=["autograd", "finite_difference"])
    cmd.opt("--epochs", 1, int)
    cmd.opt("--max-steps", None, _optional(int), help="stop after this many steps")
    cmd.opt("--lr-first", 5e-4, float, help="learning rate during the first epoch")
    cmd.opt("--lr-later", 1e-4, float, help="learning rate afterwards")
    cmd.opt("--adam-beta1", 0.9, float)
    cmd.opt("--adam-beta2", 0.999, float)
    cmd.opt("--adam-eps", 1e-8, float)
    cmd.opt("--base-channels", 64, int)
    cmd.opt("--channel-cap", 512, int)
    cmd.opt("--skips", True, bool, help="encoder-decoder skip connections")
    cmd.opt("--checkpoint-every", 1, int, help="epochs between checkpoints (0: only at the end)")
    cmd.opt("--deterministic", True, bool, help="single-threaded deterministic kernels")
    cmd.opt("--log-every", 10, int, help="print every k-th step (0: silent)")


def specs_from(cfg, resolution):
    beta = 1.0 if cfg["ae_only"] else cfg["beta"]
    weights = LossWeights(cfg["alpha"], beta, cfg["lam"], cfg["gp_interpolant"])
    model = ModelSpec.for_resolution(resolution, base_channels=cfg["base_channels"],
                                     channel_cap=cfg["channel_cap"], skips=cfg["skips"],
                                     seed=cfg["seed"])
    train = TrainSpec(batch_size=cfg["batch_size"], adam_beta1=cfg["adam_beta1"], adam_beta2=cfg["adam_beta2"],
                      adam_eps=cfg["adam_eps"], lr_first=cfg["lr_first"], lr_later=cfg["lr_later"],
                      epochs=cfg["epochs"], max_steps=cfg["max_steps"], weights=weights, seed=cfg["seed"],
                      checkpoint_every=cfg["checkpoint_every"], gp_mode=cfg["gp_mode"])
    return model, train


def print_header(train_spec):
    w = train_spec.weights
    print(f"hyperparameters: alpha={w.alpha:g} beta={w.beta:g} lambda={w.lam:g} "
          f"batch={train_spec.batch_size}" + (" (autoencoder only)" if train_spec.ae_only else ""))


def step_printer(every):
    def on_step(rec):
        if every and rec["step"] % every == 0:
            fmt = lambda v: "-" if v is None else f"{v:.6f}"
            print(f"step {rec['step']} epoch {rec['epoch']} L_d={fmt(rec['L_d'])} L_ae={fmt(rec['L_ae'])} "
                  f"L_g={fmt(rec['L_g'])} lr={rec['lr']:g}", flush=True)
    return on_step


# -- subcommands ---------------------------------------------------------------------------


def cmd_synth(cfg):
    if (cfg["meshes"] is None) == (cfg["procedural"] is None):
        raise UsageError("give exactly one of --meshes DIR or --procedural KIND")
    if cfg["procedural"] is not None:
        resolve_seed(cfg)
    print_config("synth", cfg)
    camera = PinholeCamera(width=cfg["width"], height=cfg["height"], focal=cfg["focal"],
                           distance=cfg["distance"])
    config = ds.SynthConfig(resolution=cfg["res"], n_per_axis=cfg["views_per_axis"], camera=camera,
                            solid=cfg["solid"])
    if cfg["meshes"] is not None:
        sources = ds.sources_from_dir(cfg["meshes"], cfg["category"])
    else:
        sources = ds.procedural_sources(cfg["procedural"], cfg["count"], cfg["seed"], prefix=cfg["category"])
    manifest = ds.synthesize_dataset(sources, cfg["split"], config, cfg["out"], jobs=cfg["jobs"])
    for cat, model_id, err in manifest.failures:
        print(f"warning: skipped {cat}/{model_id}: {err}", file=sys.stderr)
    print(f"wrote {len(manifest)} pairs from {len(sources) - len(manifest.failures)} models "
          f"({len(manifest.failures)} failed) to {cfg['out']}")
    return 0


def _check_resolution(cfg, manifest):
    if cfg["res"] is not None and cfg["res"] != manifest.resolution:
        raise SpecError(f"--res {cfg['res']} does not match data resolution {manifest.resolution}")
    return manifest.resolution


def cmd_train(cfg):
    resolve_seed(cfg)
    print_config("train", cfg)
    manifest = ds.read_manifest(cfg["data"])
    resolution = _check_resolution(cfg, manifest)
    model_spec, train_spec = specs_from(cfg, resolution)
    if cfg["deterministic"]:
        deterministic_mode()
    if cfg["resume"]:
        trainer = load_checkpoint(cfg["resume"], manifest)
        print(f"resuming from {cfg['resume']} at step {trainer.state.step}")
    else:
        trainer = Trainer(build_models(model_spec, train_spec), train_spec, manifest)
    print_header(trainer.spec)
    print(f"{len(manifest)} pairs, {trainer.steps_per_epoch} steps/epoch, {trainer.total_steps} steps total")
    paths = trainer.run(cfg["out"], on_step=step_printer(cfg["log_every"]))
    print(f"checkpoints: {', '.join(str(p) for p in paths)}")
    return 0


def cmd_eval(cfg):
    print_config("eval", cfg)
    if cfg["jobs"] > 1:
        torch.set_num_threads(cfg["jobs"])
    manifest = ds.read_manifest(cfg["data"])
    sources = [cfg["checkpoint"] is not None, cfg["baseline"] is not None, cfg["self_test"]]
    if sum(sources) != 1:
        raise UsageError("give exactly one of --checkpoint, --baseline or --self-test")
    if cfg["self_test"]:
        model, label = "identity-oracle", "identity oracle (self-test)"
    elif cfg["baseline"] is not None:
        model, label = cfg["baseline"], cfg["baseline"]
    else:
        model, _ = load_generator(cfg["checkpoint"], expected_resolution=manifest.resolution)
        label = f"checkpoint {cfg['checkpoint']}"
    report = ev.evaluate(model, manifest, cfg["threshold"])
    baseline = None
    if cfg["checkpoint"] is not None and cfg["with_baseline"]:
        baseline = ev.evaluate("copy-input", manifest, cfg["threshold"])
    print(report.csv_text(), end="")
    if cfg["out"] is not None:
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(report.csv_text())
        (out / "report.md").write_text(ev.eval_markdown(report, manifest, label, baseline))
        print(f"wrote {out / 'report.csv'} and {out / 'report.md'}")
    if cfg["self_test"] and report.row().mean_iou != 1.0:
        print(f"error: identity oracle scored IoU {report.row().mean_iou}", file=sys.stderr)
        return 1
    return 0


def cmd_complete(cfg):
    print_config("complete", cfg)
    grid = load_grid(cfg["input"])
    if grid.kind == PROBABILITY:
        grid = threshold(grid, 0.5)
    n = grid.dims[0]
    if grid.dims != (n, n, n):
        raise SpecError(f"input grid must be cubic, got {grid.dims}")
    gen, _ = load_generator(cfg["checkpoint"], expected_resolution=n)
    dtype = next(gen.parameters()).dtype
    with torch.no_grad():
        prob = gen(torch.tensor(grid.values[None], dtype=dtype))[0].float().numpy()
    out = OccupancyGrid(prob, PROBABILITY)
    if cfg["binarize"] is not None:
        out = threshold(out, cfg["binarize"])
    save_grid(out, cfg["out"])
    print(f"wrote {out.kind} grid {out.dims} with {threshold(out.as_probability(), 0.5).count()} "
          f"voxels above 0.5 to {cfg['out']}")
    return 0


def cmd_export_mesh(cfg):
    print_config("export-mesh", cfg)
    grid = load_grid(cfg["input"])
    if grid.kind == PROBABILITY:
        grid = threshold(grid, cfg["threshold"])
    mesh = voxel_cubes(grid.values)
    write_obj(mesh, cfg["out"])
    print(f"wrote {len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles to {cfg['out']}")
    return 0


def cmd_experiment(cfg):
    resolve_seed(cfg)
    print_config("experiment", cfg)
    if cfg["protocol"] is not None:
        mode, train_cats, test_cats = ev.PROTOCOLS[cfg["protocol"]]
    else:
        if not (cfg["train_categories"] and cfg["test_categories"]):
            raise UsageError("give --protocol or both --train-categories and --test-categories")
        mode = cfg["mode"]
        train_cats = [c for c in cfg["train_categories"].split(",") if c]
        test_cats = [c for c in cfg["test_categories"].split(",") if c]
    manifest = ds.read_manifest(cfg["train_data"]) if Path(cfg["train_data"]).exists() else None
    resolution = cfg["res"] or (manifest.resolution if manifest is not None else 32)
    model_spec, train_spec = specs_from(cfg, resolution)
    config = ev.ExperimentConfig(train_cats, test_cats, cfg["train_data"], cfg["test_data"], cfg["out"],
                                 mode=mode, model_spec=model_spec, train_spec=train_spec,
                                 threshold=cfg["threshold"])
    print_header(train_spec)
    result = ev.run_experiment(config, on_step=step_printer(cfg["log_every"]))
    print(result.report.csv_text(), end="")
    print(f"wrote {result.csv_path} and {result.md_path}")
    return 0


class UsageError(Exception):
    pass


def build_parser():
    parser = argparse.ArgumentParser(prog="recgan3d", description="Voxel shape completion from one depth view.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="subcommand", metavar="COMMAND", required=True)

    c = Command(sub, "synth", cmd_synth, "render depth views of meshes into paired grids")
    c.opt("--meshes", None, _optional(str), help="directory of .obj files (nested by category)")
    c.opt("--procedural", None, _optional(str), choices=["box", "chair", "stool", "table"],
          help="generate jittered procedural models instead of reading meshes")
    c.opt("--count", 8, int, help="number of procedural models")
    c.opt("--out", None, _optional(str), required=True)
    c.opt("--res", 32, int)
    c.opt("--views-per-axis", 5, int, help="poses per rotation axis (K^3 views per model)")
    c.opt("--solid", False, bool, help="fill model interiors in the ground truth")
    c.opt("--split", "train", str, choices=list(ds.SPLITS))
    c.opt("--category", None, _optional(str), help="category label (default: parent directory name)")
    c.opt("--jobs", 1, int, help="worker processes")
    c.opt("--seed", None, _optional(int), help="seed for procedural models")
    c.opt("--width", 128, int)
    c.opt("--height", 128, int)
    c.opt("--focal", 140.0, float)
    c.opt("--distance", 1.8, float)

    c = Command(sub, "train", cmd_train, "train the completion network")
    c.opt("--data", None, _optional(str), required=True, help="dataset directory (from synth)")
    c.opt("--out", None, _optional(str), required=True, help="directory for log and checkpoints")
    c.opt("--resume", None, _optional(str), help="continue from a checkpoint")
    add_training_options(c)

    c = Command(sub, "eval", cmd_eval, "score a checkpoint or baseline on a dataset")
    c.opt("--checkpoint", None, _optional(str))
    c.opt("--baseline", None, _optional(str), choices=sorted(ev.BASELINES))
    c.opt("--self-test", False, bool, help="score the identity oracle (must give IoU 1)")
    c.opt("--data", None, _optional(str), required=True)
    c.opt("--threshold", 0.5, float)
    c.opt("--out", None, _optional(str), help="directory for report.csv / report.md")
    c.opt("--with-baseline", True, bool, help="add the copy-input baseline to the summary")
    c.opt("--jobs", 1, int, help="threads for tensor math")

    c = Command(sub, "complete", cmd_complete, "complete one partial grid")
    c.opt("--checkpoint", None, _optional(str), required=True)
    c.opt("--input", None, _optional(str), required=True)
    c.opt("--out", None, _optional(str), required=True)
    c.opt("--binarize", None, _optional(float), help="write a binary grid thresholded at this value")

    c = Command(sub, "export-mesh", cmd_export_mesh, "write a grid as an OBJ of unit cubes")
    c.opt("--input", None, _optional(str), required=True)
    c.opt("--out", None, _optional(str), required=True)
    c.opt("--threshold", 0.5, float, help="occupancy threshold for probability grids")

    c = Command(sub, "experiment", cmd_experiment, "train and evaluate one category protocol")
    c.opt("--protocol", None, _optional(str), choices=sorted(ev.PROTOCOLS))
    c.opt("--mode", "cross-category", str, choices=list(ev.MODES))
    c.opt("--train-categories", None, _optional(str), help="comma-separated")
    c.opt("--test-categories", None, _optional(str), help="comma-separated")
    c.opt("--train-data", None, _optional(str), required=True)
    c.opt("--test-data", None, _optional(str), required=True)
    c.opt("--out", None, _optional(str), required=True)
    c.opt("--threshold", 0.5, float)
    add_training_options(c)
    return parser


def main(argv=None):
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cmd = ns.command
    cfg = cmd.resolve(ns)
    try:
        return cmd.handler(cfg)
    except UsageError as exc:
        cmd.parser.print_usage(sys.stderr)
        print(f"recgan3d {cmd.name}: error: {exc}", file=sys.stderr)
        return 2
    except HARD_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
