"""
    Command-line driver: the simulate -> dataset -> pretrain -> train ->
    detect -> eval workflow as subcommands.
"""

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field
from multiprocessing.pool import ThreadPool
from typing import List, Optional, Sequence

from gprforge import annotate, baselines, detect, evaluate, fdtd, nn, radargram
from gprforge.configuration import Configuration, load_config
from gprforge.exceptions import (
    EmptyDataset,
    FileAccessError,
    GprForgeException,
    OutputExists,
)
from gprforge.scene import parse_scene

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    """Resolved invocation: global switches plus the subcommand's options."""

    command: str
    seed: Optional[int] = None
    force: bool = False
    threads: Optional[int] = None
    debug: bool = False
    options: dict = field(default_factory=dict)

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        globals_ = ("command", "seed", "force", "threads", "debug", "handler")
        options = {k: v for k, v in vars(args).items() if k not in globals_}
        return cls(args.command, args.seed, args.force, args.threads, args.debug, options)

    def seed_or(self, default: int) -> int:
        return default if self.seed is None else self.seed


def check_output(path: str, force: bool):
    if os.path.exists(path) and not force:
        raise OutputExists(subject=path)
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def read_text(path: str) -> bytes:
    try:
        with open(path, "rb") as file:
            return file.read()
    except OSError as e:
        raise FileAccessError(subject=path, reason=f"cannot read '{path}': {e.strerror}")


# Subcommands


def cmd_simulate(run: RunConfig, config: dict) -> int:
    o = run.options
    check_output(o["out"], run.force)
    s = parse_scene(read_text(o["scene"]))
    courant = o["courant"] or config["fdtd"]["courant"]
    log.info(f"Simulating {s.scan.n_traces} traces from {o['scene']}")
    r = fdtd.run_bscan(s, courant, threads=run.threads)
    radargram.write_gprb(r, o["out"])
    log.info(f"Wrote {o['out']}: {radargram.describe(r)}")
    if o["report"]:
        for i, trace in enumerate(r.traces):
            pick = fdtd.pick_first_break(trace)
            print(f"trace {i}: first break {'none' if pick is None else pick}")
    return 0


def cmd_render(run: RunConfig, config: dict) -> int:
    o = run.options
    check_output(o["out"], run.force)
    pre = config["preprocess"]
    r = radargram.read_gprb(o["input"])
    if o["height"]:
        r = radargram.resample_time(r, o["height"])
    if not o["raw"]:
        r = radargram.preprocess(
            r,
            o["dewow"] or pre["dewow_window"],
            o["gain_kind"] or pre["gain_kind"],
            pre["gain_k"] if o["gain_k"] is None else o["gain_k"],
            background=not o["no_background"],
        )
    image = radargram.to_image(r, o["mode"] or pre["image_mode"], tuple(pre["percentile"]), strict=o["strict"])
    radargram.write_pgm(image, o["out"])
    log.info(f"Wrote {o['out']}: {image.width}x{image.height}")
    return 0


def cmd_import(run: RunConfig, config: dict) -> int:
    o = run.options
    check_output(o["out"], run.force)
    if o["raw"]:
        r = radargram.read_raw(o["raw"], o["samples"], o["dt"], o["dx"], o["dtype"], o["time_zero"])
    else:
        r = radargram.from_image(radargram.read_pgm(o["pgm"]), o["dt"], o["dx"])
    radargram.write_gprb(r, o["out"])
    log.info(f"Imported {radargram.describe(r)} into {o['out']}")
    return 0


def cmd_dataset(run: RunConfig, config: dict) -> int:
    o = run.options
    if o["config"]:
        cfg = annotate.parse_gen_config(read_text(o["config"]), o["preset"])
    else:
        cfg = annotate.preset_config(o["preset"] or "simulated", config)
    if run.seed is not None:
        cfg.seed = run.seed
    if o["count"] is not None:
        cfg.count = o["count"]
    annotate.generate_dataset(
        cfg, o["out"], run.force, config["preprocess"], config["fdtd"]["courant"], run.threads
    )
    return 0


def pretrain_from_options(run: RunConfig, config: dict, cifar: Optional[str], patch_dirs: Sequence[str], epochs=None):
    # Cifar-10 when given, labelled hyperbola patches otherwise
    recipe = dict(config["pretrain"])
    if epochs is not None:
        recipe["epochs"] = epochs
    seed = run.seed_or(0)
    if cifar:
        train_files, test_files = nn.cifar_batches(cifar)
        X, y = nn.load_cifar10_grayscale(train_files)
        X_test, y_test = nn.load_cifar10_grayscale(test_files)
    else:
        X_all, y_all = nn.patches_from_dataset(patch_dirs, recipe["patches"], seed)
        if len(y_all) == 0:
            raise EmptyDataset(subject=", ".join(patch_dirs))
        split = int(0.8 * len(y_all))
        X, y, X_test, y_test = X_all[:split], y_all[:split], X_all[split:], y_all[split:]

    net, _ = nn.pretrain_backbone(
        X,
        y,
        recipe["epochs"],
        recipe["lr"],
        recipe["lr_steps"],
        recipe["lr_decay"],
        recipe["batch_size"],
        recipe["momentum"],
        recipe["weight_decay"],
        seed,
    )
    accuracy = nn.evaluate_classifier(net, X_test, y_test)
    log.info(f"Held-out accuracy {accuracy:.3f} on {len(y_test)} samples")
    return net, accuracy


def cmd_pretrain(run: RunConfig, config: dict) -> int:
    o = run.options
    check_output(o["out"], run.force)
    net, _ = pretrain_from_options(run, config, o["cifar"], o["patches"] or [], o["epochs"])
    nn.save_weights(o["out"], nn.backbone_weights(net))
    return 0


def loss_log_path(model_path: str) -> str:
    return model_path + ".loss.csv"


def write_loss_log(path: str, history: List[dict]):
    with open(path, "w") as file:
        file.write("epoch,loss\n")
        for record in history:
            file.write(f"{record['epoch']},{record['loss']!r}\n")


def train_from_options(run: RunConfig, config: dict, data: Sequence[str], backbone: nn.Weights, epochs=None, lr=None):
    recipe = config["train"]
    return detect.train_detector(
        data,
        backbone,
        config["detector"],
        run.seed_or(0),
        recipe["epochs"] if epochs is None else epochs,
        lr or recipe["lr"],
        recipe["momentum"],
        recipe["weight_decay"],
    )


def cmd_train(run: RunConfig, config: dict) -> int:
    o = run.options
    for path in detect.model_artifacts(o["out"]) + [loss_log_path(o["out"])]:
        check_output(path, run.force)
    backbone = nn.load_weights(o["backbone"])
    model, history = train_from_options(run, config, o["data"], backbone, o["epochs"], o["lr"])
    detect.save_model(o["out"], model)
    write_loss_log(loss_log_path(o["out"]), history)
    log.info(f"Saved detector to {o['out']}")
    return 0


def predictions_to_boxes(detections):
    return [d.as_bbox() for d in detections]


def run_on_directory(images_dir: str, out_dir: str, force: bool, predict, threads: Optional[int] = None) -> int:
    """Apply `predict(image) -> detections` to every `{i}.pgm` and write
    `{i}.txt` prediction files."""
    annotate.prepare_output(out_dir, force)
    indices = annotate.dataset_indices(images_dir)
    threads = threads or Configuration().threads

    def one(index):
        image = radargram.read_pgm(os.path.join(images_dir, f"{index}.pgm"))
        found = predict(image)
        annotate.write_labels(os.path.join(out_dir, f"{index}.txt"), predictions_to_boxes(found), with_scores=True)
        return index, len(found)

    with ThreadPool(processes=max(1, min(threads, len(indices) or 1))) as pool:
        counts = dict(pool.map(one, indices))
    log.info(f"Wrote {len(counts)} prediction files ({sum(counts.values())} detections) to {out_dir}")
    return len(counts)


def detector_predict(model, config: dict, threshold=None, nms_thresh=None):
    d = config["detector"]
    return lambda image: detect.detect(
        model,
        image,
        d["score_thresh"] if threshold is None else threshold,
        d["nms_thresh"] if nms_thresh is None else nms_thresh,
        d["test_pre_nms"],
        d["test_post_nms"],
        d["train_nms"],
    )


def cmd_detect(run: RunConfig, config: dict) -> int:
    o = run.options
    model = detect.load_model(o["model"])
    predict = detector_predict(model, config, o["threshold"], o["nms"])
    if o["images"]:
        run_on_directory(o["images"], o["out"], run.force, predict, run.threads)
        return 0
    check_output(o["out"], run.force)
    found = predict(radargram.read_pgm(o["image"]))
    annotate.write_labels(o["out"], predictions_to_boxes(found), with_scores=True)
    log.info(f"{len(found)} detections written to {o['out']}")
    return 0


def baseline_predict(method: str, config: dict, seed: int, train_dirs: Sequence[str] = (), threshold=None, preset: str = "simulated"):
    params = config["baselines"][method]
    if method == "hough":
        return lambda image: baselines.hough_detections(
            baselines.hough_detect(
                image, params["edge_percentile"], params["n_samples"], params["bins"], params["min_votes"], seed
            )
        )
    if method == "template":
        dt, dx = baselines.pixel_spacing(annotate.preset_config(preset, config))
        templates = baselines.template_dictionary(params["depths"], params["eps_r"], tuple(params["size"]), dt, dx)
        score = params["threshold"] if threshold is None else threshold
        return lambda image: baselines.template_match(image, templates, score)

    X, y = nn.patches_from_dataset(train_dirs, config["pretrain"]["patches"], seed)
    model = baselines.train_hog(X, y, params["epochs"], params["lr"], seed=seed)
    score = params["threshold"] if threshold is None else threshold
    return lambda image: baselines.hog_detect(model, image, params["stride"], params["scales"], score)


def cmd_baseline(run: RunConfig, config: dict) -> int:
    o = run.options
    if o["method"] == "hog" and not o["train"]:
        raise EmptyDataset(subject="--train (required by the hog baseline)")
    predict = baseline_predict(o["method"], config, run.seed_or(0), o["train"] or [], o["threshold"], o["preset"])
    run_on_directory(o["images"], o["out"], run.force, predict, run.threads)
    return 0


def cmd_eval(run: RunConfig, config: dict) -> int:
    o = run.options
    defaults = config["evaluate"]
    report = evaluate.eval_report(
        o["pred"],
        o["gt"],
        defaults["iou_thresh"] if o["iou"] is None else o["iou"],
        defaults["score_thresh"] if o["threshold"] is None else o["threshold"],
    )
    for path in (o["report"], o["csv"]):
        if path:
            check_output(path, run.force)
    if o["report"]:
        evaluate.write_report(report, o["report"])
    if o["csv"]:
        evaluate.write_pr_csv(report, o["csv"])
    sys.stdout.write(evaluate.format_report(report))
    return 0


def cmd_scenario(run: RunConfig, config: dict) -> int:
    """Generate the scenario's splits, pretrain, train, detect and score
    the detector against the HOG and template baselines."""
    o = run.options
    split = config["scenario"][str(o["id"])]
    seed = run.seed_or(config["scenario"]["seed"])
    out = o["out"]
    annotate.prepare_output(out, run.force)

    def make(name, preset, count, offset):
        cfg = annotate.preset_config(preset, config)
        cfg.count, cfg.seed = count, seed + offset
        path = os.path.join(out, name)
        annotate.generate_dataset(cfg, path, True, config["preprocess"], config["fdtd"]["courant"], run.threads)
        return path

    train_dirs = []
    if split["train_simulated"]:
        train_dirs.append(make("train_simulated", "simulated", split["train_simulated"], 0))
    if split["train_pseudo_real"]:
        train_dirs.append(make("train_pseudo_real", "pseudo-real", split["train_pseudo_real"], 1))
    test_dir = make("test", split["test_preset"], split["test"], 2)

    seeded = RunConfig(run.command, seed, True, run.threads, run.debug)
    net, _ = pretrain_from_options(seeded, config, o["cifar"], train_dirs, o["pretrain_epochs"])
    backbone = nn.backbone_weights(net)
    nn.save_weights(os.path.join(out, "backbone.gpnw"), backbone)
    model, history = train_from_options(seeded, config, train_dirs, backbone, o["epochs"])
    detect.save_model(os.path.join(out, "detector.gpnw"), model)
    write_loss_log(loss_log_path(os.path.join(out, "detector.gpnw")), history)

    predictors = {"detector": detector_predict(model, config)}
    for method in ("hog", "template"):
        predictors[method] = baseline_predict(method, config, seed, train_dirs, preset=split["test_preset"])

    lines = ["method ap precision recall mean_tp_score"]
    for name, predict in predictors.items():
        pred_dir = os.path.join(out, f"pred_{name}")
        run_on_directory(test_dir, pred_dir, True, predict, run.threads)
        report = evaluate.eval_report(pred_dir, test_dir, config["evaluate"]["iou_thresh"], config["evaluate"]["score_thresh"])
        evaluate.write_report(report, os.path.join(out, f"report_{name}.txt"))
        lines.append(f"{name} {report.ap:.4f} {report.precision:.4f} {report.recall:.4f} {report.mean_tp_score:.4f}")

    with open(os.path.join(out, "summary.txt"), "w") as file:
        file.write("\n".join(lines) + "\n")
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gprforge", description="GPR hyperbola simulation and detection")
    parser.add_argument("--seed", type=int, default=None, help="seed for every random draw")
    parser.add_argument("--force", action="store_true", help="overwrite existing outputs")
    parser.add_argument("--debug", action="store_true", help="debug logging and finiteness checks")
    parser.add_argument("--threads", type=int, default=None, help="worker threads (default GPRFORGE_THREADS or CPU count)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="scene file -> GPRB radargram")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--courant", type=float, default=None)
    p.add_argument("--report", action="store_true", help="print first-break picks")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("render", help="GPRB -> PGM image")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--height", type=int, default=None, help="resample to this many rows")
    p.add_argument("--dewow", type=int, default=None)
    p.add_argument("--gain-kind", choices=radargram.GAIN_KINDS, default=None)
    p.add_argument("--gain-k", type=float, default=None)
    p.add_argument("--no-background", action="store_true")
    p.add_argument("--raw", action="store_true", help="skip preprocessing")
    p.add_argument("--mode", choices=("percentile", "global_minmax"), default=None)
    p.add_argument("--strict", action="store_true", help="fail on a degenerate amplitude range")
    p.set_defaults(handler=cmd_render)

    p = sub.add_parser("import", help="raw binary or PGM -> GPRB")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--raw")
    source.add_argument("--pgm")
    p.add_argument("--samples", type=int, default=0)
    p.add_argument("--dt", type=float, required=True)
    p.add_argument("--dx", type=float, required=True)
    p.add_argument("--dtype", default="<f4")
    p.add_argument("--time-zero", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_import)

    p = sub.add_parser("dataset", help="GenConfig or preset -> labelled image directory")
    p.add_argument("--config", default=None)
    p.add_argument("--preset", choices=("simulated", "pseudo-real"), default=None)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_dataset)

    p = sub.add_parser("pretrain", help="pretrain the backbone")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--cifar")
    source.add_argument("--patches", nargs="+")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_pretrain)

    p = sub.add_parser("train", help="train the two-stage detector")
    p.add_argument("--data", action="append", required=True)
    p.add_argument("--backbone", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("detect", help="run a trained detector")
    p.add_argument("--model", required=True)
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--image")
    target.add_argument("--images")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--nms", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_detect)

    p = sub.add_parser("baseline", help="run a classical detector")
    p.add_argument("--method", choices=("hog", "template", "hough"), required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--train", action="append", default=None, help="labelled datasets for hog training")
    p.add_argument("--preset", choices=("simulated", "pseudo-real"), default="simulated")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_baseline)

    p = sub.add_parser("eval", help="score predictions against labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--iou", type=float, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--report", default=None)
    p.add_argument("--csv", default=None)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("scenario", help="end-to-end scenario 1, 2 or 3")
    p.add_argument("--id", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--cifar", default=None)
    p.add_argument("--pretrain-epochs", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_scenario)

    return parser


def configure(run: RunConfig):
    settings = Configuration()
    if run.threads:
        settings.threads = max(1, run.threads)
    settings.debug = run.debug
    Configuration.set_default(settings)


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    run = RunConfig.from_args(args)
    configure(run)

    try:
        return args.handler(run, load_config())
    except OSError as e:
        # Files opened deep inside the pipeline
        error = FileAccessError(subject=e.filename, reason=f"'{e.filename}': {e.strerror}")
        log.error(f"I/O failure: {e}")
        sys.stderr.write(str(error))
        return 1
    except GprForgeException as e:
        sys.stderr.write(str(e))
        return 1


if __name__ == "__main__":
    sys.exit(main())
