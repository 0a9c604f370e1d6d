"""
Command-line entry point: train, enhance, eval, bench, inspect.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
import argparse
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.cli.config_file import apply_overrides, dump_run_config, load_run_config
from src.cli.manifest import build_id, hardware_description, write_manifest
from src.config import settings
from src.data.dataset import PairedDataset, PairLoader, Split, split_dataset
from src.data.image_io import IMAGE_SUFFIXES, load_image, resize_bilinear, save_image
from src.errors import ConfigError, LU2NetError
from src.model.checkpoint import load_weights
from src.model.network import Network, count_flops, count_params, enhance_image, init_params
from src.schemas import BenchReport, RunConfig, RunManifest
from src.services.losses import FeatureExtractor
from src.services.metrics import evaluate_pairs, uciqe, write_metrics_csv
from src.tensor import Tensor, get_num_threads, no_grad, set_num_threads
from src.worker.trainer import Trainer

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

REFERENCE_PARAMS = 176_000
REFERENCE_FLOPS = 2.8e9


def parse_shape(value: str) -> Tuple[int, int]:
    try:
        height, width = (int(part) for part in value.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {value!r}")
    if height < 1 or width < 1:
        raise argparse.ArgumentTypeError(f"shape dims must be positive, got {value!r}")
    return height, width


def _load_config(args: argparse.Namespace) -> RunConfig:
    return load_run_config(args.config) if args.config else RunConfig()


def _network(args: argparse.Namespace, config: RunConfig) -> Network:
    if getattr(args, "weights", None):
        return load_weights(args.weights, config.network)
    logger.info(f"No weights given; using a freshly initialized network (seed {args.seed})")
    return init_params(config.network, args.seed)


def _manifest(command: str, config: RunConfig, **kwargs) -> RunManifest:
    return RunManifest(
        command=command,
        config=config.model_dump(),
        build_id=build_id(),
        hardware=hardware_description(),
        **kwargs,
    )


def _image_paths(source: Path) -> List[Path]:
    if source.is_dir():
        return sorted(p for p in source.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    if not source.exists():
        raise ConfigError(f"input {source} does not exist")
    return [source]


def _writes_single_file(source: Path, out: Path) -> bool:
    return not source.is_dir() and out.suffix.lower() in IMAGE_SUFFIXES


def _overwrites_input(source: Path, out: Path) -> bool:
    if source.is_dir():
        return out.resolve() == source.resolve()
    target = out if _writes_single_file(source, out) else out / source.name
    return target.resolve() == source.resolve()


def _timing(values_ms: Sequence[float]) -> Dict[str, float]:
    if not values_ms:
        return {}
    arr = np.asarray(values_ms)
    mean = float(arr.mean())
    return {
        "mean_ms": mean,
        "p50_ms": float(np.percentile(arr, 50)),
        "p95_ms": float(np.percentile(arr, 95)),
        "fps": 1000.0 / mean if mean > 0 else float("inf"),
    }


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(args: argparse.Namespace) -> int:
    config = apply_overrides(
        _load_config(args),
        {
            "train.seed": args.seed,
            "train.epochs": args.epochs,
            "train.batch_size": args.batch,
            "train.max_steps": args.max_steps,
            "data.cache": True if args.cache else None,
        },
    )
    out = Path(args.out)
    dataset = PairedDataset.discover(args.data)
    train, test = split_dataset(dataset, config.data.split_ratio, config.data.split_seed)
    net = init_params(config.network, config.train.seed)
    extractor = None
    if config.loss.use_vgg and config.loss.vgg_weights:
        extractor = FeatureExtractor.load(config.loss.vgg_weights, config.loss.vgg_layers)

    trainer = Trainer(net, train, test, config, out_dir=out, extractor=extractor, progress=args.progress)
    if args.resume:
        trainer.resume(args.resume)
    result = trainer.run()
    dump_run_config(config, out / "config.json")

    outputs = [str(p) for p in result.checkpoints]
    if result.final_checkpoint is not None:
        outputs.append(str(result.final_checkpoint))
    outputs.append(str(out / "epochs.csv"))
    write_manifest(
        _manifest(
            "train",
            config,
            seeds={"train": config.train.seed, "split": config.data.split_seed},
            dataset_root=str(dataset.root),
            timing={"elapsed_s": result.elapsed_s},
            outputs=outputs,
            notes={"train_pairs": len(train), "test_pairs": len(test), "steps": len(result.step_losses)},
        ),
        out,
    )
    print(f"trained {len(result.epochs)} epochs, {len(result.step_losses)} steps -> {result.final_checkpoint}")
    return EXIT_OK


def cmd_enhance(args: argparse.Namespace) -> int:
    config = _load_config(args)
    net = load_weights(args.weights, config.network)
    source = Path(args.input)
    paths = _image_paths(source)
    out = Path(args.out)
    single_file = _writes_single_file(source, out)
    out_dir = out.parent if single_file else out

    def process(path: Path) -> float:
        started = time.perf_counter()
        img = load_image(path)
        if args.resize:
            img = resize_bilinear(img, args.resize, args.resize)
        enhanced = enhance_image(net, img)
        elapsed = (time.perf_counter() - started) * 1000.0
        save_image(enhanced, out if single_file else out_dir / path.name)
        return elapsed

    timings: List[float] = []
    failures: List[str] = []
    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        futures = [(path, pool.submit(process, path)) for path in paths]
        for path, future in tqdm(futures, desc="enhance", disable=not args.progress):
            try:
                timings.append(future.result())
            except LU2NetError as e:
                logger.error(f"Skipping {path}: {e}")
                failures.append(path.name)

    timing = _timing(timings)
    meets_target = bool(timing) and timing["fps"] >= args.target_fps
    write_manifest(
        _manifest(
            "enhance",
            config,
            timing=timing,
            outputs=[str(out if single_file else out_dir / p.name) for p in paths if p.name not in failures],
            notes={
                "frames": len(paths),
                "failed": failures,
                "target_fps": args.target_fps,
                "meets_target_fps": meets_target,
                "workers": args.workers,
            },
        ),
        out_dir,
    )
    print(f"enhanced {len(timings)}/{len(paths)} images" + (f", mean {timing['mean_ms']:.1f} ms" if timing else ""))
    return EXIT_FAILURE if failures else EXIT_OK


def _eval_frames(args: argparse.Namespace, config: RunConfig) -> int:
    net = load_weights(args.weights, config.network) if args.weights else None
    rows = []
    for path in tqdm(_image_paths(Path(args.frames)), desc="frames", disable=not args.progress):
        img = load_image(path)
        if net is not None:
            img = enhance_image(net, img)
        rows.append({"image_id": path.name, "uciqe": uciqe(img, args.saturation)})
    frame = pd.DataFrame(rows, columns=["image_id", "uciqe"])
    mean = float(frame["uciqe"].mean()) if rows else float("nan")
    frame.loc[len(frame)] = {"image_id": "mean", "uciqe": mean}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out / "uciqe.csv", index=False, float_format="%.6f")
    write_manifest(
        _manifest("eval", config, outputs=[str(out / "uciqe.csv")],
                  notes={"mode": "no-reference", "frames": len(rows), "mean_uciqe": mean}),
        out,
    )
    print(f"uciqe mean {mean:.4f} over {len(rows)} frames")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = _load_config(args)
    if args.frames:
        return _eval_frames(args, config)
    dataset = PairedDataset.discover(args.data)
    train, test = split_dataset(dataset, config.data.split_ratio, config.data.split_seed)
    chosen = {"train": train, "test": test, "all": Split("all", dataset.pairs)}[args.split]
    size = config.data.image_size if args.resize is None else (args.resize or None)
    loader = PairLoader(size)
    net = load_weights(args.weights, config.network) if args.predictor == "network" else None

    items = []
    for pair in tqdm(chosen.pairs, desc="eval", disable=not args.progress):
        degraded, reference = loader.images(pair)
        if args.predictor == "network":
            prediction = enhance_image(net, degraded)
        elif args.predictor == "identity":
            prediction = degraded
        else:
            prediction = reference
        items.append((pair.name, prediction, reference))

    records, summary = evaluate_pairs(items, config.loss, args.saturation, args.workers)
    out = Path(args.out)
    csv_path = write_metrics_csv(records, out / "metrics.csv")
    write_manifest(
        _manifest(
            "eval",
            config,
            seeds={"split": config.data.split_seed},
            dataset_root=str(dataset.root),
            outputs=[str(csv_path)],
            notes={"split": args.split, "predictor": args.predictor, "images": len(records), **summary},
        ),
        out,
    )
    print(f"{args.split} ({len(records)} images): psnr {summary['psnr']:.3f} dB, "
          f"ssim {summary['ssim']:.4f}, uciqe {summary['uciqe']:.4f}")
    return EXIT_OK


def _time_forward(net: Network, batch: Tensor, threads: int, warmup: int, iters: int) -> Tuple[List[float], np.ndarray]:
    set_num_threads(threads)
    timings: List[float] = []
    with no_grad():
        out = None
        for _ in range(warmup):
            net.forward(batch)
        for _ in range(iters):
            started = time.perf_counter()
            out = net.forward(batch)
            timings.append((time.perf_counter() - started) * 1000.0)
    return timings, out.data


def cmd_bench(args: argparse.Namespace) -> int:
    config = _load_config(args)
    net = _network(args, config)
    height, width = args.shape
    rng = np.random.default_rng(args.seed)
    batch = Tensor(rng.uniform(-1.0, 1.0, size=(1, 3, height, width)).astype(net.dtype))
    previous = get_num_threads()
    try:
        timings, out = _time_forward(net, batch, args.threads, args.warmup, args.iters)
        stats = _timing(timings)
        flops = count_flops(net, height, width)
        report = BenchReport(
            height=height, width=width, threads=args.threads, iters=args.iters, warmup=args.warmup,
            mean_ms=stats["mean_ms"], p50_ms=stats["p50_ms"], p95_ms=stats["p95_ms"], fps=stats["fps"],
            params=count_params(net), macs=flops.macs, flops_1op=flops.flops_1op, flops_2op=flops.flops_2op,
            hardware=hardware_description(),
        )
        if args.compare_threads:
            other, other_out = _time_forward(net, batch, args.compare_threads, args.warmup, args.iters)
            report.max_abs_diff = float(np.max(np.abs(out - other_out)))
            report.speedup = stats["mean_ms"] / _timing(other)["mean_ms"]
            logger.info(
                f"{args.threads} vs {args.compare_threads} threads: speedup {report.speedup:.2f}x, "
                f"max |diff| {report.max_abs_diff:.3g}"
            )
    finally:
        set_num_threads(previous)

    out_dir = Path(args.out) if args.out else Path(settings.runs_dir) / "bench"
    write_manifest(
        _manifest("bench", config, seeds={"input": args.seed}, timing=stats, notes=report.model_dump()),
        out_dir,
    )
    print(report.model_dump_json(indent=2))
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    config = _load_config(args)
    net = _network(args, config)
    height, width = args.shape
    rows = net.layer_table(height, width)
    flops = count_flops(net, height, width)
    total_params = count_params(net)

    print(f"{'layer':<14} {'params':>10} {'MACs':>16}  shapes")
    for row in rows:
        shapes = " ".join("x".join(str(d) for d in shape) for shape in row.shapes)
        print(f"{row.name:<14} {row.params:>10,} {row.macs:>16,}  {shapes}")
    print(f"{'total':<14} {total_params:>10,} {flops.macs:>16,}")
    print(f"FLOPs at {height}x{width}: {flops.flops_1op / 1e9:.3f}G (1 op/MAC), {flops.flops_2op / 1e9:.3f}G (2 ops/MAC)")
    print(f"reference budget: {REFERENCE_PARAMS / 1e3:.0f}K params ({total_params / REFERENCE_PARAMS:.2f}x), "
          f"{REFERENCE_FLOPS / 1e9:.1f}G FLOPs ({flops.flops_2op / REFERENCE_FLOPS:.2f}x)")
    if args.out:
        write_manifest(
            _manifest(
                "inspect",
                config,
                notes={
                    "params": total_params,
                    "macs": flops.macs,
                    "flops_1op": flops.flops_1op,
                    "flops_2op": flops.flops_2op,
                    "layers": [row.model_dump() for row in rows],
                },
            ),
            Path(args.out),
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config (.ini sections or dumped .json)")
    common.add_argument("--threads", type=int, default=settings.num_threads, help="intra-op threads")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--progress", action="store_true", help="show progress bars")

    parser = argparse.ArgumentParser(prog="lu2net", description="Lightweight underwater image enhancement")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", parents=[common], help="train on a paired dataset")
    train.add_argument("--data", required=True)
    train.add_argument("--out", default=str(Path(settings.runs_dir) / "train"))
    train.add_argument("--epochs", type=int)
    train.add_argument("--batch", type=int)
    train.add_argument("--max-steps", type=int)
    train.add_argument("--resume", help="training checkpoint to continue from")
    train.add_argument("--cache", action="store_true", help="keep decoded pairs in memory between epochs")
    train.set_defaults(handler=cmd_train)

    enhance = commands.add_parser("enhance", parents=[common], help="enhance an image or a frame directory")
    enhance.add_argument("--weights", required=True)
    enhance.add_argument("--in", dest="input", required=True)
    enhance.add_argument("--out", required=True)
    enhance.add_argument("--resize", type=int, default=None)
    enhance.add_argument("--workers", type=int, default=1)
    enhance.add_argument("--target-fps", type=float, default=30.0)
    enhance.set_defaults(handler=cmd_enhance)

    evaluate = commands.add_parser("eval", parents=[common], help="PSNR/SSIM/UCIQE over a split")
    evaluate.add_argument("--weights")
    evaluate.add_argument("--data")
    evaluate.add_argument("--split", choices=("train", "test", "all"), default="test")
    evaluate.add_argument("--predictor", choices=("network", "identity", "reference"), default="network")
    evaluate.add_argument("--frames", help="no-reference mode: UCIQE over a frame directory")
    evaluate.add_argument("--saturation", choices=("cl2", "c_over_l"), default="cl2")
    evaluate.add_argument("--resize", type=int, default=None, help="0 keeps native size")
    evaluate.add_argument("--workers", type=int, default=1)
    evaluate.add_argument("--out", default=str(Path(settings.runs_dir) / "eval"))
    evaluate.set_defaults(handler=cmd_eval)

    bench = commands.add_parser("bench", parents=[common], help="forward-pass throughput")
    bench.add_argument("--weights")
    bench.add_argument("--shape", type=parse_shape, default=(256, 256))
    bench.add_argument("--iters", type=int, default=20)
    bench.add_argument("--warmup", type=int, default=10)
    bench.add_argument("--compare-threads", type=int, default=None)
    bench.add_argument("--out")
    bench.set_defaults(handler=cmd_bench)

    inspect = commands.add_parser("inspect", parents=[common], help="per-layer parameter and FLOP table")
    inspect.add_argument("--weights")
    inspect.add_argument("--shape", type=parse_shape, default=(256, 256))
    inspect.add_argument("--out")
    inspect.set_defaults(handler=cmd_inspect)
    return parser


def _validate(parser: argparse.ArgumentParser, args: argparse.Namespace) -> None:
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    if args.command == "eval":
        if not args.frames and not args.data:
            parser.error("eval needs --data (or --frames for no-reference scoring)")
        if not args.frames and args.predictor == "network" and not args.weights:
            parser.error("--predictor network needs --weights")
    if args.command in ("enhance", "eval") and args.workers < 1:
        parser.error("--workers must be >= 1")
    if args.command == "enhance" and _overwrites_input(Path(args.input), Path(args.out)):
        parser.error("--out would overwrite the input images")
    if args.command == "bench":
        if args.iters < 1 or args.warmup < 0:
            parser.error("--iters must be >= 1 and --warmup >= 0")
        if args.compare_threads is not None and args.compare_threads < 1:
            parser.error("--compare-threads must be >= 1")
    if args.seed is None:
        args.seed = 0 if args.command != "train" else None


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _validate(parser, args)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    logging.basicConfig(level=settings.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    previous = get_num_threads()
    set_num_threads(args.threads)
    try:
        return args.handler(args)
    except LU2NetError as e:
        logger.error(f"❌ {args.command} failed: {e}")
        return EXIT_FAILURE
    except OSError as e:
        logger.error(f"❌ {args.command} failed: {e}")
        return EXIT_FAILURE
    finally:
        set_num_threads(previous)
