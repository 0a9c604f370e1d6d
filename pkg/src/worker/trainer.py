import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.data.dataset import PairLoader, Split, batches
from src.data.image_io import denormalize
from src.errors import ConfigError, NumericError, TrainingHaltedError
from src.model.checkpoint import read_tensors, save_weights
from src.model.network import Network
from src.schemas import EpochRecord, LossReport, RunConfig
from src.services.losses import FeatureExtractor, total_loss
from src.services.metrics import psnr, ssim_metric
from src.tensor import Tensor, backward, no_grad
from src.worker.optimizer import AdamState, adam_step, clip_global_norm, lr_at

logger = logging.getLogger(__name__)

EPOCH_KEY = "train.epoch"
EPOCH_CSV = "epochs.csv"
FINAL_CHECKPOINT = "final.lu2n"


def epoch_seed(seed: int, epoch: int) -> int:
    """Shuffle seed for one epoch, derived from the run seed alone so resumed runs replay it."""
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


@dataclass
class TrainResult:
    net: Network
    epochs: List[EpochRecord] = field(default_factory=list)
    step_losses: List[float] = field(default_factory=list)
    checkpoints: List[Path] = field(default_factory=list)
    final_checkpoint: Optional[Path] = None
    elapsed_s: float = 0.0


class Trainer:
    """
    Owns a network and its Adam state for the length of a run: epoch loop,
    per-epoch log, periodic checkpoints, resume.
    """

    def __init__(
        self,
        net: Network,
        train_split: Split,
        test_split: Optional[Split],
        config: RunConfig,
        out_dir: Optional[Union[str, Path]] = None,
        loader: Optional[PairLoader] = None,
        extractor: Optional[FeatureExtractor] = None,
        progress: bool = False,
    ):
        if len(train_split) == 0:
            raise ConfigError("training split is empty")
        self.net = net
        self.train_split = train_split
        self.test_split = test_split
        self.config = config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.loader = loader or PairLoader(config.data.image_size, cache=config.data.cache)
        self.extractor = extractor
        self.progress = progress
        self.state = AdamState.zeros(net.params)
        self.start_epoch = 0
        self.last_checkpoint: Optional[Path] = None
        self.is_running = False

    def resume(self, path: Union[str, Path]) -> int:
        """Restore parameters, moments and the epoch counter; returns the next epoch to run."""
        tensors = read_tensors(path)
        if EPOCH_KEY not in tensors:
            raise ConfigError(f"{path} holds no {EPOCH_KEY} tensor; it is not a training checkpoint")
        params = {name: tensors[name] for name in self.net.params if name in tensors}
        if len(params) != len(self.net.params):
            missing = sorted(set(self.net.params) - set(params))
            raise ConfigError(f"{path} lacks parameters {missing[:3]}")
        self.net.load_state(params)
        self.state = AdamState.from_tensors(tensors, self.net.params)
        self.start_epoch = int(tensors[EPOCH_KEY]) + 1
        self.last_checkpoint = Path(path)
        logger.info(f"Resumed from {path}: next epoch {self.start_epoch}, optimizer step {self.state.t}")
        return self.start_epoch

    def stop(self) -> None:
        self.is_running = False

    def step(self, inputs: Tensor, targets: Tensor, lr: float) -> LossReport:
        pred = self.net.forward(inputs)
        report, total = total_loss(pred, targets, self.config.loss, self.extractor)
        if not np.isfinite(total.item()):
            raise TrainingHaltedError(f"non-finite loss at step {self.state.t + 1}", self.last_checkpoint)
        grads = backward(total)
        named = {name: grads.get(p, np.zeros_like(p.data)) for name, p in self.net.params.items()}
        if self.config.train.grad_clip is not None:
            clip_global_norm(named, self.config.train.grad_clip)
        try:
            adam_step(self.net.params, named, self.state, lr, self.config.train)
        except NumericError as e:
            raise TrainingHaltedError(str(e), self.last_checkpoint) from e
        return report

    def evaluate(self, split: Optional[Split] = None) -> Tuple[Optional[float], Optional[float]]:
        """Mean PSNR/SSIM of the network's outputs against ground truth."""
        split = split if split is not None else self.test_split
        if split is None or len(split) == 0:
            return None, None
        psnrs, ssims = [], []
        for pair in split.pairs:
            degraded, target = self.loader.load(pair)
            with no_grad():
                out = self.net.forward(Tensor(degraded[None].astype(self.net.dtype))).data[0]
            enhanced, reference = denormalize(out), denormalize(target)
            psnrs.append(psnr(enhanced, reference))
            ssims.append(ssim_metric(enhanced, reference, self.config.loss))
        return float(np.mean(psnrs)), float(np.mean(ssims))

    def checkpoint(self, epoch: int, path: Path) -> Path:
        extra = self.state.to_tensors()
        extra[EPOCH_KEY] = np.asarray(epoch, dtype=np.float32)
        save_weights(self.net, path, extra)
        self.last_checkpoint = path
        return path

    def _write_log(self, records: List[EpochRecord]) -> None:
        if self.out_dir is None:
            return
        frame = pd.DataFrame([record.model_dump() for record in records], columns=list(EpochRecord.model_fields))
        frame.to_csv(self.out_dir / EPOCH_CSV, index=False)

    def run(self) -> TrainResult:
        cfg = self.config.train
        result = TrainResult(net=self.net)
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        started = time.perf_counter()
        logger.info(
            f"🚀 Training epochs {self.start_epoch}..{cfg.epochs - 1} on {len(self.train_split)} pairs "
            f"(batch {cfg.batch_size}, lr0 {cfg.lr0})"
        )
        self.is_running = True
        epochs = range(self.start_epoch, cfg.epochs)
        for epoch in tqdm(epochs, desc="epochs", disable=not self.progress):
            if not self.is_running or self._steps_exhausted():
                break
            lr = lr_at(epoch, cfg)
            reports: List[LossReport] = []
            for batch in batches(
                self.train_split,
                cfg.batch_size,
                epoch_seed(cfg.seed, epoch),
                self.loader,
                prefetch_depth=self.config.data.prefetch_depth if self.config.data.workers > 1 else 0,
                workers=self.config.data.workers,
            ):
                if self._steps_exhausted():
                    break
                report = self.step(batch.inputs, batch.targets, lr)
                reports.append(report)
                result.step_losses.append(report.total)

            record = self._epoch_record(epoch, lr, reports)
            result.epochs.append(record)
            self._write_log(result.epochs)
            logger.info(
                f"Epoch {epoch}: lr={lr:.6g} total={record.total:.5f} "
                f"psnr={record.test_psnr} ssim={record.test_ssim}"
            )
            if self.out_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                path = self.out_dir / "checkpoints" / f"epoch_{epoch:04d}.lu2n"
                result.checkpoints.append(self.checkpoint(epoch, path))

        self.is_running = False
        if self.out_dir is not None:
            last_epoch = result.epochs[-1].epoch if result.epochs else self.start_epoch - 1
            result.final_checkpoint = self.checkpoint(last_epoch, self.out_dir / FINAL_CHECKPOINT)
        result.elapsed_s = time.perf_counter() - started
        logger.info(f"✅ Training finished: {len(result.step_losses)} steps in {result.elapsed_s:.1f}s")
        return result

    def _steps_exhausted(self) -> bool:
        max_steps = self.config.train.max_steps
        return max_steps is not None and self.state.t >= max_steps

    def _epoch_record(self, epoch: int, lr: float, reports: List[LossReport]) -> EpochRecord:
        means: Dict[str, float] = {}
        for key in ("l_rgb", "l_lab", "l_lch", "l_ssim", "total"):
            values = [getattr(report, key) for report in reports]
            means[key] = float(np.mean(values)) if values else float("nan")
        test_psnr = test_ssim = None
        every = self.config.train.eval_every
        if every and (epoch + 1) % every == 0:
            test_psnr, test_ssim = self.evaluate()
        return EpochRecord(epoch=epoch, lr=lr, test_psnr=test_psnr, test_ssim=test_ssim, **means)
