import numpy as np
import pandas as pd
import pytest

from src.data.dataset import PairedDataset, PairLoader, Split, split_dataset
from src.errors import ConfigError, TrainingHaltedError
from src.model.checkpoint import read_tensors, save_weights
from src.model.network import init_params
from src.schemas import DataConfig, NetworkConfig, RunConfig, TrainConfig
from src.services.metrics import psnr
from src.worker.trainer import EPOCH_CSV, EPOCH_KEY, FINAL_CHECKPOINT, Trainer, epoch_seed
from tests.factories import TINY_NETWORK, write_pair_dataset

# one full batch of 8 pairs per epoch, so epochs equal optimizer steps
OVERFIT_STEPS = 200
OVERFIT_LR0 = 0.003


def run_config(**train) -> RunConfig:
    defaults = dict(epochs=2, batch_size=2, checkpoint_every=0, eval_every=1, seed=3)
    defaults.update(train)
    return RunConfig(network=TINY_NETWORK, train=TrainConfig(**defaults), data=DataConfig(image_size=16))


@pytest.fixture
def splits(tmp_path_factory):
    root = write_pair_dataset(tmp_path_factory.mktemp("pairs"), 5, 16, seed=11)
    return split_dataset(PairedDataset.discover(root), 0.8, seed=0)


def make_trainer(splits, config, out_dir=None, seed=0):
    train, test = splits
    return Trainer(init_params(config.network, seed), train, test, config, out_dir)


class TestTrainer:
    def test_zero_epochs_leaves_network_untouched(self, splits, tmp_path):
        config = run_config(epochs=0)
        trainer = make_trainer(splits, config, tmp_path)
        before = {name: array.copy() for name, array in trainer.net.state().items()}
        result = trainer.run()
        assert result.epochs == []
        assert result.step_losses == []
        for name, array in result.net.state().items():
            np.testing.assert_array_equal(array, before[name])
        assert (tmp_path / FINAL_CHECKPOINT).exists()

    def test_runs_are_reproducible(self, splits, tmp_path):
        first = make_trainer(splits, run_config(), tmp_path / "a").run()
        second = make_trainer(splits, run_config(), tmp_path / "b").run()
        assert first.step_losses == second.step_losses
        assert first.final_checkpoint.read_bytes() == second.final_checkpoint.read_bytes()

    def test_resume_matches_unbroken_run(self, splits, tmp_path):
        make_trainer(splits, run_config(epochs=1), tmp_path / "first").run()
        resumed = make_trainer(splits, run_config(epochs=2), tmp_path / "resumed", seed=99)
        assert resumed.resume(tmp_path / "first" / FINAL_CHECKPOINT) == 1
        resumed_result = resumed.run()
        unbroken = make_trainer(splits, run_config(epochs=2), tmp_path / "unbroken").run()

        assert [record.epoch for record in resumed_result.epochs] == [1]
        assert resumed.state.t == 4
        for name, array in unbroken.net.state().items():
            np.testing.assert_array_equal(resumed_result.net.state()[name], array)

    def test_resume_needs_training_checkpoint(self, splits, tmp_path):
        trainer = make_trainer(splits, run_config())
        path = save_weights(trainer.net, tmp_path / "weights.lu2n")
        with pytest.raises(ConfigError, match=EPOCH_KEY):
            trainer.resume(path)

    def test_epoch_log_and_checkpoints(self, splits, tmp_path):
        result = make_trainer(splits, run_config(checkpoint_every=1), tmp_path).run()
        frame = pd.read_csv(tmp_path / EPOCH_CSV)
        assert list(frame["epoch"]) == [0, 1]
        assert frame["test_psnr"].notna().all()
        assert [path.name for path in result.checkpoints] == ["epoch_0000.lu2n", "epoch_0001.lu2n"]
        assert float(read_tensors(result.final_checkpoint)[EPOCH_KEY]) == 1.0
        assert len(result.step_losses) == 4

    def test_max_steps(self, splits):
        trainer = make_trainer(splits, run_config(epochs=5, max_steps=3))
        result = trainer.run()
        assert trainer.state.t == 3
        assert len(result.step_losses) == 3

    def test_non_finite_loss_halts(self, splits):
        trainer = make_trainer(splits, run_config())
        trainer.net.params["head.bias"].data[:] = np.nan
        with pytest.raises(TrainingHaltedError):
            trainer.run()
        assert trainer.state.t == 0

    def test_evaluate_without_test_split(self, splits):
        train, _ = splits
        trainer = Trainer(init_params(TINY_NETWORK, 0), train, None, run_config())
        assert trainer.evaluate() == (None, None)

    def test_pairs_are_not_cached_by_default(self, splits):
        trainer = make_trainer(splits, run_config())
        trainer.run()
        assert trainer.loader.cached_pairs == 0

    def test_cache_holds_train_and_test_pairs(self, splits):
        config = run_config().model_copy(update={"data": DataConfig(image_size=16, cache=True)})
        trainer = make_trainer(splits, config)
        trainer.run()
        assert trainer.loader.cached_pairs == 5

    def test_empty_train_split(self, splits):
        with pytest.raises(ConfigError):
            Trainer(init_params(TINY_NETWORK, 0), Split("train", []), None, run_config())


def test_epoch_seed_depends_on_both_inputs():
    assert epoch_seed(0, 1) == epoch_seed(0, 1)
    assert len({epoch_seed(0, 1), epoch_seed(0, 2), epoch_seed(1, 1)}) == 3


@pytest.mark.slow
def test_overfits_a_color_cast(tmp_path):
    root = write_pair_dataset(tmp_path, 8, 64, seed=5)
    pairs = PairedDataset.discover(root).pairs
    config = RunConfig(
        network=NetworkConfig(stage_widths=[8, 16]),
        train=TrainConfig(epochs=OVERFIT_STEPS, batch_size=8, lr0=OVERFIT_LR0, checkpoint_every=0, eval_every=0),
        data=DataConfig(image_size=64),
    )
    trainer = Trainer(init_params(config.network, 0), Split("train", pairs), None, config)
    loader = PairLoader(64)
    baseline = float(np.mean([psnr(*loader.images(pair)) for pair in pairs]))

    result = trainer.run()
    trained, _ = trainer.evaluate(trainer.train_split)

    assert len(result.step_losses) == OVERFIT_STEPS
    assert trained >= baseline + 3.0
    assert result.step_losses[OVERFIT_STEPS - 1] <= 0.5 * result.step_losses[9]
