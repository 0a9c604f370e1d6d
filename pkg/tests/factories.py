from pathlib import Path

import numpy as np

from src.data.image_io import save_image
from src.model.network import Network
from src.schemas import NetworkConfig

TINY_NETWORK = NetworkConfig(stage_widths=[4, 8], axial_k=3, ca_reduction=4)
PASSTHROUGH_NETWORK = NetworkConfig(stage_widths=[4, 4], axial_k=3, ca_reduction=4, output_activation="identity")

TINY_RUN_INI = """\
[network]
stage_widths = 4, 8
axial_k = 3
ca_reduction = 4

[train]
checkpoint_every = 0
eval_every = 1

[data]
image_size = 16
"""

PASSTHROUGH_INI = """\
[network]
stage_widths = 4, 4
axial_k = 3
ca_reduction = 4
output_activation = identity
"""

# blue-green cast: red attenuated most, blue lifted
CAST_GAIN = np.array([0.55, 0.85, 1.0])
CAST_OFFSET = np.array([0.02, 0.08, 0.12])


def passthrough_network(dtype=np.float32) -> Network:
    """
    Hand-set weights whose forward returns its input: the stem routes RGB
    (shifted by +1 so relu keeps it) into the first stage, that stage's skip
    is the only live path through the last decoder, and the head undoes the
    shift. Channel attention gates are pinned near 1 by a large excite bias.
    """
    net = Network(PASSTHROUGH_NETWORK, dtype)
    p = net.params
    for c in range(3):
        p["stem.weight"].data[c, c, 1, 1] = 1.0
        p["refine.weight"].data[c, c, 1, 1] = 1.0
        p["head.weight"].data[c, c] = 1.0
    p["stem.bias"].data[:3] = 1.0
    p["head.bias"].data[:] = -1.0
    p["encoders.0.pointwise.weight"].data[:] = np.eye(4)
    p["encoders.0.ca.excite.bias"].data[:] = 30.0
    width = PASSTHROUGH_NETWORK.stage_widths[0]
    for c in range(width):
        p["decoders.0.pointwise.weight"].data[c, width + c] = 1.0
    p["decoders.0.ca.excite.bias"].data[:] = 30.0
    return net


def random_image(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """8-bit-exact random image in [0,1]."""
    return rng.integers(0, 256, size=(height, width, 3)).astype(np.float32) / np.float32(255.0)


def smooth_image(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    channels = []
    for _ in range(3):
        fx, fy = rng.uniform(0.5, 2.0, size=2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        channels.append(0.5 + 0.3 * np.sin(2.0 * np.pi * (fx * xx + fy * yy) + phase))
    return np.stack(channels, axis=-1)


def degrade(img: np.ndarray) -> np.ndarray:
    return np.clip(img * CAST_GAIN + CAST_OFFSET, 0.0, 1.0)


def write_pair_dataset(root: Path, count: int, size: int, seed: int = 0) -> Path:
    """`input/` and `gt/` PNG pairs: smooth ground truth, color-cast input."""
    rng = np.random.default_rng(seed)
    for i in range(count):
        gt = smooth_image(rng, size)
        save_image(gt, root / "gt" / f"pair_{i:03d}.png")
        save_image(degrade(gt), root / "input" / f"pair_{i:03d}.png")
    return root


def write_ini(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path
