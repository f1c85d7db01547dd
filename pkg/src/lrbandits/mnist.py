"""MNIST-backed pairwise-digit bandit tasks, including IDX file ingestion.

The IDX format is parsed bit-exactly: 4-byte big-endian magic, big-endian
dimension sizes, then raw unsigned bytes. Pixels are scaled to [0, 1]; the
isotropic-Gaussian feature assumption of the synthetic world does not hold
here, so this path is an empirical benchmark only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .environment import rng_from
from .errors import IdxParseError, ParameterError

__all__ = [
    "IMAGE_MAGIC",
    "LABEL_MAGIC",
    "MnistTaskWorld",
    "load_mnist_idx",
    "write_idx_images",
    "write_idx_labels",
    "mnist_round",
    "MnistEnvironment",
]

IMAGE_MAGIC = 0x00000803  # 2051
LABEL_MAGIC = 0x00000801  # 2049
_SIDE = 28
_DIM = _SIDE * _SIDE


@dataclass(eq=False)
class MnistTaskWorld:
    """Digit pools and the 45 ordered task pairs (i, j), i < j.

    ``digit_pools[k]`` is an (n_k, 784) float array of normalized images of
    digit k. Pools may be empty for synthetic fixtures; drawing from an empty
    pool raises at round time.
    """

    digit_pools: list[np.ndarray]
    task_pairs: list[tuple[int, int]]

    @property
    def total_images(self) -> int:
        return sum(len(p) for p in self.digit_pools)


def _read_be32(data: bytes, offset: int, what: str) -> int:
    if offset + 4 > len(data):
        raise IdxParseError(f"truncated file: expected 4-byte {what}", offset)
    return struct.unpack_from(">I", data, offset)[0]


def _load_images(path) -> np.ndarray:
    data = open(path, "rb").read()
    magic = _read_be32(data, 0, "magic")
    if magic != IMAGE_MAGIC:
        raise IdxParseError(f"bad image magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}", 0)
    count = _read_be32(data, 4, "image count")
    rows = _read_be32(data, 8, "row count")
    cols = _read_be32(data, 12, "column count")
    if rows != _SIDE:
        raise IdxParseError(f"unsupported row count {rows}, expected {_SIDE}", 8)
    if cols != _SIDE:
        raise IdxParseError(f"unsupported column count {cols}, expected {_SIDE}", 12)
    expected = 16 + count * _DIM
    if len(data) < expected:
        raise IdxParseError(f"truncated pixel data: file ends before byte {expected}", len(data))
    pixels = np.frombuffer(data, dtype=np.uint8, count=count * _DIM, offset=16)
    return pixels.reshape(count, _DIM).astype(float) / 255.0


def _load_labels(path) -> np.ndarray:
    data = open(path, "rb").read()
    magic = _read_be32(data, 0, "magic")
    if magic != LABEL_MAGIC:
        raise IdxParseError(f"bad label magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}", 0)
    count = _read_be32(data, 4, "label count")
    expected = 8 + count
    if len(data) < expected:
        raise IdxParseError(f"truncated label data: file ends before byte {expected}", len(data))
    labels = np.frombuffer(data, dtype=np.uint8, count=count, offset=8)
    if (labels > 9).any():
        bad = int(np.argmax(labels > 9))
        raise IdxParseError(f"label {labels[bad]} out of range at item {bad}", 8 + bad)
    return labels


def load_mnist_idx(images_path, labels_path) -> MnistTaskWorld:
    """Parse an IDX image/label file pair into per-digit pools.

    Raises IdxParseError (naming the byte offset) on bad magic numbers,
    truncation, or an image/label count mismatch.
    """
    images = _load_images(images_path)
    labels = _load_labels(labels_path)
    if len(images) != len(labels):
        raise IdxParseError(
            f"image count {len(images)} != label count {len(labels)}", 4
        )
    pools = [np.ascontiguousarray(images[labels == k]) for k in range(10)]
    pairs = [(i, j) for i in range(10) for j in range(i + 1, 10)]
    return MnistTaskWorld(digit_pools=pools, task_pairs=pairs)


def write_idx_images(path, images: np.ndarray) -> None:
    """Write uint8 images of shape (n, 28, 28) or (n, 784) in IDX format."""
    images = np.asarray(images, dtype=np.uint8).reshape(-1, _SIDE, _SIDE)
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, len(images), _SIDE, _SIDE))
        f.write(images.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, len(labels)))
        f.write(labels.tobytes())


def mnist_round(world: MnistTaskWorld, task_pair: tuple[int, int], rng):
    """One two-arm round for the task distinguishing digits i < j.

    Draws one random image from each pool; the larger digit's image carries
    expected reward 1 and the smaller's 0, so the oracle arm is always the
    larger digit. Returns (arms, expected_rewards, oracle_index); observation
    noise is the caller's concern.
    """
    i, j = task_pair
    if not 0 <= i < j <= 9:
        raise ParameterError(f"task pair must satisfy 0 <= i < j <= 9, got {task_pair}")
    for digit in (i, j):
        if len(world.digit_pools[digit]) == 0:
            raise ParameterError(f"digit pool {digit} is empty")
    arm_low = world.digit_pools[i][rng.integers(len(world.digit_pools[i]))]
    arm_high = world.digit_pools[j][rng.integers(len(world.digit_pools[j]))]
    arms = np.stack([arm_low, arm_high])
    return arms, np.array([0.0, 1.0]), 1


class MnistEnvironment:
    """Interactive two-arm environment over pairwise-digit tasks.

    Tasks are the first T pairs of ``world.task_pairs``. Image choices and
    reward noise for the whole horizon are pre-drawn so all algorithms see
    identical rounds. There is no planted parameter matrix: ``ground_truth``
    is None and only regret is traceable.
    """

    def __init__(self, world: MnistTaskWorld, N: int, T: int, noise_variance: float = 0.0,
                 seed_seq: np.random.SeedSequence | None = None):
        if not 1 <= T <= len(world.task_pairs):
            raise ParameterError(f"T={T} must be in [1, {len(world.task_pairs)}]")
        if seed_seq is None:
            seed_seq = np.random.SeedSequence(0)
        self.world = world
        self.pairs = world.task_pairs[:T]
        for i, j in self.pairs:
            for digit in (i, j):
                if len(world.digit_pools[digit]) == 0:
                    raise ParameterError(f"digit pool {digit} is empty")
        ss_choice, ss_noise = seed_seq.spawn(2)
        rng = rng_from(ss_choice)
        self._choices = np.stack(
            [
                np.stack(
                    [
                        rng.integers(len(world.digit_pools[i]), size=N),
                        rng.integers(len(world.digit_pools[j]), size=N),
                    ],
                    axis=1,
                )
                for (i, j) in self.pairs
            ],
            axis=1,
        )  # (N, T, 2)
        self._noise = rng_from(ss_noise).standard_normal((N, T)) * np.sqrt(noise_variance)
        self.ground_truth = None
        self.N = N
        self.T = T
        self.K = 2
        self.d = _DIM

    def arm_set(self, n: int, t: int) -> np.ndarray:
        i, j = self.pairs[t]
        ci, cj = self._choices[n, t]
        return np.stack([self.world.digit_pools[i][ci], self.world.digit_pools[j][cj]])

    def expected_rewards(self, n: int, t: int) -> np.ndarray:
        return np.array([0.0, 1.0])

    def observed_reward(self, n: int, t: int, k: int) -> float:
        return float(self.expected_rewards(n, t)[k] + self._noise[n, t])
