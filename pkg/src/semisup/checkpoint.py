"""Save and restore a trainer at an epoch boundary.

The file is a container (see ``container``) holding the parameters, the EMA
shadow, input normalization, every feature queue, the memory bank and the
generator states, so a resumed run continues bit-for-bit.
"""

from __future__ import annotations

import numpy as np

from .container import ContainerError, read_container, write_container

CHECKPOINT_MAGIC = b"SSCK"
FORMAT = 1


RNG_NAMES = ("rng_labeled", "rng_unlabeled", "rng_harvest")


def save_checkpoint(trainer, path) -> None:
    arrays: dict[str, np.ndarray] = {}
    for i, p in enumerate(trainer.model.params):
        arrays[f"param{i}"] = p.values
    for i, s in enumerate(trainer.ema.shadow):
        arrays[f"shadow{i}"] = s.values
    arrays["input_mean"] = trainer.model.input_mean
    arrays["input_std"] = trainer.model.input_std
    for c, q in enumerate(trainer.pool.state()["queues"]):
        arrays[f"pool{c}"] = q
    bank = trainer.bank.entries()
    arrays["bank_ids"] = np.array([e[0] for e in bank], dtype=np.int64)
    arrays["bank_classes"] = np.array([e[1] for e in bank], dtype=np.int64)
    arrays["bank_conf"] = np.array([e[2] for e in bank], dtype=np.float64)
    arrays["harvested"] = np.array(trainer.harvested, dtype=np.int64).reshape(-1, 2)
    arrays["labeled_queue"] = np.array(trainer._labeled_queue, dtype=np.int64)
    arrays["harvest_queue"] = np.array(trainer._harvest_queue, dtype=np.int64)
    meta = {
        "format": FORMAT,
        "epoch": trainer.epoch,
        "step": trainer.step,
        "n_params": len(trainer.model.params),
        "n_classes": trainer.n_classes,
        "pool_capacity": trainer.pool.capacity,
        "ema_decay": trainer.ema.decay,
        "rng": {name: getattr(trainer, name).bit_generator.state for name in RNG_NAMES},
    }
    write_container(path, CHECKPOINT_MAGIC, meta, arrays)


def load_checkpoint(trainer, path) -> None:
    """Overwrite ``trainer``'s state with the checkpoint; trainer must share config and split."""
    meta, arrays = read_container(path, CHECKPOINT_MAGIC)
    if meta.get("format") != FORMAT:
        raise ContainerError(f"{path}: unsupported checkpoint format {meta.get('format')}")
    if meta["n_params"] != len(trainer.model.params) or meta["n_classes"] != trainer.n_classes:
        raise ContainerError(f"{path}: checkpoint does not match this model")
    n = meta["n_params"]
    trainer.model.load_state([arrays[f"param{i}"] for i in range(n)])
    for i, s in enumerate(trainer.ema.shadow):
        if s.shape != arrays[f"shadow{i}"].shape:
            raise ContainerError(f"{path}: EMA shadow {i} has the wrong shape")
        s.values = arrays[f"shadow{i}"].copy()
    trainer.ema.decay = float(meta["ema_decay"])
    trainer.model.set_normalization(arrays["input_mean"], arrays["input_std"])

    from .dtm import FeaturePool
    from .memory_bank import MemoryBank

    queues = [arrays[f"pool{c}"] for c in range(trainer.n_classes)]
    trainer.pool = FeaturePool.from_state({"capacity": meta["pool_capacity"], "queues": queues})
    bank = MemoryBank(trainer.n_classes, trainer.bank.k)
    bank.offer_many(arrays["bank_ids"], arrays["bank_classes"], arrays["bank_conf"])
    trainer.bank = bank
    trainer.harvested = [tuple(map(int, row)) for row in arrays["harvested"]]
    trainer._labeled_queue = arrays["labeled_queue"].tolist()
    trainer._harvest_queue = arrays["harvest_queue"].tolist()
    for name, state in meta["rng"].items():
        getattr(trainer, name).bit_generator.state = state
    trainer.epoch = int(meta["epoch"])
    trainer.step = int(meta["step"])
