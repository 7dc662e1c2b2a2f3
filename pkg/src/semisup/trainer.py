"""Semi-supervised training loop: supervised CE, proxy-label CE and triplet MI.

Per step the total objective is ``L_ce_l + L_ce_u + alpha * L_tmi`` where
proxy labels for ``L_ce_u`` come from weak unlabeled views (template
matching or a confidence threshold) and are applied to strong views.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import metrics
from .augment import ORIGINAL, STRONG, WEAK, AugmentPolicy, ViewMaker
from .data import Dataset, Split, UnlabeledSet
from .dtm import IGNORE, FeaturePool, assign_proxies, pool_capacity
from .memory_bank import MemoryBank, capacity
from .mi import single_pair_mi_loss, triplet_mi_loss
from .model import EmaState, MLP, ModelConfig, embed_eval, fit_normalization

log = logging.getLogger(__name__)

GUESSERS = ("dtm", "confidence", "none")

# augmentation stream tags
_LABELED, _UNLABELED, _HARVEST, _WARMUP = 1, 2, 3, 4


@dataclass
class TrainConfig:
    alpha: float = 0.1
    tau: float = 0.85
    lr: float = 0.03
    lr_schedule: str = "constant"  # constant | cosine
    batch_size: int = 8
    mu: int = 7
    epochs: int = 10
    steps_per_epoch: int | None = None  # default: one pass over the unlabeled set
    tmi_onset: int = 5
    ema_decay: float = 0.999
    seed: int = 0
    guesser: str = "dtm"
    confidence_threshold: float = 0.95
    # "valid": masked mean over non-ignored proxies; "labeled": divide by the labeled batch size
    unlabeled_ce_norm: str = "valid"
    symmetrize: bool = True
    harvest_to_pool: bool = True
    harvest_to_ce: bool = False
    pool_capacity: int | None = None  # default 5 * labels per class
    bank_k: int | None = None  # default floor(|X_l| / C) * 2
    supervised_only: bool = False  # forward only labeled strong views
    # model
    hidden: list[int] = field(default_factory=lambda: [256])
    feature_dim: int = 128
    features_after_relu: bool = True
    normalize_inputs: bool = True
    # augmentation
    strong_magnitude: float = 10.0
    strong_ops: int = 2
    cutout: float = 0.5
    shift: float = 0.125
    strong_includes_weak: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if self.mu < 1:
            raise ValueError("mu must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ValueError("ema_decay must lie in [0, 1]")
        if self.guesser not in GUESSERS:
            raise ValueError(f"guesser must be one of {GUESSERS}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError("lr_schedule must be constant or cosine")
        if self.unlabeled_ce_norm not in ("valid", "labeled"):
            raise ValueError("unlabeled_ce_norm must be valid or labeled")
        if not 0.0 < self.confidence_threshold <= 1.0:
            raise ValueError("confidence_threshold must lie in (0, 1]")

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


def _training_payloads(labeled: Dataset, unlabeled: UnlabeledSet) -> np.ndarray:
    if len(unlabeled) == 0:
        return labeled.X
    return np.concatenate([labeled.X, unlabeled.X])


def _strong_policy(cfg: TrainConfig) -> AugmentPolicy:
    return AugmentPolicy(
        kind="strong",
        magnitude=cfg.strong_magnitude,
        n_ops=cfg.strong_ops,
        cutout=cfg.cutout,
        shift=cfg.shift,
        pre_weak=cfg.strong_includes_weak,
    )


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def one_hot(labels, n_classes: int) -> np.ndarray:
    """Rows of zeros for ignored (-1) labels."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), n_classes))
    ok = labels >= 0
    out[np.flatnonzero(ok), labels[ok]] = 1.0
    return out


def cross_entropy(probs: ad.Tensor, labels, denominator: int | None = None) -> ad.Tensor | None:
    """sum over non-ignored rows of -log p[label], divided by ``denominator``.

    ``denominator`` defaults to the number of non-ignored rows.  Returns None
    when every label is ignored: those rows contribute nothing, not even a
    graph node.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n_valid = int((labels >= 0).sum())
    if n_valid == 0:
        return None
    target = ad.Tensor(one_hot(labels, probs.shape[1]))
    nll = ad.total(ad.mul(target, ad.log(probs)))
    return ad.scale(nll, -1.0 / (denominator or n_valid))


def assign_by_confidence(probs, threshold: float) -> np.ndarray:
    """argmax class where the max probability reaches ``threshold``, else -1."""
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    best = p.argmax(axis=1)
    return np.where(p[np.arange(len(p)), best] >= threshold, best, IGNORE)


@dataclass
class StepLosses:
    ce_l: float
    ce_u: float
    tmi: float
    total: float
    n_valid: int


def objective(
    probs_ls: ad.Tensor,
    labels: np.ndarray,
    probs_us: ad.Tensor | None,
    proxies: np.ndarray | None,
    views: tuple[ad.Tensor, ad.Tensor, ad.Tensor] | None,
    alpha: float,
    unlabeled_ce_norm: str = "valid",
    symmetrize: bool = True,
):
    """Total loss graph and its three parts (parts are None when inactive)."""
    ce_l = cross_entropy(probs_ls, labels)
    if ce_l is None:
        raise ValueError("labeled batch has no valid labels")
    ce_u = None
    if probs_us is not None and proxies is not None:
        denom = len(labels) if unlabeled_ce_norm == "labeled" else None
        ce_u = cross_entropy(probs_us, proxies, denom)
    tmi = None
    if views is not None and alpha > 0:
        tmi = triplet_mi_loss(*views, symmetrize=symmetrize)
    terms = [(1.0, ce_l)]
    if ce_u is not None:
        terms.append((1.0, ce_u))
    if tmi is not None:
        terms.append((alpha, tmi))
    return ad.combine(terms), ce_l, ce_u, tmi


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

REPORT_COLUMNS = (
    "epoch",
    "loss_ce_l",
    "loss_ce_u",
    "loss_tmi",
    "loss_total",
    "test_acc",
    "coverage",
    "precision_all",
    "precision_valid",
    "batch_hash",
)


@dataclass
class EpochRecord:
    epoch: int
    loss_ce_l: float
    loss_ce_u: float
    loss_tmi: float
    loss_total: float
    test_acc: float
    coverage: float
    precision_all: float
    precision_valid: float
    batch_hash: str


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


@dataclass
class TrainReport:
    records: list[EpochRecord] = field(default_factory=list)
    final_ema_accuracy: float = float("nan")
    step_losses: list[float] = field(default_factory=list)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.records:
            w.writerow([_fmt(getattr(r, c)) for c in REPORT_COLUMNS])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def summary(self) -> dict:
        last = self.records[-1] if self.records else None
        return {
            "epochs": len(self.records),
            "final_ema_accuracy": self.final_ema_accuracy,
            "final": asdict(last) if last else None,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.summary(), indent=2, sort_keys=True, allow_nan=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------


class Trainer:
    """Owns model, EMA shadow, feature pool and memory bank for one run."""

    def __init__(self, config: TrainConfig, split: Split):
        config.validate()
        self.config = config
        self.labeled: Dataset = split.labeled
        self.unlabeled: UnlabeledSet = split.unlabeled
        self.test: Dataset = split.test
        # truth of X_u is consulted only by the epoch-end metrics
        self._unlabeled_truth = dict(zip(split.unlabeled.ids.tolist(), np.asarray(split.unlabeled_truth).tolist()))
        if len(self.labeled) == 0:
            raise ValueError("labeled set is empty")
        shared = np.intersect1d(self.labeled.ids, self.test.ids)
        if shared.size:
            raise ValueError("labeled and test sets share sample ids")
        C = self.labeled.n_classes
        self.n_classes = C
        self.model = MLP(
            ModelConfig(
                input_dim=self.labeled.input_dim,
                n_classes=C,
                hidden=list(config.hidden),
                feature_dim=config.feature_dim,
                seed=config.seed,
                features_after_relu=config.features_after_relu,
            )
        )
        if config.normalize_inputs:
            self.model.set_normalization(*fit_normalization(_training_payloads(self.labeled, self.unlabeled)))
        self.ema = EmaState(self.model, config.ema_decay)
        per_class = max(1, int(np.bincount(self.labeled.y, minlength=C).min()))
        self.pool = FeaturePool(C, config.feature_dim, config.pool_capacity or pool_capacity(per_class))
        k = config.bank_k if config.bank_k is not None else capacity(len(self.labeled), C)
        self.bank = MemoryBank(C, k)
        self.harvested: list[tuple[int, int]] = []
        self.views = ViewMaker(
            config.seed,
            AugmentPolicy(kind="weak", shift=config.shift),
            _strong_policy(config),
        )
        self.rng_labeled = np.random.default_rng([config.seed, _LABELED])
        self.rng_unlabeled = np.random.default_rng([config.seed, _UNLABELED])
        self.rng_harvest = np.random.default_rng([config.seed, _HARVEST])
        self._labeled_queue: list[int] = []
        self._harvest_queue: list[int] = []
        self.epoch = 0
        self.step = 0
        self._u_index = {int(i): k for k, i in enumerate(self.unlabeled.ids)}
        self._step_losses: list[float] = []

    # -- scheduling ----------------------------------------------------
    @property
    def unlabeled_batch(self) -> int:
        return self.config.batch_size * self.config.mu

    @property
    def steps_per_epoch(self) -> int:
        if self.config.steps_per_epoch:
            return self.config.steps_per_epoch
        return max(1, math.ceil(len(self.unlabeled) / self.unlabeled_batch))

    def lr_at(self, step: int) -> float:
        if self.config.lr_schedule == "constant":
            return self.config.lr
        total = max(1, self.config.epochs * self.steps_per_epoch)
        return self.config.lr * math.cos(7 * math.pi * step / (16 * total))

    def _next_labeled(self, n: int) -> np.ndarray:
        out = []
        while len(out) < n:
            if not self._labeled_queue:
                self._labeled_queue = self.rng_labeled.permutation(len(self.labeled)).tolist()
            out.append(self._labeled_queue.pop())
        return np.asarray(out, dtype=np.int64)

    def _next_harvest(self, n: int) -> list[tuple[int, int]]:
        if not self.harvested:
            return []
        out = []
        while len(out) < min(n, len(self.harvested)):
            if not self._harvest_queue:
                self._harvest_queue = self.rng_harvest.permutation(len(self.harvested)).tolist()
            out.append(self.harvested[self._harvest_queue.pop()])
        return out

    # -- pool ----------------------------------------------------------
    def warm_pool(self) -> None:
        """One pass over the labeled set pushing weak-view features, so every queue is non-empty."""
        xw = self.views.views(self.labeled.X, self.labeled.ids, WEAK, _WARMUP, self.epoch)
        feats, _ = embed_eval(self.model, xw)
        self.pool.push_many(self.labeled.y, feats)

    # -- one optimization step -----------------------------------------
    def train_step(self, l_idx: np.ndarray, u_idx: np.ndarray | None) -> tuple[StepLosses, np.ndarray | None]:
        cfg = self.config
        if len(l_idx) == 0:
            raise ValueError("empty labeled batch")
        C = self.n_classes
        step = self.step
        Xl, yl, idl = self.labeled.X[l_idx], self.labeled.y[l_idx], self.labeled.ids[l_idx]
        xls = self.views.views(Xl, idl, STRONG, _LABELED, step)
        ad.new_graph()

        if cfg.supervised_only or u_idx is None:
            _, probs = self.model.forward(xls)
            total, ce_l, _, _ = objective(probs, yl, None, None, None, 0.0)
            ad.backward(total)
            self._finish_step()
            return StepLosses(ce_l.item(), 0.0, 0.0, total.item(), 0), None

        Xu, idu = self.unlabeled.X[u_idx], self.unlabeled.ids[u_idx]
        xlw = self.views.views(Xl, idl, WEAK, _LABELED, step)
        xu = self.views.views(Xu, idu, ORIGINAL, _UNLABELED, step)
        xuw = self.views.views(Xu, idu, WEAK, _UNLABELED, step)
        xus = self.views.views(Xu, idu, STRONG, _UNLABELED, step)
        B, U = len(l_idx), len(u_idx)

        # (2) forward: labeled strong + unlabeled triple in one graph, labeled weak without graph
        feats, probs = self.model.forward(np.concatenate([xls, xu, xuw, xus]))
        p_ls = ad.take_rows(probs, np.arange(0, B))
        p_u = ad.take_rows(probs, np.arange(B, B + U))
        p_uw = ad.take_rows(probs, np.arange(B + U, B + 2 * U))
        p_us = ad.take_rows(probs, np.arange(B + 2 * U, B + 3 * U))
        f_uw = feats.values[B + U : B + 2 * U].copy()
        f_lw, _ = embed_eval(self.model, xlw)

        # (3) labeled weak features feed the pool, plus last epoch's harvested samples
        self.pool.push_many(yl, f_lw)
        if cfg.harvest_to_pool:
            extra = self._next_harvest(cfg.batch_size)
            if extra:
                ids = np.array([sid for sid, _ in extra])
                rows = np.array([self._u_index[sid] for sid in ids])
                xh = self.views.views(self.unlabeled.X[rows], ids, WEAK, _HARVEST, step)
                fh, _ = embed_eval(self.model, xh)
                self.pool.push_many([c for _, c in extra], fh)

        # (4) proxies from weak views
        pw = p_uw.values
        if cfg.guesser == "dtm":
            proxies = assign_proxies(self.pool, f_uw, cfg.tau)
        elif cfg.guesser == "confidence":
            proxies = assign_by_confidence(pw, cfg.confidence_threshold)
        else:
            proxies = np.full(U, IGNORE, dtype=np.int64)
        if cfg.harvest_to_ce and self._harvest_map:
            fixed = np.array([self._harvest_map.get(int(i), IGNORE) for i in idu])
            proxies = np.where(proxies == IGNORE, fixed, proxies)

        # (5)-(7) losses, update
        use_tmi = cfg.alpha > 0 and self.epoch >= cfg.tmi_onset
        total, ce_l, ce_u, tmi = objective(
            p_ls,
            yl,
            p_us,
            proxies,
            (p_u, p_uw, p_us) if use_tmi else None,
            cfg.alpha,
            cfg.unlabeled_ce_norm,
            cfg.symmetrize,
        )
        ad.backward(total)
        self._finish_step()
        self.bank.offer_many(idu, pw.argmax(axis=1), pw.max(axis=1))
        losses = StepLosses(
            ce_l.item(),
            ce_u.item() if ce_u is not None else 0.0,
            tmi.item() if tmi is not None else 0.0,
            total.item(),
            int((proxies != IGNORE).sum()),
        )
        return losses, proxies

    @property
    def _harvest_map(self) -> dict[int, int]:
        return dict(self.harvested)

    def _finish_step(self) -> None:
        ad.sgd_step(self.model.params, self.lr_at(self.step))
        self.ema.update(self.model)
        self.step += 1

    # -- epochs ----------------------------------------------------------
    def run_epoch(self) -> EpochRecord:
        cfg = self.config
        if not self.pool.warmed:
            self.warm_pool()
        U = self.unlabeled_batch
        order = self.rng_unlabeled.permutation(len(self.unlabeled)) if len(self.unlabeled) else np.zeros(0, int)
        digest = hashlib.sha256()
        sums = np.zeros(4)
        last_proxy: dict[int, int] = {}
        n = self.steps_per_epoch
        for s in range(n):
            l_idx = self._next_labeled(cfg.batch_size)
            if len(order):
                u_idx = np.take(order, np.arange(s * U, (s + 1) * U), mode="wrap")
            else:
                u_idx = None
            digest.update(self.labeled.ids[l_idx].tobytes())
            if u_idx is not None:
                digest.update(self.unlabeled.ids[u_idx].tobytes())
            losses, proxies = self.train_step(l_idx, None if cfg.supervised_only else u_idx)
            self.report_step(losses)
            sums += [losses.ce_l, losses.ce_u, losses.tmi, losses.total]
            if proxies is not None:
                for sid, p in zip(self.unlabeled.ids[u_idx].tolist(), proxies.tolist()):
                    last_proxy[sid] = p
        means = sums / n

        self.harvested = self.bank.harvest()
        self._harvest_queue = []
        acc = metrics.test_accuracy(self.model, self.ema, self.test.X.reshape(len(self.test), -1), self.test.y) if len(self.test) else float("nan")
        if last_proxy:
            ids = list(last_proxy)
            st = metrics.proxy_stats([last_proxy[i] for i in ids], [self._unlabeled_truth[i] for i in ids])
            cov, pa, pv = st.coverage, st.precision_all, st.precision_valid
        else:
            cov = pa = pv = 0.0
        rec = EpochRecord(self.epoch, *map(float, means), acc, cov, pa, pv, digest.hexdigest()[:16])
        log.info(
            "epoch %d  ce_l %.4f  ce_u %.4f  tmi %.4f  acc %.4f  coverage %.3f  precision %.3f",
            self.epoch, rec.loss_ce_l, rec.loss_ce_u, rec.loss_tmi, acc, cov, pa,
        )
        self.epoch += 1
        return rec

    def report_step(self, losses: StepLosses) -> None:
        self._step_losses.append(losses.total)

    def fit(self, epochs: int | None = None, checkpoint_every: int = 0, checkpoint_dir=None) -> TrainReport:
        epochs = self.config.epochs if epochs is None else epochs
        report = TrainReport()
        self._step_losses = report.step_losses
        for _ in range(epochs):
            report.records.append(self.run_epoch())
            if checkpoint_every and checkpoint_dir and self.epoch % checkpoint_every == 0:
                from .checkpoint import save_checkpoint

                save_checkpoint(self, Path(checkpoint_dir) / f"epoch{self.epoch:04d}.ckpt")
        report.final_ema_accuracy = (
            metrics.test_accuracy(self.model, self.ema, self.test.X.reshape(len(self.test), -1), self.test.y)
            if len(self.test)
            else float("nan")
        )
        return report


def train(config: TrainConfig, split: Split, **kwargs) -> TrainReport:
    return Trainer(config, split).fit(**kwargs)


# ---------------------------------------------------------------------------
# unsupervised comparison
# ---------------------------------------------------------------------------

UNSUP_COLUMNS = ("epoch", "loss", "aligned_acc", "batch_hash")


@dataclass
class UnsupervisedReport:
    loss_kind: str
    losses: list[float] = field(default_factory=list)
    aligned_acc: list[float] = field(default_factory=list)
    hashes: list[str] = field(default_factory=list)
    mapping: list[int] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    @property
    def final_aligned_acc(self) -> float:
        return self.aligned_acc[-1]

    def rows(self):
        for e, (l, a, h) in enumerate(zip(self.losses, self.aligned_acc, self.hashes)):
            yield {"epoch": e, "loss": l, "aligned_acc": a, "batch_hash": h}


def _cluster_predict(model: MLP, ema: EmaState, X: np.ndarray) -> np.ndarray:
    from .model import predict_eval

    return predict_eval(model, ema, X.reshape(len(X), -1)).argmax(axis=1)


def train_unsupervised(config: TrainConfig, split: Split, loss: str = "tmi") -> tuple[UnsupervisedReport, MLP, EmaState]:
    """Pure MI clustering on X_u, then majority-vote alignment on the held-out labeled set.

    ``loss`` is "tmi" (original/weak/strong triplet) or "pair" (original vs
    strong only).  Aligned accuracy is measured on the test split each epoch.
    """
    if loss not in ("tmi", "pair"):
        raise ValueError("loss must be 'tmi' or 'pair'")
    cfg = config
    C = split.labeled.n_classes
    model = MLP(ModelConfig(split.labeled.input_dim, C, list(cfg.hidden), cfg.feature_dim, cfg.seed, cfg.features_after_relu))
    if cfg.normalize_inputs:
        model.set_normalization(*fit_normalization(_training_payloads(split.labeled, split.unlabeled)))
    ema = EmaState(model, cfg.ema_decay)
    views = ViewMaker(
        cfg.seed,
        AugmentPolicy(kind="weak", shift=cfg.shift),
        _strong_policy(cfg),
    )
    rng = np.random.default_rng([cfg.seed, _UNLABELED])
    Xu, ids = split.unlabeled.X, split.unlabeled.ids
    U = cfg.batch_size * cfg.mu
    n_steps = cfg.steps_per_epoch or max(1, math.ceil(len(ids) / U))
    report = UnsupervisedReport(loss)
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(ids))
        digest = hashlib.sha256()
        total = 0.0
        for s in range(n_steps):
            idx = np.take(order, np.arange(s * U, (s + 1) * U), mode="wrap")
            digest.update(ids[idx].tobytes())
            x0 = views.views(Xu[idx], ids[idx], ORIGINAL, _UNLABELED, step)
            xs = views.views(Xu[idx], ids[idx], STRONG, _UNLABELED, step)
            ad.new_graph()
            if loss == "tmi":
                xw = views.views(Xu[idx], ids[idx], WEAK, _UNLABELED, step)
                _, probs = model.forward(np.concatenate([x0, xw, xs]))
                n = len(idx)
                parts = [ad.take_rows(probs, np.arange(k * n, (k + 1) * n)) for k in range(3)]
                L = triplet_mi_loss(*parts, symmetrize=cfg.symmetrize)
            else:
                _, probs = model.forward(np.concatenate([x0, xs]))
                n = len(idx)
                L = single_pair_mi_loss(
                    ad.take_rows(probs, np.arange(n)), ad.take_rows(probs, np.arange(n, 2 * n)), cfg.symmetrize
                )
            ad.backward(L)
            ad.sgd_step(model.params, cfg.lr)
            ema.update(model)
            total += L.item()
            step += 1
        mapping = metrics.align_clusters(_cluster_predict(model, ema, split.labeled.X), split.labeled.y, C, C)
        acc = metrics.aligned_accuracy(_cluster_predict(model, ema, split.test.X), split.test.y, mapping)
        report.losses.append(total / n_steps)
        report.aligned_acc.append(acc)
        report.hashes.append(digest.hexdigest()[:16])
        report.mapping = mapping.tolist()
        log.info("unsupervised[%s] epoch %d  loss %.4f  aligned acc %.4f", loss, epoch, total / n_steps, acc)
    return report, model, ema
