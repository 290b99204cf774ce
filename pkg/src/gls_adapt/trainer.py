"""End-to-end training loop with per-epoch weight re-estimation.

One run owns all of its state. Per epoch: the soft confusion accumulator
is reset, B paired batches are drawn with replacement, each batch takes a
single combined SGD step per net (classification descent, adversarial
ascent for the feature extractor via gradient reversal, adversarial
descent for the discriminator), and the post-update predictions feed the
accumulator. At epoch end the constrained least-squares estimate is
blended into the running weights with an exponential moving average.

The estimation bookkeeping runs for every algorithm so that traces are
comparable; only the importance-weighted variants feed the weights into
their losses, and the oracle variants pin them to the true ratios.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import losses, network
from .datagen import Dataset
from .distributions import jsd
from .errors import ConfigInvalid, DimensionMismatch, ZeroSourceClass
from .estimator import ConfusionAccumulator, WeightVector, ema_update, solve_qp, true_weights
from .network import ModelGrads, ModelState

__all__ = [
    "ALGORITHMS",
    "TrainConfig",
    "EpochRecord",
    "TrainTrace",
    "train",
    "evaluate",
    "trace_to_csv",
]

ALGORITHMS = (
    "none",
    "dann",
    "iwdan",
    "iwdan_o",
    "cdan",
    "iwcdan",
    "iwcdan_o",
    "jan",
    "iwjan",
    "iwjan_o",
)

_CONDITIONAL = {"cdan", "iwcdan", "iwcdan_o"}
_KERNEL = {"jan", "iwjan", "iwjan_o"}
_WEIGHTED = {"iwdan", "iwdan_o", "iwcdan", "iwcdan_o", "iwjan", "iwjan_o"}
_ORACLE = {"iwdan_o", "iwcdan_o", "iwjan_o"}


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one run. ``seed`` fixes everything."""

    algorithm: str = "iwdan"
    epochs: int = 30
    batches_per_epoch: int = 25
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    ema_lambda: float = 0.5
    seed: int = 0
    weight_update_period: int = 1
    weight_da_loss: bool = True
    weight_c_loss: bool = True
    feature_dim: int = 32
    g_hidden: tuple = (64,)
    d_hidden: tuple = (32,)
    activation: str = "tanh"
    reversal_coeff: float = 1.0
    lr_decay_factor: float = 1.0
    lr_decay_every: int = 0
    mmd_scales: tuple = (0.5, 1.0, 2.0)

    def validated(self) -> "TrainConfig":
        if self.algorithm not in ALGORITHMS:
            raise ConfigInvalid(f"unknown algorithm {self.algorithm!r}")
        if self.epochs < 1 or self.batches_per_epoch < 1 or self.batch_size < 1:
            raise ConfigInvalid("epochs, batches_per_epoch and batch_size must be >= 1")
        if not 0.0 <= self.ema_lambda <= 1.0:
            raise ConfigInvalid("ema_lambda must lie in [0, 1]")
        if self.weight_update_period < 1:
            raise ConfigInvalid("weight_update_period must be >= 1")
        if self.lr <= 0 or not 0.0 <= self.momentum < 1.0:
            raise ConfigInvalid("need lr > 0 and momentum in [0, 1)")
        if self.lr_decay_factor <= 0 or self.lr_decay_factor > 1:
            raise ConfigInvalid("lr_decay_factor must lie in (0, 1]")
        return self


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    acc_src: float
    acc_tgt: float
    loss_da: float
    loss_c: float
    w: np.ndarray
    w_dist: float
    jsd_label: float


@dataclass
class TrainTrace:
    """One record per completed epoch."""

    records: list = field(default_factory=list)

    def append(self, rec: EpochRecord) -> None:
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def best_target_accuracy(self) -> float:
        return max(r.acc_tgt for r in self.records)

    def best_source_accuracy(self) -> float:
        return max(r.acc_src for r in self.records)

    def final_weights(self) -> np.ndarray:
        return self.records[-1].w


def evaluate(state: ModelState, data: Dataset) -> tuple[float, np.ndarray]:
    """Argmax accuracy and the row-normalized confusion matrix.

    Row y holds the empirical distribution of predictions among samples
    whose true class is y; rows for absent classes are left at zero.
    """
    if data.dim != state.g.in_dim:
        raise DimensionMismatch(f"data dim {data.dim} != model input dim {state.g.in_dim}")
    preds, _ = network.forward(state, data.features, "classify")
    hard = preds.argmax(axis=1)
    acc = float(np.mean(hard == data.labels))
    k = state.k
    conf = np.zeros((k, k))
    np.add.at(conf, (data.labels, hard), 1.0)
    counts = conf.sum(axis=1, keepdims=True)
    np.divide(conf, counts, out=conf, where=counts > 0)
    return acc, conf


def _classification_grads(state, xs, ys, p_source, w_c):
    preds, cache = network.forward(state, xs, "classify")
    if w_c is None:
        loss = losses.cross_entropy_loss(preds, ys)
        gpred = losses.cross_entropy_loss_grads(preds, ys)
    else:
        p_s, w = w_c
        loss = losses.weighted_classification_loss(preds, ys, p_s, w)
        gpred = losses.weighted_classification_loss_grads(preds, ys, p_s, w)
    return loss, network.backward(state, cache, gpred)


def _adversarial_grads_disc(state, xs, ys, xt, w_da, mode):
    d_src, cache_s = network.forward(state, xs, mode)
    d_tgt, cache_t = network.forward(state, xt, mode)
    loss = losses.weighted_da_loss(d_src, d_tgt, ys, w_da)
    g_src, g_tgt = losses.weighted_da_loss_grads(d_src, d_tgt, ys, w_da)
    back_s = network.backward(state, cache_s, g_src[:, None])
    back_t = network.backward(state, cache_t, g_tgt[:, None])
    combined = ModelGrads(
        g=network.add_grads(back_s.g, back_t.g),
        h=network.add_grads(back_s.h, back_t.h),
        d=network.add_grads(back_s.d, back_t.d),
    )
    return loss, combined


def _adversarial_grads_mmd(state, xs, ys, xt, w_da, scales):
    zs, cache_s = network.forward(state, xs, "features")
    zt, cache_t = network.forward(state, xt, "features")
    bw = losses.median_heuristic_bandwidths(zs, zt, scales)
    loss = losses.weighted_mmd_loss(zs, ys, zt, w_da, bw)
    g_zs, g_zt = losses.weighted_mmd_loss_grads(zs, ys, zt, w_da, bw)
    back_s = network.backward(state, cache_s, g_zs)
    back_t = network.backward(state, cache_t, g_zt)
    return loss, ModelGrads(g=network.add_grads(back_s.g, back_t.g))


def train(config: TrainConfig, source: Dataset, target: Dataset, epoch_hook=None):
    """Run the full loop; returns (final ModelState, TrainTrace).

    ``epoch_hook(epoch_index, state, record)``, when given, is called
    after each epoch's record is appended (diagnostics live there).
    """
    config = config.validated()
    if source.dim != target.dim:
        raise DimensionMismatch(f"feature dims differ: {source.dim} vs {target.dim}")
    if source.k != target.k:
        raise DimensionMismatch(f"class counts differ: {source.k} vs {target.k}")
    k = source.k
    algo = config.algorithm
    p_source = source.label_distribution()
    if np.any(p_source.probs == 0):
        raise ZeroSourceClass("every class needs at least one source sample")
    p_target = target.label_distribution()
    w_star = true_weights(p_source, p_target)
    jsd_label = jsd(p_source, p_target)

    rng = np.random.default_rng(config.seed)
    state = network.init_model_state(
        input_dim=source.dim,
        k=k,
        feature_dim=config.feature_dim,
        g_hidden=tuple(config.g_hidden),
        d_hidden=tuple(config.d_hidden),
        activation=config.activation,
        conditional=algo in _CONDITIONAL,
        rng=rng,
    )

    oracle = algo in _ORACLE
    weighted = algo in _WEIGHTED
    disc_mode = "discriminate_outer" if algo in _CONDITIONAL else "discriminate_z"
    ones = WeightVector(np.ones(k))
    w_est = ones  # running moving-average estimate, tracked for every algorithm
    w_model = w_star if oracle else w_est  # what the losses may consume

    acc = ConfusionAccumulator(k)
    trace = TrainTrace()
    lr = config.lr

    for epoch in range(config.epochs):
        if config.lr_decay_every and epoch and epoch % config.lr_decay_every == 0:
            lr *= config.lr_decay_factor
        loss_da_sum = 0.0
        loss_c_sum = 0.0
        for _ in range(config.batches_per_epoch):
            idx_s = rng.integers(0, source.n, size=config.batch_size)
            idx_t = rng.integers(0, target.n, size=config.batch_size)
            xs = source.features[idx_s]
            ys = source.labels[idx_s]
            xt = target.features[idx_t]

            w_da = w_model if (weighted and config.weight_da_loss) else ones
            if weighted and config.weight_c_loss:
                extra = w_model if algo in _KERNEL else None
                w_c = (p_source, extra)
            else:
                w_c = None

            loss_c, grads_c = _classification_grads(state, xs, ys, p_source, w_c)
            if algo == "none":
                loss_da = 0.0
                grads = ModelGrads(g=grads_c.g, h=grads_c.h)
            else:
                if algo in _KERNEL:
                    loss_da, grads_da = _adversarial_grads_mmd(
                        state, xs, ys, xt, w_da, config.mmd_scales
                    )
                else:
                    loss_da, grads_da = _adversarial_grads_disc(
                        state, xs, ys, xt, w_da, disc_mode
                    )
                # reversal: the feature extractor ascends the alignment loss
                theta = network.add_grads(
                    grads_c.g, network.scale_grads(grads_da.g, -config.reversal_coeff)
                )
                grads = ModelGrads(g=theta, h=grads_c.h, d=grads_da.d)
            network.sgd_step(state, grads, lr, config.momentum)
            batch = losses.BatchLosses(l_da=loss_da, l_c=loss_c)
            loss_da_sum += batch.l_da
            loss_c_sum += batch.l_c

            preds_s, _ = network.forward(state, xs, "classify")
            preds_t, _ = network.forward(state, xt, "classify")
            acc.accumulate(preds_s, ys, preds_t)

        if (epoch + 1) % config.weight_update_period == 0:
            c_hat, mu_hat = acc.finalize()
            w_qp = solve_qp(c_hat, mu_hat, p_source)
            w_est = ema_update(w_est, w_qp, config.ema_lambda)
            acc.reset()
            if not oracle:
                w_model = w_est

        w_logged = w_star if oracle else w_est
        acc_src, _ = evaluate(state, source)
        acc_tgt, _ = evaluate(state, target)
        record = EpochRecord(
            epoch=epoch,
            acc_src=acc_src,
            acc_tgt=acc_tgt,
            loss_da=loss_da_sum / config.batches_per_epoch,
            loss_c=loss_c_sum / config.batches_per_epoch,
            w=np.array(w_logged.w),
            w_dist=float(np.linalg.norm(w_logged.w - w_star.w)),
            jsd_label=jsd_label,
        )
        trace.append(record)
        if epoch_hook is not None:
            epoch_hook(epoch, state, record)
    return state, trace


def make_bound_hook(source: Dataset, target: Dataset, sink: list, bins: int = 16, min_count: int = 50):
    """Epoch hook that runs the full inequality suite on both datasets.

    Appends (epoch, BoundReport) pairs to ``sink``. The weighted feature
    divergence is estimated both from binned histograms and from the
    current discriminator's achieved value; the second lands in the
    sufficiency report's components.
    """
    from .diagnostics import bound_suite, discriminator_route_jsd

    p_src = source.label_distribution()
    p_tgt = target.label_distribution()
    w_star = true_weights(p_src, p_tgt)

    def hook(epoch, state, record):
        _, conf_s = evaluate(state, source)
        _, conf_t = evaluate(state, target)
        feats_s, _ = network.forward(state, source.features, "features")
        feats_t, _ = network.forward(state, target.features, "features")
        mode = "discriminate_outer" if state.d.in_dim == state.k * state.feature_dim else "discriminate_z"
        d_src, _ = network.forward(state, source.features, mode)
        d_tgt, _ = network.forward(state, target.features, mode)
        jsd_disc = discriminator_route_jsd(d_src, d_tgt, source.labels, w_star)
        reports = bound_suite(
            conf_src=conf_s,
            conf_tgt=conf_t,
            p_src=p_src,
            p_tgt=p_tgt,
            feats_src=feats_s,
            labels_src=source.labels,
            feats_tgt=feats_t,
            labels_tgt=target.labels,
            w_true=w_star,
            bins=bins,
            min_count=min_count,
            seed=epoch,
            jsd_weighted_disc=jsd_disc,
        )
        sink.extend((epoch, r) for r in reports)

    return hook


def trace_to_csv(trace: TrainTrace, k: int) -> str:
    """epoch,acc_src,acc_tgt,loss_da,loss_c,w_0..w_{k-1},w_dist,jsd_label."""
    header = (
        "epoch,acc_src,acc_tgt,loss_da,loss_c,"
        + ",".join(f"w_{i}" for i in range(k))
        + ",w_dist,jsd_label"
    )
    rows = [header]
    for r in trace.records:
        ws = ",".join(repr(float(v)) for v in r.w)
        rows.append(
            f"{r.epoch},{r.acc_src!r},{r.acc_tgt!r},{r.loss_da!r},{r.loss_c!r},"
            f"{ws},{r.w_dist!r},{r.jsd_label!r}"
        )
    return "\n".join(rows) + "\n"


def config_with(config: TrainConfig, **kwargs) -> TrainConfig:
    """Functional update helper for frozen configs."""
    return replace(config, **kwargs)
