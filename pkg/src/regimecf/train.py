"""Three-stage training curriculum with local/global phase switching.

Stage I pretrains the regime predictor alone (frozen kinematic net) on
label-smoothed cross-entropy. Stage II optimizes both networks jointly
against the unweighted sum of the classification loss and the closed-loop
regression loss; the regime pathway feeds the argmax regime into the
embedding, which blocks gradients, so the classification term shapes the
GRU while the rollout term shapes the kinematic net (rolled kinematic
features are detached at the GRU input to keep that split exact). Stage III
fine-tunes the kinematic net with the GRU frozen: first single-step
(teacher-forced) training, then, once validation single-step acceleration
MSE drops below the switch threshold, closed-loop rollouts trained by
backpropagation through the state propagation with truncated windows.

Rollout losses use each pair's nominal prediction count as normalizer;
steps after a spacing collapse are masked out (truncation) and counted in
diagnostics. Training is deterministic given the seed and data order.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .nn.layers import WINDOW, KinematicPredictor, RegimePredictor
from .nn.losses import label_smoothed_ce, regression_loss, single_step_mse
from .nn.optim import Adam
from .nn.tensor import Tensor, concat, no_grad
from .nn.checkpoint import save_checkpoint
from .pipeline import (
    PairFrames,
    gru_windows,
    kinematic_windows,
    teacher_forced_regimes,
)
from .regimes import one_hot_matrix
from .trajectory import DT

SPACING_FLOOR = 0.1


@dataclass
class CurriculumConfig:
    stage1_epochs: int = 50
    stage2_epochs: int = 50
    stage3_local_epochs: int = 50
    stage3_global_epochs: int = 20
    phase_switch_mse: float = 0.05
    batch_size: int = 128
    lr: float = 1e-3
    betas: tuple = (0.95, 0.9999)
    window: int = WINDOW
    seed: int = 0
    patience_stage1: int = 10
    patience_stage3: int = 15
    bptt_window: int = 50
    label_smoothing: float = 0.1
    dr_source: str = "model"      # "model" | "truth"
    soft_embedding: bool = False
    ce_weight: float = 1.0
    global_weight: float = 1.0
    divergence_factor: float = 10.0
    divergence_patience: int = 5

    def __post_init__(self):
        if self.phase_switch_mse <= 0:
            raise ConfigError("phase_switch_mse must be > 0")
        if self.dr_source not in ("model", "truth"):
            raise ConfigError("dr_source must be 'model' or 'truth'")
        if min(self.stage1_epochs, self.stage2_epochs,
               self.stage3_local_epochs, self.stage3_global_epochs) < 0:
            raise ConfigError("epoch counts must be >= 0")


@dataclass
class RolloutStats:
    ce: float
    reg: float
    total: float
    a_sim: np.ndarray          # (B, Tmax) realized accelerations
    v_sim: np.ndarray
    x_sim: np.ndarray
    dx_sim: np.ndarray
    step_mask: np.ndarray      # (B, Tmax) 1 where step t entered the loss
    nominal_counts: np.ndarray
    n_truncated: int


def _pad_batch(frames_list, getter, Tmax):
    B = len(frames_list)
    out = np.zeros((B, Tmax))
    for b, f in enumerate(frames_list):
        arr = getter(f)
        out[b, :len(arr)] = arr
        out[b, len(arr):] = arr[-1]
    return out


def training_rollout(regime_net, kin_net, frames_list, window=WINDOW,
                     bptt_window=50, dr_source="model", soft_embedding=False,
                     train_gru_ce=False, ce_weight=1.0, global_weight=1.0,
                     backward=True) -> RolloutStats:
    """Closed-loop rollout of a pair batch through the tape.

    Builds the differentiable graph chunk by chunk (states detach at chunk
    edges) and, when backward is set, accumulates parameter gradients for
    the combined loss ce_weight * L_cls + global_weight * L_reg, where the
    regression part is the multi-target loss over realized acceleration,
    speed, and spacing, each normalized by the pair's nominal prediction
    count. Returns the rollout series and loss decomposition.
    """
    N = window
    B = len(frames_list)
    lengths = np.array([len(f) for f in frames_list])
    if np.any(lengths < N + 2):
        raise DataError(f"pairs must exceed the {N}-step warm-up window")
    Tmax = int(lengths.max())
    lead_x = _pad_batch(frames_list, lambda f: f.leader_x, Tmax)
    lead_v = _pad_batch(frames_list, lambda f: f.leader_v, Tmax)
    obs_a = _pad_batch(frames_list, lambda f: f.a, Tmax)
    obs_v = _pad_batch(frames_list, lambda f: f.v, Tmax)
    obs_dd = _pad_batch(frames_list, lambda f: f.dd, Tmax)
    obs_x = _pad_batch(frames_list, lambda f: f.x, Tmax)
    labels = np.zeros((B, Tmax), dtype=int)
    for b, f in enumerate(frames_list):
        labels[b, :lengths[b]] = f.dr
        labels[b, lengths[b]:] = f.dr[-1]

    use_model_dr = kin_net.regime_pathway and dr_source == "model"
    if use_model_dr and regime_net is None:
        raise ConfigError("model regime source requires a regime net")

    # per-pair nominal prediction count: steps N-1 .. T_b-2
    nominal = (lengths - N).astype(float)
    reg_w = global_weight / (B * nominal)          # per-pair step weight
    ce_nominal = np.maximum(lengths - 1 - N, 0).sum()  # GRU steps N .. T_b-2
    ce_w = ce_weight / max(ce_nominal, 1)

    # rolling histories (per-step column tensors) seeded from observation
    dd_hist = [Tensor(obs_dd[:, t].reshape(B, 1)) for t in range(N)]
    dv_hist = [Tensor((lead_v[:, t] - obs_v[:, t]).reshape(B, 1))
               for t in range(N)]
    v_hist = [Tensor(obs_v[:, t].reshape(B, 1)) for t in range(N)]
    dr = labels.copy()

    x_cur = Tensor(obs_x[:, N - 1])
    v_cur = v_hist[N - 1].reshape(-1)
    alive = (np.arange(Tmax)[None, :] < lengths[:, None])
    step_mask = np.zeros((B, Tmax))
    truncated = np.zeros(B, dtype=bool)

    a_sim = obs_a.copy()
    v_sim = obs_v.copy()
    x_sim = obs_x.copy()
    dx_sim = obs_dd.copy()

    ce_value = 0.0
    reg_value = 0.0
    chunk_terms = []
    n_trunc_steps = 0
    # sliding windows share frames; cache built frame tensors per index
    fused_cache = {}
    gru_cache = {}

    def flush_chunk():
        nonlocal chunk_terms, ce_value, reg_value, x_cur, v_cur
        nonlocal dd_hist, dv_hist, v_hist
        if chunk_terms:
            total = chunk_terms[0]
            for term in chunk_terms[1:]:
                total = total + term
            if backward and total.requires_grad:
                total.backward()
        chunk_terms = []
        x_cur = x_cur.detach()
        v_cur = v_cur.detach()
        dd_hist = [t.detach() for t in dd_hist]
        dv_hist = [t.detach() for t in dv_hist]
        v_hist = [t.detach() for t in v_hist]
        # cached fused frames link into the flushed graph; rebuild on demand
        fused_cache.clear()

    def gru_frame(s):
        frame = gru_cache.get(s)
        if frame is None:
            onehot = Tensor(one_hot_matrix(dr[:, s]))
            frame = concat([dd_hist[s].detach(), dv_hist[s].detach(),
                            v_hist[s].detach(), onehot], axis=1)
            gru_cache[s] = frame
        return frame

    def fused_frame(s):
        frame = fused_cache.get(s)
        if frame is None:
            kin = concat([dd_hist[s], dv_hist[s], v_hist[s]], axis=1)
            frame = (kin_net.fuse_frame(kin, dr[:, s])
                     if kin_net.regime_pathway else kin)
            fused_cache[s] = frame
        return frame

    for t in range(N - 1, Tmax - 1):
        live = alive[:, t + 1] & ~truncated
        # regime for frame t; the truth source keeps dr = labels as seeded
        soft_probs = None
        if use_model_dr and t >= N:
            if train_gru_ce:
                probs = regime_net.forward_frames(
                    [gru_frame(s) for s in range(t - N, t)])
                err = label_smoothed_ce_masked(probs, labels[:, t],
                                               live.astype(float))
                chunk_terms.append(err * ce_w)
                ce_value += float(err.data) * ce_w
                dr[:, t] = np.argmax(probs.data, axis=1)
                if soft_embedding:
                    soft_probs = probs
            else:
                with no_grad():
                    probs = regime_net.forward_frames(
                        [gru_frame(s) for s in range(t - N, t)])
                dr[:, t] = np.argmax(probs.data, axis=1)

        window = [fused_frame(s) for s in range(t - N + 1, t + 1)]
        if soft_probs is not None:
            kin_last = concat([dd_hist[t], dv_hist[t], v_hist[t]], axis=1)
            window[-1] = kin_net.fuse_frame(kin_last, soft_probs)
        a_pred = kin_net.forward_fused(window)

        v_next = (v_cur + a_pred * DT).relu_floor(0.0)
        a_eff = (v_next - v_cur) * (1.0 / DT)
        x_next = x_cur + v_cur * DT + a_eff * (0.5 * DT * DT)
        dd_next_data = lead_x[:, t + 1] - x_next.data
        collide = (dd_next_data < SPACING_FLOOR) & live
        if collide.any():
            truncated |= collide
            n_trunc_steps += int(collide.sum())
            # keep states finite: clamp position at the floored spacing
            clamp = Tensor(np.where(collide,
                                    lead_x[:, t + 1] - SPACING_FLOOR, 0.0))
            keep = Tensor(np.where(collide, 0.0, 1.0))
            x_next = x_next * keep + clamp
            v_next = v_next * keep + Tensor(
                np.where(collide, np.maximum(
                    (x_next.data - x_cur.data) / DT, 0.0), 0.0))
            a_eff = (v_next - v_cur) * (1.0 / DT)

        m = (live & ~collide).astype(float)
        step_mask[:, t] = m
        w = Tensor(m * reg_w)
        err_a = a_eff - Tensor(obs_a[:, t])
        err_v = v_next - Tensor(obs_v[:, t + 1])
        dd_next = Tensor(lead_x[:, t + 1]) - x_next
        err_dx = dd_next - Tensor(obs_dd[:, t + 1])
        chunk_terms.append(
            ((err_a * err_a + err_v * err_v + err_dx * err_dx) * w).sum())
        reg_value += float(chunk_terms[-1].data)

        a_sim[:, t] = a_eff.data
        v_sim[:, t + 1] = v_next.data
        x_sim[:, t + 1] = x_next.data
        dx_sim[:, t + 1] = dd_next.data

        dd_hist.append(dd_next.reshape(B, 1))
        dv_hist.append((Tensor(lead_v[:, t + 1]) - v_next).reshape(B, 1))
        v_hist.append(v_next.reshape(B, 1))
        x_cur, v_cur = x_next, v_next
        if (t - (N - 1) + 1) % bptt_window == 0:
            flush_chunk()
    flush_chunk()

    return RolloutStats(
        ce=ce_value, reg=reg_value, total=ce_value + reg_value,
        a_sim=a_sim, v_sim=v_sim, x_sim=x_sim, dx_sim=dx_sim,
        step_mask=step_mask, nominal_counts=nominal,
        n_truncated=int(truncated.sum()))


def label_smoothed_ce_masked(probs, labels, mask):
    """Sum (not mean) of per-sample smoothed CE over masked rows."""
    from .nn.losses import PROB_CLAMP, smoothed_targets

    q = smoothed_targets(labels, probs.shape[-1])
    p = probs.clip(PROB_CLAMP, 1.0 - PROB_CLAMP)
    per = -(Tensor(q) * p.log() + Tensor(1.0 - q) * (1.0 - p).log()).sum(axis=-1)
    return (per * Tensor(mask)).sum()


@dataclass
class TrainLogEntry:
    stage: int
    phase: int
    epoch: int
    train_loss: float
    val_loss: float
    val_cls_acc: float | None
    lr: float
    extra: dict = field(default_factory=dict)


class CurriculumTrainer:
    """Drives the decouple -> coordinate -> refine protocol."""

    def __init__(self, regime_net: RegimePredictor,
                 kin_net: KinematicPredictor, train_frames, val_frames,
                 cfg: CurriculumConfig = CurriculumConfig(), log_path=None,
                 checkpoint_dir=None):
        if not train_frames:
            raise DataError("trainer needs at least one training pair")
        self.regime_net = regime_net
        self.kin_net = kin_net
        self.train_frames = list(train_frames)
        self.val_frames = list(val_frames) if val_frames else []
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.log: list[TrainLogEntry] = []
        self.log_path = log_path
        self.checkpoint_dir = checkpoint_dir
        self.phase_switch_epoch = None
        self.val_mse_history = []
        self._model_dr_cache = None

    # ------------------------------------------------------------------ utils

    def _record(self, entry: TrainLogEntry):
        self.log.append(entry)
        if self.log_path:
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(asdict(entry), sort_keys=True) + "\n")

    def _checkpoint(self, name, optimizers=None):
        if not self.checkpoint_dir:
            return
        os.makedirs(self.checkpoint_dir, exist_ok=True)
        save_checkpoint(
            os.path.join(self.checkpoint_dir, f"{name}.json"),
            {"regime": self.regime_net, "kinematic": self.kin_net},
            optimizers=optimizers, seed=self.cfg.seed)

    def _dr_series(self, frames: PairFrames):
        """Per-frame regimes fed to the kinematic net during local phases."""
        if not self.kin_net.regime_pathway:
            return frames.dr
        if self.cfg.dr_source == "truth":
            return frames.dr
        return teacher_forced_regimes(self.regime_net, frames,
                                      self.cfg.window)

    def _invalidate_dr_cache(self):
        self._model_dr_cache = None

    def _cached_dr(self, which):
        if self._model_dr_cache is None:
            self._model_dr_cache = {
                "train": [self._dr_series(f) for f in self.train_frames],
                "val": [self._dr_series(f) for f in self.val_frames],
            }
        return self._model_dr_cache[which]

    # ---------------------------------------------------------------- stage 1

    def _stage1_data(self, frames_list):
        xs, ys = [], []
        for f in frames_list:
            X, y, _ = gru_windows(f, self.cfg.window)
            if len(y):
                xs.append(X)
                ys.append(y)
        if not xs:
            raise DataError("no classification windows available")
        return np.concatenate(xs), np.concatenate(ys)

    def _gru_eval(self, X, y):
        with no_grad():
            probs = self.regime_net.forward_window(X)
        ce = float(label_smoothed_ce(
            Tensor(probs.data), y, self.cfg.label_smoothing).data)
        acc = float(np.mean(np.argmax(probs.data, axis=1) == y))
        return ce, acc

    def train_stage1(self):
        """Exclusive regime-net updates; kinematic weights stay frozen."""
        cfg = self.cfg
        if cfg.stage1_epochs == 0:
            return
        X, y = self._stage1_data(self.train_frames)
        has_val = bool(self.val_frames)
        if has_val:
            Xv, yv = self._stage1_data(self.val_frames)
        opt = Adam(self.regime_net.params(), lr=cfg.lr, betas=cfg.betas)
        best_val = np.inf
        stall = 0
        for epoch in range(cfg.stage1_epochs):
            order = self.rng.permutation(len(y))
            total = 0.0
            for lo in range(0, len(order), cfg.batch_size):
                idx = order[lo:lo + cfg.batch_size]
                opt.zero_grad()
                probs = self.regime_net.forward_window(X[idx])
                loss = label_smoothed_ce(probs, y[idx], cfg.label_smoothing)
                loss.backward()
                opt.step()
                total += float(loss.data) * len(idx)
            train_ce = total / len(y)
            if has_val:
                val_ce, val_acc = self._gru_eval(Xv, yv)
            else:
                val_ce, val_acc = train_ce, float("nan")
            self._record(TrainLogEntry(1, 0, epoch, train_ce, val_ce,
                                       val_acc, cfg.lr))
            if val_ce < best_val - 1e-6:
                best_val = val_ce
                stall = 0
            else:
                stall += 1
                if stall >= cfg.patience_stage1:
                    break
        self._invalidate_dr_cache()
        self._checkpoint("stage1")

    # ---------------------------------------------------------------- stage 2

    def train_stage2(self):
        """Joint optimization against L_cls + L_global (unweighted sum)."""
        cfg = self.cfg
        if cfg.stage2_epochs == 0:
            return
        params = {}
        train_gru = cfg.dr_source == "model" and self.kin_net.regime_pathway
        if train_gru:
            params.update({f"regime.{k}": v
                           for k, v in self.regime_net.params().items()})
        params.update({f"kin.{k}": v
                       for k, v in self.kin_net.params().items()})
        opt = Adam(params, lr=cfg.lr, betas=cfg.betas)
        initial = None
        over = 0
        for epoch in range(cfg.stage2_epochs):
            opt.zero_grad()
            stats = training_rollout(
                self.regime_net, self.kin_net, self.train_frames,
                window=cfg.window, bptt_window=cfg.bptt_window,
                dr_source=cfg.dr_source, soft_embedding=cfg.soft_embedding,
                train_gru_ce=train_gru, ce_weight=cfg.ce_weight,
                global_weight=cfg.global_weight, backward=True)
            opt.step()
            val_total = self._rollout_eval(self.val_frames) \
                if self.val_frames else stats.total
            self._record(TrainLogEntry(
                2, 0, epoch, stats.total, val_total, None, cfg.lr,
                extra={"ce": stats.ce, "reg": stats.reg,
                       "truncated": stats.n_truncated}))
            if initial is None:
                initial = stats.total
            if stats.total > cfg.divergence_factor * max(initial, 1e-12):
                over += 1
                if over >= cfg.divergence_patience:
                    raise NumericError(
                        f"stage 2 diverged: loss {stats.total:.4g} stayed "
                        f"above {cfg.divergence_factor}x the initial "
                        f"{initial:.4g} for {over} epochs")
            else:
                over = 0
        self._invalidate_dr_cache()
        self._checkpoint("stage2")

    def _rollout_eval(self, frames_list):
        if not frames_list:
            return float("nan")
        stats = training_rollout(
            self.regime_net, self.kin_net, frames_list,
            window=self.cfg.window, bptt_window=self.cfg.bptt_window,
            dr_source=self.cfg.dr_source,
            soft_embedding=self.cfg.soft_embedding,
            train_gru_ce=False, backward=False)
        return stats.total

    # ---------------------------------------------------------------- stage 3

    def _local_windows(self, frames_list, dr_list):
        kin, dr, target = [], [], []
        for f, series in zip(frames_list, dr_list):
            k, d, a, _ = kinematic_windows(f, series, self.cfg.window)
            if len(a):
                kin.append(k)
                dr.append(d)
                target.append(a)
        if not kin:
            raise DataError("no kinematic windows available")
        return np.concatenate(kin), np.concatenate(dr), np.concatenate(target)

    def validation_single_step_mse(self):
        """Single-step acceleration MSE on the validation split."""
        frames_list = self.val_frames or self.train_frames
        dr_list = (self._cached_dr("val") if self.val_frames
                   else self._cached_dr("train"))
        kin, dr, target = self._local_windows(frames_list, dr_list)
        with no_grad():
            pred = self.kin_net.forward_window(
                kin, dr if self.kin_net.regime_pathway else None)
        return float(np.mean((pred.data - target) ** 2))

    def train_stage3(self):
        """LSTM fine-tuning: local phase, then closed-loop global phase."""
        cfg = self.cfg
        opt = Adam(self.kin_net.params(), lr=cfg.lr, betas=cfg.betas)
        kin, dr, target = self._local_windows(self.train_frames,
                                              self._cached_dr("train"))
        switched = False
        for epoch in range(cfg.stage3_local_epochs):
            order = self.rng.permutation(len(target))
            total = 0.0
            for lo in range(0, len(order), cfg.batch_size):
                idx = order[lo:lo + cfg.batch_size]
                opt.zero_grad()
                pred = self.kin_net.forward_window(
                    kin[idx], dr[idx] if self.kin_net.regime_pathway else None)
                loss = single_step_mse(pred, target[idx])
                loss.backward()
                opt.step()
                total += float(loss.data) * len(idx)
            train_mse = total / len(target)
            val_mse = self.validation_single_step_mse()
            self.val_mse_history.append(val_mse)
            self._record(TrainLogEntry(3, 1, epoch, train_mse, val_mse,
                                       None, cfg.lr))
            if val_mse < cfg.phase_switch_mse:
                self.phase_switch_epoch = epoch
                switched = True
                break
        if not switched and cfg.stage3_global_epochs > 0:
            # local phase exhausted its budget; refine closed-loop anyway
            self.phase_switch_epoch = None
        self._checkpoint("stage3_local")

        best_val = np.inf
        stall = 0
        for epoch in range(cfg.stage3_global_epochs):
            opt.zero_grad()
            stats = training_rollout(
                self.regime_net, self.kin_net, self.train_frames,
                window=cfg.window, bptt_window=cfg.bptt_window,
                dr_source=cfg.dr_source, soft_embedding=cfg.soft_embedding,
                train_gru_ce=False, backward=True)
            opt.step()
            val_loss = self._rollout_eval(self.val_frames) \
                if self.val_frames else stats.reg
            self._record(TrainLogEntry(
                3, 2, epoch, stats.reg, val_loss, None, cfg.lr,
                extra={"truncated": stats.n_truncated}))
            if val_loss < best_val - 1e-9:
                best_val = val_loss
                stall = 0
            else:
                stall += 1
                if stall >= cfg.patience_stage3:
                    break
        self._checkpoint("stage3")

    # ------------------------------------------------------------------- run

    def run_all(self):
        self.train_stage1()
        self.train_stage2()
        self.train_stage3()
        return self.log
