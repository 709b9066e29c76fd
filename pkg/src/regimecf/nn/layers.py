"""Recurrent cells, initializers, and the two prediction networks.

The regime predictor is a 6-layer, 16-unit stacked GRU with a softmax head
over the six driving regimes; it consumes 9-dimensional frames (spacing,
relative speed, speed, and the one-hot regime of that frame). The kinematic
predictor is a 6-layer, 16-unit stacked recurrent network (LSTM by default,
GRU/RNN variants for baselines) over fused 4-dimensional frames (the three
kinematic features plus a scalar regime embedding); its head applies PReLU
to the final hidden state, an affine map, and a learnable output scale.
Weights start from the Xavier uniform distribution, biases from zero.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, DataError
from .tensor import Tensor, concat, prelu, softmax

HIDDEN_SIZE = 16
NUM_LAYERS = 6
GRU_INPUT_DIM = 9     # dd, dv, v + 6-way regime one-hot
FUSED_INPUT_DIM = 4   # dd, dv, v + scalar regime embedding
PLAIN_INPUT_DIM = 3   # dd, dv, v (regime-blind baselines)
N_REGIMES = 6
WINDOW = 10

# fixed nominal scales for the kinematic inputs (spacing m, relative speed
# m/s, speed m/s). Raw SI magnitudes saturate the first recurrent layer at
# Xavier init, which stalls training at the class-prior loss; dividing by
# typical highway magnitudes keeps gate pre-activations in the linear range
# without data-dependent statistics.
KIN_SCALES = np.array([1.0 / 30.0, 1.0 / 5.0, 1.0 / 20.0])


def xavier_uniform(shape, rng, l=1.0):
    """Uniform init in +/- sqrt(l / (n_in + n_out)) for a 2-D weight."""
    if len(shape) != 2 or shape[0] < 1 or shape[1] < 1:
        raise ConfigError(f"xavier_uniform expects a 2-D shape, got {shape}")
    bound = np.sqrt(l / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, size=shape)


def _param(data):
    return Tensor(data, requires_grad=True)


# networks initialize with l = 6 (canonical Glorot uniform): the bound
# sqrt(6 / (n_in + n_out)) is variance-preserving, which a 6-layer stack
# needs; with l = 1 the signal attenuates ~6x per layer and training stalls
# at the class-prior loss.
INIT_GAIN_L = 6.0


def _xavier_blocks(in_dim, hidden, n_gates, rng, l=INIT_GAIN_L):
    """Per-gate Xavier blocks stacked column-wise into one fused matrix."""
    return np.hstack([xavier_uniform((in_dim, hidden), rng, l=l)
                      for _ in range(n_gates)])


class GRUCell:
    """Standard update/reset-gate GRU cell (fused gate matrices)."""

    def __init__(self, in_dim, hidden, rng):
        self.in_dim, self.hidden = in_dim, hidden
        # gate order [z | r]; the candidate's recurrent term applies after
        # reset gating, so U_n stays separate
        self.p = {
            "W_zrn": _param(_xavier_blocks(in_dim, hidden, 3, rng)),
            "U_zr": _param(_xavier_blocks(hidden, hidden, 2, rng)),
            "U_n": _param(xavier_uniform((hidden, hidden), rng,
                                         l=INIT_GAIN_L)),
            "b_zrn": _param(np.zeros(3 * hidden)),
        }

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        H = self.hidden
        xw = x @ self.p["W_zrn"] + self.p["b_zrn"]
        hu = h @ self.p["U_zr"]
        z = (xw[:, :H] + hu[:, :H]).sigmoid()
        r = (xw[:, H:2 * H] + hu[:, H:]).sigmoid()
        n = (xw[:, 2 * H:] + (r * h) @ self.p["U_n"]).tanh()
        return (1.0 - z) * n + z * h

    def init_state(self, batch):
        return Tensor(np.zeros((batch, self.hidden)))


class LSTMCell:
    """Standard LSTM cell with a tanh candidate (fused gate matrices)."""

    def __init__(self, in_dim, hidden, rng):
        self.in_dim, self.hidden = in_dim, hidden
        # gate order [i | f | o | g]
        self.p = {
            "W_ifog": _param(_xavier_blocks(in_dim, hidden, 4, rng)),
            "U_ifog": _param(_xavier_blocks(hidden, hidden, 4, rng)),
            "b_ifog": _param(np.zeros(4 * hidden)),
        }

    def step(self, x: Tensor, state) -> tuple:
        H = self.hidden
        h, c = state
        s = x @ self.p["W_ifog"] + h @ self.p["U_ifog"] + self.p["b_ifog"]
        i = s[:, :H].sigmoid()
        f = s[:, H:2 * H].sigmoid()
        o = s[:, 2 * H:3 * H].sigmoid()
        g = s[:, 3 * H:].tanh()
        c_new = f * c + i * g
        h_new = o * c_new.tanh()
        return h_new, c_new

    def init_state(self, batch):
        zeros = np.zeros((batch, self.hidden))
        return (Tensor(zeros), Tensor(zeros.copy()))


class RNNCell:
    """Elman cell (tanh), the plainest baseline."""

    def __init__(self, in_dim, hidden, rng):
        self.in_dim, self.hidden = in_dim, hidden
        self.p = {
            "W_h": _param(xavier_uniform((in_dim, hidden), rng,
                                         l=INIT_GAIN_L)),
            "U_h": _param(xavier_uniform((hidden, hidden), rng,
                                         l=INIT_GAIN_L)),
            "b_h": _param(np.zeros(hidden)),
        }

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        return (x @ self.p["W_h"] + h @ self.p["U_h"] + self.p["b_h"]).tanh()

    def init_state(self, batch):
        return Tensor(np.zeros((batch, self.hidden)))


_CELL_TYPES = {"gru": GRUCell, "lstm": LSTMCell, "rnn": RNNCell}


class StackedRecurrent:
    """A stack of identical cells; frame t flows through all layers."""

    def __init__(self, cell_type, in_dim, hidden, layers, rng):
        try:
            cell_cls = _CELL_TYPES[cell_type]
        except KeyError:
            raise ConfigError(f"unknown cell type {cell_type!r}") from None
        self.cell_type = cell_type
        self.cells = [cell_cls(in_dim if l == 0 else hidden, hidden, rng)
                      for l in range(layers)]

    def run(self, frames) -> Tensor:
        """frames: list of (B, in_dim) tensors; returns top-layer final h."""
        batch = frames[0].shape[0]
        states = [cell.init_state(batch) for cell in self.cells]
        top_h = None
        for x in frames:
            inp = x
            for l, cell in enumerate(self.cells):
                if self.cell_type == "lstm":
                    h, c = cell.step(inp, states[l])
                    states[l] = (h, c)
                    inp = h
                else:
                    h = cell.step(inp, states[l])
                    states[l] = h
                    inp = h
            top_h = inp
        return top_h

    def params(self, prefix=""):
        out = {}
        for l, cell in enumerate(self.cells):
            for name, tensor in cell.p.items():
                out[f"{prefix}layer{l}.{name}"] = tensor
        return out


def _check_finite(arr, what):
    if not np.isfinite(arr).all():
        raise DataError(f"non-finite values in {what}")


class RegimePredictor:
    """Stacked GRU + softmax head predicting the next driving regime."""

    def __init__(self, input_dim=GRU_INPUT_DIM, hidden=HIDDEN_SIZE,
                 layers=NUM_LAYERS, n_classes=N_REGIMES, seed=0):
        rng = np.random.default_rng(seed)
        self.input_dim = input_dim
        self.n_classes = n_classes
        self.stack = StackedRecurrent("gru", input_dim, hidden, layers, rng)
        self.W_g = _param(xavier_uniform((hidden, n_classes), rng,
                                         l=INIT_GAIN_L))
        self.b_g = _param(np.zeros(n_classes))

    def forward_frames(self, frames) -> Tensor:
        """frames: list of (B, input_dim) tensors -> (B, n_classes) probs.

        Frames carry raw kinematics; the fixed input scaling is applied
        here so every caller sees one consistent normalization.
        """
        scale = np.ones(self.input_dim)
        scale[:3] = KIN_SCALES
        h = self.stack.run([f * Tensor(scale) for f in frames])
        return softmax(h @ self.W_g + self.b_g, axis=-1)

    def forward_window(self, window) -> Tensor:
        """window: (B, N, input_dim) array of fully populated frames."""
        window = np.asarray(window, dtype=float)
        _check_finite(window, "regime predictor input")
        if window.ndim != 3 or window.shape[2] != self.input_dim:
            raise DataError(
                f"expected (B, N, {self.input_dim}) window, got {window.shape}")
        frames = [Tensor(window[:, t, :]) for t in range(window.shape[1])]
        return self.forward_frames(frames)

    def params(self):
        out = self.stack.params("gru.")
        out["head.W_g"] = self.W_g
        out["head.b_g"] = self.b_g
        return out

    def num_params(self):
        return sum(t.size for t in self.params().values())


class KinematicPredictor:
    """Regime-conditioned (or plain) recurrent acceleration predictor."""

    def __init__(self, cell_type="lstm", regime_pathway=True,
                 hidden=HIDDEN_SIZE, layers=NUM_LAYERS, n_regimes=N_REGIMES,
                 seed=0):
        rng = np.random.default_rng(seed)
        self.cell_type = cell_type
        self.regime_pathway = regime_pathway
        self.n_regimes = n_regimes
        in_dim = FUSED_INPUT_DIM if regime_pathway else PLAIN_INPUT_DIM
        self.input_dim = in_dim
        if regime_pathway:
            self.W_e = _param(xavier_uniform((1, n_regimes), rng,
                                             l=INIT_GAIN_L))
            self.b_e = _param(np.zeros(1))
        self.stack = StackedRecurrent(cell_type, in_dim, hidden, layers, rng)
        self.W_o = _param(xavier_uniform((hidden, 1), rng, l=INIT_GAIN_L))
        self.b_o = _param(np.zeros(1))
        self.alpha_out = _param(np.array(1.0))
        self.alpha_prelu = _param(np.array(0.25))

    def embed(self, dr) -> Tensor:
        """Scalar embedding of regime indices (B,) -> (B, 1).

        dr may be an int array (hard lookup) or a (B, n_regimes) probability
        tensor (soft expected embedding).
        """
        if isinstance(dr, Tensor):
            return dr @ self.W_e.reshape(self.n_regimes, 1) + self.b_e
        idx = np.asarray(dr, dtype=int)
        return self.W_e[0, idx].reshape(len(idx), 1) + self.b_e

    def fuse_frame(self, kin: Tensor, dr) -> Tensor:
        """One (B, 3) kinematic frame + regimes -> (B, 4) fused frame."""
        return concat([kin, self.embed(dr)], axis=1)

    def forward_fused(self, frames) -> Tensor:
        """Run prebuilt input frames through the stack and output head.

        The fixed kinematic input scaling is applied here (first three
        columns; the embedding channel passes through unscaled).
        """
        scale = np.ones(self.input_dim)
        scale[:3] = KIN_SCALES
        h = self.stack.run([f * Tensor(scale) for f in frames])
        y = prelu(h, self.alpha_prelu) @ self.W_o + self.b_o
        return (self.alpha_out * y).reshape(-1)

    def forward_frames(self, kin_frames, dr_frames=None) -> Tensor:
        """kin_frames: list of (B, 3) tensors; dr_frames: per-frame regimes.

        Returns predicted acceleration (B,). With the regime pathway on,
        dr_frames must supply one entry per frame (indices or soft
        probabilities); plain models must not receive regimes.
        """
        if self.regime_pathway:
            if dr_frames is None:
                raise DataError("regime pathway requires per-frame regimes")
            frames = [self.fuse_frame(kin, dr)
                      for kin, dr in zip(kin_frames, dr_frames)]
        else:
            if dr_frames is not None:
                raise DataError("plain model must not receive regimes")
            frames = kin_frames
        return self.forward_fused(frames)

    def forward_window(self, kin_window, dr_window=None) -> Tensor:
        """kin_window: (B, N, 3) array; dr_window: (B, N) int array or None."""
        kin_window = np.asarray(kin_window, dtype=float)
        _check_finite(kin_window, "kinematic predictor input")
        if kin_window.ndim != 3 or kin_window.shape[2] != PLAIN_INPUT_DIM:
            raise DataError(
                f"expected (B, N, 3) kinematic window, got {kin_window.shape}")
        n = kin_window.shape[1]
        kin_frames = [Tensor(kin_window[:, t, :]) for t in range(n)]
        dr_frames = None
        if dr_window is not None:
            dr_window = np.asarray(dr_window, dtype=int)
            dr_frames = [dr_window[:, t] for t in range(n)]
        return self.forward_frames(kin_frames, dr_frames)

    def params(self):
        out = {}
        if self.regime_pathway:
            out["embed.W_e"] = self.W_e
            out["embed.b_e"] = self.b_e
        out.update(self.stack.params(f"{self.cell_type}."))
        out["head.W_o"] = self.W_o
        out["head.b_o"] = self.b_o
        out["head.alpha_out"] = self.alpha_out
        out["head.alpha_prelu"] = self.alpha_prelu
        return out

    def num_params(self):
        return sum(t.size for t in self.params().values())


def snapshot_params(params: dict) -> dict:
    """Copy current parameter values (for freeze-contract tensor diffs)."""
    return {name: t.data.copy() for name, t in params.items()}


def params_equal(snap_a: dict, snap_b: dict) -> bool:
    return (snap_a.keys() == snap_b.keys() and
            all(np.array_equal(snap_a[k], snap_b[k]) for k in snap_a))
