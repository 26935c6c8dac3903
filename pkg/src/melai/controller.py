"""Elman recurrent controller with a flat parameter vector.

Parameter layout (row-major blocks, in order):

    input->hidden   hidden x n_inputs
    context->hidden hidden x hidden
    context self    hidden
    hidden->output  n_outputs x hidden
    hidden bias     hidden
    output bias     n_outputs

Context units are sigmoid neurons fed by their hidden unit (weight 1) and
by their own previous value through the self-recurrent weight.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .morphogen import RobotType

DEFAULT_HIDDEN = 10


def param_count(n_inputs: int, hidden: int, n_outputs: int) -> int:
    return hidden * n_inputs + hidden * hidden + hidden + n_outputs * hidden + hidden + n_outputs


@njit(cache=True)
def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


@njit(cache=True)
def elman_step(theta, n_in, hidden, n_out, x, context, out):
    """One forward pass; updates ``context`` in place and writes ``out``."""
    o_ctx = hidden * n_in
    o_self = o_ctx + hidden * hidden
    o_out = o_self + hidden
    o_bh = o_out + n_out * hidden
    o_bo = o_bh + hidden
    h = np.empty(hidden)
    for i in range(hidden):
        s = theta[o_bh + i]
        for k in range(n_in):
            s += theta[i * n_in + k] * x[k]
        for k in range(hidden):
            s += theta[o_ctx + i * hidden + k] * context[k]
        h[i] = _sig(s)
    for i in range(hidden):
        context[i] = _sig(h[i] + theta[o_self + i] * context[i])
    for j in range(n_out):
        s = theta[o_bo + j]
        for i in range(hidden):
            s += theta[o_out + j * hidden + i] * h[i]
        out[j] = _sig(s)


class ElmanController:
    def __init__(self, robot_type: RobotType, hidden_size: int = DEFAULT_HIDDEN):
        if hidden_size < 1:
            raise ValueError("hidden_size must be at least 1")
        self.robot_type = RobotType(*robot_type)
        self.hidden_size = int(hidden_size)
        self.n_inputs = 2 * self.robot_type.num_sensors
        self.n_outputs = self.robot_type.num_wheels + self.robot_type.num_joints
        if self.n_outputs == 0:
            raise ValueError(f"robot type {tuple(self.robot_type)} has no actuator to drive")
        self._params = np.zeros(param_count(self.n_inputs, self.hidden_size, self.n_outputs))
        self.context = np.zeros(self.hidden_size)

    @property
    def n_params(self) -> int:
        return self._params.size

    def reset(self) -> None:
        self.context[:] = 0.0

    def get_params(self) -> np.ndarray:
        return self._params.copy()

    def set_params(self, theta) -> None:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != self._params.shape:
            raise ValueError(f"expected {self._params.size} parameters, got shape {theta.shape}")
        self._params = theta.copy()
        self.reset()

    def forward(self, inputs) -> np.ndarray:
        x = np.asarray(inputs, dtype=float)
        if x.shape != (self.n_inputs,):
            raise ValueError(f"expected {self.n_inputs} inputs, got shape {x.shape}")
        out = np.empty(self.n_outputs)
        elman_step(self._params, self.n_inputs, self.hidden_size, self.n_outputs, x, self.context, out)
        return out

    def copy(self) -> "ElmanController":
        c = ElmanController(self.robot_type, self.hidden_size)
        c.set_params(self._params)
        return c

    def matches(self, robot_type: RobotType) -> bool:
        return tuple(robot_type) == tuple(self.robot_type)

    def to_text(self) -> str:
        s, w, j = self.robot_type
        values = " ".join(f"{v:.17g}" for v in self._params)
        return f"elman {s} {w} {j} {self.hidden_size}\n{values}\n"

    @classmethod
    def from_text(cls, text: str) -> "ElmanController":
        header, _, body = text.strip().partition("\n")
        parts = header.split()
        if len(parts) != 5 or parts[0] != "elman":
            raise ValueError(f"bad controller header {header!r}")
        ctrl = cls(RobotType(*map(int, parts[1:4])), int(parts[4]))
        ctrl.set_params(np.array(body.split(), dtype=float))
        return ctrl


def build(robot_type: RobotType, hidden_size: int = DEFAULT_HIDDEN) -> ElmanController:
    return ElmanController(robot_type, hidden_size)


def wheel_speed(output, v_max: float):
    return (2.0 * np.asarray(output) - 1.0) * v_max


def joint_frequency(output, f_max: float):
    return np.asarray(output) * f_max
