from __future__ import annotations

import numpy as np

from graphcnn.nn.tensor import Parameter, Tensor


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Ordered parameter registry plus a two-stage forward.

    ``prepare`` is the fixed, parameter-free front end (for instance gathering
    shifted samples at a node); ``forward_prepared`` is everything trainable.
    Training calls ``prepare`` once per dataset and reuses the result.
    """

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add_parameter(self, name: str, value: np.ndarray) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(value, name=name)
        self._params[name] = p
        return p

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def named_parameters(self) -> dict[str, Parameter]:
        return dict(self._params)

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self._params):
            missing = sorted(set(self._params) - set(state))
            extra = sorted(set(state) - set(self._params))
            raise ValueError(f"checkpoint does not fit model: missing {missing}, unexpected {extra}")
        for name, p in self._params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.data.shape:
                raise ValueError(f"parameter {name!r}: checkpoint shape {value.shape}, model {p.data.shape}")
            p.data[...] = value

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def prepare(self, signals: np.ndarray) -> np.ndarray:
        return np.asarray(signals, dtype=np.float64)

    def forward_prepared(self, z: Tensor) -> Tensor:
        raise NotImplementedError

    def forward(self, signals) -> Tensor:
        data = signals.data if isinstance(signals, Tensor) else signals
        return self.forward_prepared(Tensor(self.prepare(data)))

    __call__ = forward
