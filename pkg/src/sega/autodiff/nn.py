"""Parameter registry and affine layers."""

import math
from typing import Iterator, Mapping

import numpy as np

from sega.autodiff import ops
from sega.autodiff.tensor import Tensor, default_dtype
from sega.errors import CheckpointError


class Module:
    """Base class holding named parameters and sub-modules.

    Parameter names are dotted paths (``rgt.0.following.query.weight``); the
    checkpoint format and the L2 term of the fine-tuning loss both walk this
    registry.
    """

    def __init__(self):
        self._parameters: dict[str, Tensor] = {}
        self._modules: dict[str, Module] = {}

    def add_parameter(self, name: str, data: np.ndarray) -> Tensor:
        tensor = Tensor(data, requires_grad=True, name=name)
        self._parameters[name] = tensor
        return tensor

    def add_module(self, name: str, module: "Module") -> "Module":
        self._modules[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        named: dict[str, Tensor] = {}
        for name, tensor in self._parameters.items():
            named[f"{prefix}{name}"] = tensor
        for name, module in self._modules.items():
            named.update(module.named_parameters(f"{prefix}{name}."))
        return named

    def parameters(self) -> Iterator[Tensor]:
        yield from self.named_parameters().values()

    def state(self, prefix: str = "") -> dict[str, np.ndarray]:
        params = self.named_parameters(prefix)
        return {name: t.data.copy() for name, t in params.items()}

    def load_state(
        self, state: Mapping[str, np.ndarray], prefix: str = "", strict: bool = True
    ) -> list[str]:
        """Copy arrays from ``state`` into matching parameters.

        Returns:
            Names of parameters that were loaded.
        """
        loaded = []
        for name, tensor in self.named_parameters(prefix).items():
            if name not in state:
                if strict:
                    raise CheckpointError(f"checkpoint is missing parameter {name}")
                continue
            array = np.asarray(state[name])
            if array.shape != tensor.shape:
                raise CheckpointError(
                    f"parameter {name}: checkpoint shape {array.shape} "
                    f"!= {tensor.shape}"
                )
            tensor.data = array.astype(tensor.dtype, copy=True)
            loaded.append(name)
        return loaded

    def zero_grad(self) -> None:
        for tensor in self.parameters():
            tensor.zero_grad()


def kaiming_uniform(
    rng: np.random.Generator, fan_in: int, fan_out: int, slope: float = ops.LEAKY_SLOPE
) -> np.ndarray:
    """Fan-in scaled uniform init for LeakyReLU stacks."""
    bound = math.sqrt(6.0 / ((1.0 + slope**2) * max(fan_in, 1)))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(default_dtype())


class Linear(Module):
    """Affine map ``y = x W + b`` on row-major batches."""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        bias: bool = True,
    ):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = self.add_parameter(
            "weight", kaiming_uniform(rng, in_features, out_features)
        )
        self.bias = (
            self.add_parameter("bias", np.zeros(out_features, dtype=default_dtype()))
            if bias
            else None
        )

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.matmul(x, self.weight)
        return ops.add_bias(y, self.bias) if self.bias is not None else y
