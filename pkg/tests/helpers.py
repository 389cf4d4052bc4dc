import numpy as np

from otcalib.picnn import PicnnConfig, PicnnPotential, init_potential, parameter_shapes
from otcalib.rng import Xoshiro256


def zero_potential(config: PicnnConfig) -> PicnnPotential:
    return PicnnPotential(config, {k: np.zeros(s) for k, s in parameter_shapes(config).items()})


def softplus_net() -> PicnnPotential:
    """Two-layer net whose value is exactly softplus(y) for every context."""
    pot = zero_potential(PicnnConfig(input_dim=2, hidden_dim_context=2, hidden_dim_convex=1,
                                     num_layers=2, embed_dims=(2,)))
    pot.params["cvx.0.wy"][:] = 1.0
    pot.params["cvx.0.y_bias"][:] = 1.0
    pot.params["cvx.1.gate_bias"][:] = 1.0
    pot.params["cvx.1.wz"][:] = 1.0
    return pot


def random_config(rng: Xoshiro256, max_params: int = 200) -> PicnnConfig:
    while True:
        cfg = PicnnConfig(input_dim=1 + rng.randbelow(3),
                          hidden_dim_context=1 + rng.randbelow(4),
                          hidden_dim_convex=1 + rng.randbelow(4),
                          num_layers=1 + rng.randbelow(3),
                          embed_dims=tuple(1 + rng.randbelow(4) for _ in range(1 + rng.randbelow(2))))
        n = sum(int(np.prod(s)) for s in parameter_shapes(cfg).values())
        if n <= max_params:
            return cfg


def random_potential(seed: int, max_params: int = 200, scale_biases: bool = True) -> PicnnPotential:
    """Random small potential with nonzero biases so every path is exercised."""
    rng = Xoshiro256(seed)
    pot = init_potential(random_config(rng, max_params), seed)
    if scale_biases:
        for name, arr in pot.params.items():
            if name.endswith("bias"):
                arr[...] = 0.5 * rng.normal_array(arr.size).reshape(arr.shape)
    return pot


def random_batch(rng: Xoshiro256, n: int, dim: int):
    x = rng.random_array(n)
    y = rng.random_array(n)
    h = np.stack([rng.normal_array(dim) for _ in range(n)])
    return x, y, h
