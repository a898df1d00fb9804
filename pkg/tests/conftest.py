import numpy as np
import pytest

from flowood.flow import ActNorm, Coupling, FlowModel, InvertibleLinear


def randomize_model(
    model: FlowModel,
    rng: np.random.Generator,
    linear_noise: float = 0.0,
) -> FlowModel:
    """Give a freshly created model random, non-trivial parameters.

    Magnitudes are representative of a flow shortly after data-dependent
    init plus a short training run: moderate actnorm scales, near-identity
    couplings, rotation-like linear layers. ``linear_noise`` additionally
    perturbs the LU factors (keep it for small D only; random triangular
    factors are catastrophically ill-conditioned at large D).
    """
    dtype = model.dtype
    for layer in model.layers:
        if isinstance(layer, ActNorm):
            layer.log_scale = rng.normal(0, 0.2, layer.dim).astype(dtype)
            layer.bias = rng.normal(0, 0.3, layer.dim).astype(dtype)
            layer.initialized = True
        elif isinstance(layer, InvertibleLinear) and linear_noise > 0:
            d = layer.dim
            layer.lower += np.tril(rng.normal(0, linear_noise, (d, d)), -1).astype(dtype)
            layer.upper += np.triu(rng.normal(0, linear_noise, (d, d)), 1).astype(dtype)
            layer.log_diag += rng.normal(0, linear_noise, d).astype(dtype)
        elif isinstance(layer, Coupling):
            h = layer.w2.in_dim
            layer.w2.weight = rng.normal(0, 0.05 / np.sqrt(h), layer.w2.weight.shape).astype(dtype)
            layer.w2.bias = rng.normal(0, 0.05, layer.w2.bias.shape).astype(dtype)
    return model


def make_random_model(
    dim: int,
    blocks: int,
    hidden_width: int,
    seed: int = 0,
    dtype=np.float32,
    realnvp: bool = False,
    linear_noise: float = 0.0,
) -> FlowModel:
    rng = np.random.default_rng(seed)
    model = FlowModel.create(
        dim, blocks=blocks, hidden_width=hidden_width, rng=rng, realnvp=realnvp, dtype=dtype
    )
    return randomize_model(model, rng, linear_noise=linear_noise)


def flatten_params(model: FlowModel):
    """(names, flat parameter vector, flat gradient vector, setter)."""
    named = model.parameters()

    def set_from(theta: np.ndarray) -> None:
        offset = 0
        for _, p, _ in named:
            p[...] = theta[offset : offset + p.size].reshape(p.shape)
            offset += p.size

    flat_p = np.concatenate([p.ravel() for _, p, _ in named])
    flat_g = np.concatenate([g.ravel() for _, _, g in named])
    return [n for n, _, _ in named], flat_p, flat_g, set_from


def numerical_jacobian_logdet(fn, x0: np.ndarray, h: float = 1e-5) -> float:
    """log|det| of the Jacobian of fn at x0 via central differences (float64)."""
    d = x0.size
    jac = np.empty((d, d))
    for j in range(d):
        xp = x0.copy()
        xm = x0.copy()
        xp[j] += h
        xm[j] -= h
        jac[:, j] = (fn(xp[None, :])[0] - fn(xm[None, :])[0]) / (2.0 * h)
    _, logdet = np.linalg.slogdet(jac)
    return float(logdet)


def brute_force_auroc(id_scores, ood_scores) -> float:
    """O(N^2) pair-counting oracle: wins + half-credit ties over all pairs."""
    a = np.asarray(id_scores, dtype=np.float64).reshape(-1, 1)
    b = np.asarray(ood_scores, dtype=np.float64).reshape(1, -1)
    wins = np.sum(a > b, dtype=np.float64)
    ties = np.sum(a == b, dtype=np.float64)
    return float((wins + 0.5 * ties) / (a.size * b.size))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
