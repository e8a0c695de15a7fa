import numpy as np
import pytest

from lip2tongue.model import ModelConfig
from lip2tongue.tensor import Tensor, no_grad, precision


def tiny_config(**kw) -> ModelConfig:
    base = dict(H=12, W=12, N=3, T=2, tower=((2, 3, 2), (3, 3, 2)), embed_dim=4, lstm_hidden=3,
                decoder_hidden=5, out_h=4, out_w=4)
    base.update(kw)
    return ModelConfig(**base)


def gradcheck(build_loss, arrays: dict, n_points: int = 10, eps: float = 1e-5, seed: int = 0) -> dict:
    """Central differences against backward() in float64.

    ``build_loss(tensors)`` must return a scalar Tensor and be deterministic.
    Returns the relative error ``|a - n| / max(|a|, |n|)`` (norms over the
    sampled entries) for every input.
    """
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        arrays = {k: np.array(v, dtype=np.float64) for k, v in arrays.items()}
        tensors = {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}
        build_loss(tensors).backward()
        # unreachable inputs keep grad None, which means zero
        analytic = {k: np.zeros_like(arrays[k]) if t.grad is None else t.grad for k, t in tensors.items()}

        def f():
            with no_grad():
                return float(build_loss({k: Tensor(v) for k, v in arrays.items()}).data)

        errors = {}
        for k, a in arrays.items():
            flat = a.reshape(-1)
            idx = rng.choice(flat.size, size=min(n_points, flat.size), replace=False)
            num = np.empty(len(idx))
            for j, i in enumerate(idx):
                old = flat[i]
                flat[i] = old + eps
                up = f()
                flat[i] = old - eps
                down = f()
                flat[i] = old
                num[j] = (up - down) / (2 * eps)
            an = analytic[k].reshape(-1)[idx]
            scale = max(np.linalg.norm(an), np.linalg.norm(num), 1e-8)
            errors[k] = float(np.linalg.norm(an - num) / scale)
    return errors


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
