import numpy as np
import pytest
import torch

from synsis.backbone import BackboneConfig, FeatureExtractor
from synsis.toy import make_toy_domains


@pytest.fixture(scope="session")
def std_backbone():
    """Standard 16-layer backbone with fixed random weights."""
    return FeatureExtractor(BackboneConfig())


@pytest.fixture(scope="session")
def tiny_backbone_config():
    """3-layer truncated backbone config used for finite-difference checks."""
    return BackboneConfig(layer_ids=("relu1_1", "relu1_2", "relu2_1"), seed=7)


@pytest.fixture(scope="session")
def toy_domains():
    return make_toy_domains(0, 24, 24, num_classes=5, hw=(64, 128))


def fd_gradient(fn, x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Central finite-difference gradient of a scalar function of x."""
    x = x.detach().clone()
    grad = torch.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    with torch.no_grad():
        for i in range(flat_x.numel()):
            orig = flat_x[i].item()
            flat_x[i] = orig + eps
            hi = float(fn(x))
            flat_x[i] = orig - eps
            lo = float(fn(x))
            flat_x[i] = orig
            flat_g[i] = (hi - lo) / (2 * eps)
    return grad


def relative_grad_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    denom = max(float(numeric.norm()), 1e-12)
    return float((analytic - numeric).norm()) / denom
