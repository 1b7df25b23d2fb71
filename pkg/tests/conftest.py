import numpy as np
import pytest
import torch

from monovel.geometry import CameraIntrinsics
from monovel.streams import EncoderConfig

FD_STEP = 1e-3
FD_RTOL = 1e-4


def central_difference(fn, tensors, step=FD_STEP):
    """Numerical gradient of scalar ``fn()`` w.r.t. each tensor (modified in place and restored)."""
    grads = []
    with torch.no_grad():
        for t in tensors:
            g = torch.zeros_like(t)
            flat, gflat = t.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                fp = float(fn())
                flat[i] = orig - step
                fm = float(fn())
                flat[i] = orig
                gflat[i] = (fp - fm) / (2 * step)
            grads.append(g)
    return grads


def gradient_relative_error(fn, tensors, step=FD_STEP):
    """max over tensors of ||g_auto - g_fd|| / max(||g_auto||, ||g_fd||)."""
    for t in tensors:
        t.grad = None
    out = fn()
    auto = torch.autograd.grad(out, tensors, allow_unused=True)
    auto = [torch.zeros_like(t) if a is None else a for a, t in zip(auto, tensors)]
    numeric = central_difference(fn, tensors, step)
    errs = []
    for a, n in zip(auto, numeric):
        scale = max(a.norm().item(), n.norm().item(), 1e-12)
        errs.append((a - n).norm().item() / scale)
    return max(errs)


@pytest.fixture
def cam():
    return CameraIntrinsics(f_x=160.0, f_y=160.0, c_x=96.0, c_y=28.0, height_above_ground=1.5)


@pytest.fixture
def tiny_encoder():
    return EncoderConfig(motion_channels=4, context_channels=4, instance_dim=3, pattern_dim=3,
                         roi_size=(2, 2), denseaspp_rates=(1, 2), flow_width=4, context_width=4,
                         aspp_growth=2)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


def directional_relative_error(fn, tensors, n_dirs=3, step=FD_STEP, generator=None):
    """Compare autograd directional derivatives with central differences along
    random unit directions spanning all ``tensors`` jointly, so ``step`` is the
    Euclidean length of the perturbation."""
    out = fn()
    auto = torch.autograd.grad(out, tensors, allow_unused=True)
    auto = [torch.zeros_like(t) if a is None else a for a, t in zip(auto, tensors)]
    worst = 0.0
    for _ in range(n_dirs):
        dirs = [torch.randn(t.shape, dtype=t.dtype, generator=generator) for t in tensors]
        norm = sum(float(d.pow(2).sum()) for d in dirs) ** 0.5
        dirs = [d / norm for d in dirs]
        a = sum(float((g * d).sum()) for g, d in zip(auto, dirs))
        with torch.no_grad():
            for t, d in zip(tensors, dirs):
                t.add_(step * d)
            fp = float(fn())
            for t, d in zip(tensors, dirs):
                t.sub_(2 * step * d)
            fm = float(fn())
            for t, d in zip(tensors, dirs):
                t.add_(step * d)
        n = (fp - fm) / (2 * step)
        worst = max(worst, abs(a - n) / max(abs(a), abs(n), 1e-12))
    return worst


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
