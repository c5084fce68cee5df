import torch
import pytest

ACCEPTANCE_RESULTS = {}


def central_difference_check(fn, inputs, eps=1e-6, seed=0):
    """Compare autograd with central differences of a random projection of ``fn``.

    Returns the worst relative error ``|analytic - numeric| / max(|analytic|, |numeric|)``
    measured as vector norms per input.
    """
    gen = torch.Generator().manual_seed(seed)
    inputs = [t.detach().clone().double().requires_grad_(True) for t in inputs]
    with torch.no_grad():
        probe = torch.randn(fn(*inputs).shape, generator=gen, dtype=torch.float64)

    def scalar(*args):
        return (fn(*args) * probe).sum()

    analytic = torch.autograd.grad(scalar(*inputs), inputs, allow_unused=True)
    worst = 0.0
    for i, (t, a) in enumerate(zip(inputs, analytic)):
        a = torch.zeros_like(t) if a is None else a
        numeric = torch.zeros_like(t)
        flat = t.detach().view(-1)
        with torch.no_grad():
            for j in range(flat.numel()):
                args = [x.detach() for x in inputs]
                plus = args[i].clone().view(-1)
                minus = args[i].clone().view(-1)
                plus[j] += eps
                minus[j] -= eps
                args_p = list(args)
                args_m = list(args)
                args_p[i] = plus.view_as(t)
                args_m[i] = minus.view_as(t)
                numeric.view(-1)[j] = (scalar(*args_p) - scalar(*args_m)) / (2 * eps)
        denom = max(a.norm().item(), numeric.norm().item(), 1e-30)
        worst = max(worst, (a - numeric).norm().item() / denom)
    return worst


@pytest.fixture
def rng():
    return torch.Generator().manual_seed(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        status, text = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"[{status}] criterion {key}: {text}")
