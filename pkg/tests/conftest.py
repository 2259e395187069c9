import numpy as np
import pytest

from sirobust import AttackConfig, DefenseConfig, OptimizerConfig, gen_gaussian_blobs, gen_two_moons, mlp, train

FD_STEP = 1e-5


def numeric_grad(f, x, h=FD_STEP):
    """Central differences of scalar ``f`` around ``x``, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


# Desk-scale setup shared by the heavier tests.
EPS = 0.08
DESK_OPT = OptimizerConfig(lr=0.1, epochs=50, milestones=(30, 40))


@pytest.fixture(scope="session")
def moons():
    return gen_two_moons(500, 0.1, seed=0), gen_two_moons(500, 0.1, seed=1, split="test")


@pytest.fixture(scope="session")
def blobs():
    return (gen_gaussian_blobs(500, 4, 0.08, seed=0),
            gen_gaussian_blobs(500, 4, 0.08, seed=1, split="test"))


def desk_train(data, method="AT", si=False, eps=EPS, opt=DESK_OPT, seed=0):
    cfg = DefenseConfig(method=method, si=si, inner_attack=AttackConfig(epsilon=eps, steps=10),
                        optimizer=opt, seed=seed)
    net = mlp(2, (128, 128), data.num_classes, seed=seed)
    return train(net, data, cfg)


@pytest.fixture(scope="session")
def standard_model(moons):
    ckpt, log = desk_train(moons[0], eps=0.0)
    return ckpt.to_network(), log


@pytest.fixture(scope="session")
def saturated_model(moons):
    """Clean training, long and without weight decay, so logits grow large."""
    opt = OptimizerConfig(lr=0.1, epochs=100, milestones=(), weight_decay=0.0)
    ckpt, _ = desk_train(moons[0], eps=0.0, opt=opt)
    return ckpt.to_network()


@pytest.fixture(scope="session")
def at_model(moons):
    ckpt, log = desk_train(moons[0], "AT", si=False)
    return ckpt.to_network(), log


@pytest.fixture(scope="session")
def at_si_model(moons):
    ckpt, log = desk_train(moons[0], "AT", si=True)
    return ckpt.to_network(), log


@pytest.fixture(scope="session")
def trades_si_model(moons):
    ckpt, log = desk_train(moons[0], "TRADES", si=True)
    return ckpt.to_network(), log


@pytest.fixture(scope="session")
def trades_model(moons):
    ckpt, log = desk_train(moons[0], "TRADES", si=False)
    return ckpt.to_network(), log


@pytest.fixture(scope="session")
def blobs_si_model(blobs):
    ckpt, _ = desk_train(blobs[0], "AT", si=True)
    return ckpt.to_network()


# Acceptance lines, printed after the run so they show without ``-s``.
ACCEPTANCE = {}


def record(number, title, passed, detail):
    line = f"criterion {number} [{title}]: {'PASS' if passed else 'FAIL'} ({detail})"
    ACCEPTANCE[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
