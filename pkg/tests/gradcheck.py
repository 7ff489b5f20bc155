"""Finite-difference helpers shared by the recogniser tests."""
import torch
import torch.nn.functional as F

EPS = 1e-4


def rel_err(a, n):
    scale = max(abs(a), abs(n))
    return 0.0 if scale < 1e-9 else abs(a - n) / scale


def fd_probe(loss_fn, tensor, idx):
    """Central differences of ``loss_fn()`` along the flat entries ``idx`` of ``tensor``."""
    flat = tensor.data.view(-1)
    out = []
    for i in idx:
        keep = flat[i].item()
        flat[i] = keep + EPS
        up = loss_fn().item()
        flat[i] = keep - EPS
        down = loss_fn().item()
        flat[i] = keep
        out.append((up - down) / (2 * EPS))
    return out


def activation_pattern(net, x, bow):
    """Signs of every ReLU input and the winner of every pooling window."""
    parts = []

    def relu(t):
        parts.append(t > 0)
        return F.relu(t)

    def pool(t):
        t, i = F.max_pool2d(t, 2, return_indices=True)
        parts.append(i)
        return t

    with torch.no_grad():
        t = pool(relu(net.conv2(relu(net.conv1(x)))))
        t = pool(relu(net.conv4(relu(net.conv3(t)))))
        t = pool(relu(net.convCB(relu(net.convCA(t)))))
        relu(net.fcFCA(t.flatten(1)))
    return [q.clone() for q in parts]


def smooth_probe(net, x, bow, w, order, n=10):
    """The first ``n`` entries of ``order`` whose +-EPS neighbourhood crosses no kink.

    Central differences straddling a ReLU or max-pool switch measure a
    one-sided mix, not the derivative, so those entries are not probed.
    """
    flat = w.data.view(-1)
    chosen = []
    for i in order:
        keep = flat[i].item()
        flat[i] = keep + EPS
        up = activation_pattern(net, x, bow)
        flat[i] = keep - EPS
        down = activation_pattern(net, x, bow)
        flat[i] = keep
        if all(torch.equal(a, b) for a, b in zip(up, down)):
            chosen.append(int(i))
            if len(chosen) == n:
                return chosen
    raise AssertionError(f"only {len(chosen)} kink-free probes")


def _probe_errors(loss, t, idx, analytic):
    numeric = fd_probe(loss, t, idx)
    return [rel_err(a, n) for a, n in zip(analytic, numeric)]


def layer_type_errors(seed: int = 0, n: int = 10) -> dict:
    """Worst relative error per layer type over ``n``-entry probe sets, in float64."""
    import numpy as np

    from lpdr.recognizer.model import CONV_LAYERS, CharNet

    torch.manual_seed(seed)
    net = CharNet().double()
    gen = torch.Generator().manual_seed(seed + 1)
    x = torch.rand(4, 1, 32, 32, generator=gen, dtype=torch.float64)
    bow = torch.rand(4, 256, generator=gen, dtype=torch.float64)
    y = torch.tensor([3, 17, 0, 35])
    rng = np.random.default_rng(seed)

    def loss():
        return F.cross_entropy(net(x, bow)[1], y)

    net.zero_grad()
    loss().backward()
    out = {"conv": [], "fc": [], "pool": [], "softmax-CE": []}
    for name in CONV_LAYERS + ("fcFCA", "fcFCB"):
        w = getattr(net, name).weight
        idx = smooth_probe(net, x, bow, w, rng.permutation(w.numel())[:400], n)
        out["conv" if name in CONV_LAYERS else "fc"] += _probe_errors(
            loss, w, idx, w.grad.view(-1)[idx].tolist())

    # pooling: a max-pool layer alone, then the input gradient through all three pools
    p = torch.rand(1, 2, 6, 6, generator=gen, dtype=torch.float64, requires_grad=True)
    pw = torch.rand(1, 2, 3, 3, generator=gen, dtype=torch.float64)
    (F.max_pool2d(p, 2) * pw).sum().backward()
    idx = rng.permutation(p.numel())[:n]
    out["pool"] += _probe_errors(lambda: (F.max_pool2d(p.detach(), 2) * pw).sum(), p, idx,
                                 p.grad.view(-1)[idx].tolist())
    xg = x.clone().requires_grad_(True)
    F.cross_entropy(net(xg, bow)[1], y).backward()
    idx = rng.permutation(xg.numel())[:n]
    out["pool"] += _probe_errors(lambda: F.cross_entropy(net(xg.detach(), bow)[1], y), xg, idx,
                                 xg.grad.view(-1)[idx].tolist())

    z = torch.randn(4, 36, generator=gen, dtype=torch.float64, requires_grad=True)
    F.cross_entropy(z, y).backward()
    idx = rng.permutation(z.numel())[:n]
    out["softmax-CE"] += _probe_errors(lambda: F.cross_entropy(z.detach(), y), z, idx,
                                       z.grad.view(-1)[idx].tolist())
    return {k: max(v) for k, v in out.items()}
