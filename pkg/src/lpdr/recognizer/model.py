"""Eight-layer character CNN, its fusion with visual-word histograms, and the model file."""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ModelError, TransferError
from ..features.bow import N_WORDS, Codebook, bow_matrix
from ..features.sift import char_descriptor_batch
from ..segmentation import CHAR_SIZE
from ..synth.fonts import ALPHABET

CONV_LAYERS = ("conv1", "conv2", "conv3", "conv4", "convCA", "convCB")
TRANSFER_LAYERS = ("conv1", "conv2", "conv3", "conv4")
LAYERS = CONV_LAYERS + ("fcFCA", "fcFCB")
DEFAULT_WIDTHS = (16, 16, 32, 32, 64, 64)
FCA_UNITS = 512
FEATURE_WIDTH = 256

_MAGIC = b"LPDRNET\0"
_VERSION = 1


class CharNet(nn.Module):
    """conv1-conv2-pool-conv3-conv4-pool-convCA-convCB-pool-fcFCA-(tap)-fcFCB.

    The 256-wide feature tap sums adjacent pairs of the 512 fcFCA
    activations, so it adds no parameters.  fcFCB sees the visual-word
    histogram concatenated with that tap.
    """

    def __init__(self, n_classes: int = len(ALPHABET), widths=DEFAULT_WIDTHS, n_words: int = N_WORDS):
        super().__init__()
        self.widths = tuple(int(w) for w in widths)
        self.n_words = n_words
        chans = (1,) + self.widths
        for name, cin, cout in zip(CONV_LAYERS, chans[:-1], chans[1:]):
            setattr(self, name, nn.Conv2d(cin, cout, 3, padding=1))
        side = CHAR_SIZE // 8
        self.fcFCA = nn.Linear(self.widths[-1] * side * side, FCA_UNITS)
        self.fcFCB = nn.Linear(n_words + FEATURE_WIDTH, n_classes)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Input ``(n, 1, 32, 32)`` in [0, 1]; returns the ``(n, 256)`` tap."""
        x = F.relu(self.conv2(F.relu(self.conv1(x))))
        x = F.max_pool2d(x, 2)
        x = F.relu(self.conv4(F.relu(self.conv3(x))))
        x = F.max_pool2d(x, 2)
        x = F.relu(self.convCB(F.relu(self.convCA(x))))
        x = F.max_pool2d(x, 2)
        a = F.relu(self.fcFCA(x.flatten(1)))
        return a.view(len(a), FEATURE_WIDTH, 2).sum(2)

    def forward(self, x: torch.Tensor, bow: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        feat = self.features(x)
        return feat, self.fcFCB(torch.cat([bow, feat], 1))


def he_uniform_(layer: nn.Module, gen: torch.Generator) -> None:
    w = layer.weight
    fan_in = w[0].numel()
    bound = np.sqrt(6.0 / fan_in)
    with torch.no_grad():
        w.copy_(torch.rand(w.shape, generator=gen, dtype=w.dtype) * (2 * bound) - bound)
        layer.bias.zero_()


def init_layers(net: CharNet, names, seed: int) -> None:
    gen = torch.Generator().manual_seed(int(seed))
    for name in names:
        he_uniform_(getattr(net, name), gen)


class HybridModel:
    """CNN plus codebook; ``use_sift=False`` feeds zeros in place of the histogram."""

    def __init__(self, net: CharNet, codebook: Codebook | None = None, classes: str = ALPHABET,
                 use_sift: bool = True, frozen=()):
        if use_sift and codebook is None:
            raise ModelError("a SIFT-fused model needs a codebook")
        if net.fcFCB.out_features != len(classes):
            raise ModelError(f"head has {net.fcFCB.out_features} outputs for {len(classes)} classes")
        self.net = net
        self.codebook = codebook
        self.classes = classes
        self.use_sift = use_sift
        self.frozen = tuple(frozen)
        self.apply_freeze()

    @classmethod
    def create(cls, codebook: Codebook | None = None, classes: str = ALPHABET, use_sift: bool = True,
               widths=DEFAULT_WIDTHS, seed: int = 0) -> "HybridModel":
        net = CharNet(len(classes), widths)
        init_layers(net, LAYERS, seed)
        return cls(net, codebook, classes, use_sift)

    def apply_freeze(self) -> None:
        for name in LAYERS:
            for p in getattr(self.net, name).parameters():
                p.requires_grad_(name not in self.frozen)

    def trainable_parameters(self):
        return [p for name in LAYERS if name not in self.frozen
                for p in getattr(self.net, name).parameters()]

    # --- inputs --------------------------------------------------------------

    def bows(self, images) -> np.ndarray:
        if not self.use_sift:
            return np.zeros((len(images), self.net.n_words))
        return bow_matrix(char_descriptor_batch(np.asarray(images)), self.codebook)

    @staticmethod
    def pixels(images) -> torch.Tensor:
        a = np.asarray(images)
        if a.ndim == 2:
            a = a[None]
        if a.shape[1:] != (CHAR_SIZE, CHAR_SIZE):
            raise ModelError(f"expected {CHAR_SIZE}x{CHAR_SIZE} characters, got {a.shape[1:]}")
        return torch.from_numpy(a.astype(np.float32) / 255.0)[:, None]

    def tensors(self, images, bows=None):
        x = self.pixels(images)
        b = self.bows(images) if bows is None else np.asarray(bows)
        return x, torch.from_numpy(b.astype(np.float32))

    # --- inference -----------------------------------------------------------

    @torch.no_grad()
    def logits_batch(self, images, bows=None) -> np.ndarray:
        self.net.eval()
        if len(images) == 0:
            return np.zeros((0, len(self.classes)), dtype=np.float32)
        x, b = self.tensors(images, bows)
        return self.net(x, b)[1].numpy()

    def classify_batch(self, images, bows=None) -> np.ndarray:
        """``(n, n_classes)`` softmax probabilities."""
        return softmax(self.logits_batch(images, bows))

    def classify(self, img) -> np.ndarray:
        return self.classify_batch(np.asarray(img)[None])[0]

    def fingerprint(self, names=TRANSFER_LAYERS) -> str:
        return weights_hash(self.net, names)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@torch.no_grad()
def cnn_forward(img, model: HybridModel, bow=None) -> tuple[np.ndarray, np.ndarray]:
    """(256-d feature tap, pre-softmax head output) for one character; ``bow`` defaults to zeros."""
    model.net.eval()
    x = model.pixels(img)
    if len(x) != 1:
        raise ModelError("cnn_forward takes a single character")
    b = torch.zeros(1, model.net.n_words) if bow is None else torch.as_tensor(
        np.asarray(bow, dtype=np.float32)).reshape(1, -1)
    feat, logits = model.net(x, b)
    return feat[0].numpy(), logits[0].numpy()


def weights_hash(net: CharNet, names) -> str:
    h = hashlib.sha256()
    for name in names:
        for p in getattr(net, name).parameters():
            h.update(p.detach().numpy().tobytes())
    return h.hexdigest()


def transfer_init(pretrained: HybridModel, codebook: Codebook | None = None, classes: str | None = None,
                  use_sift: bool = True, seed: int = 0) -> HybridModel:
    """Copy and freeze conv1-conv4; re-initialise the four remaining layers."""
    src = pretrained.net
    classes = pretrained.classes if classes is None else classes
    net = CharNet(len(classes), src.widths, src.n_words)
    try:
        for name in TRANSFER_LAYERS:
            getattr(net, name).load_state_dict(getattr(src, name).state_dict())
    except RuntimeError as e:
        raise TransferError(f"layer shapes differ: {e}") from None
    init_layers(net, [n for n in LAYERS if n not in TRANSFER_LAYERS], seed)
    return HybridModel(net, codebook if codebook is not None else pretrained.codebook, classes,
                       use_sift, frozen=TRANSFER_LAYERS)


# --- model file ------------------------------------------------------------

def _blob(obj) -> bytes:
    return struct.pack("<Q", len(obj)) + obj


def model_bytes(model: HybridModel) -> bytes:
    net = model.net
    tensors = [(f"{layer}.{kind}", getattr(getattr(net, layer), kind)) for layer in LAYERS
               for kind in ("weight", "bias")]
    header = {
        "classes": model.classes,
        "widths": list(net.widths),
        "n_words": net.n_words,
        "use_sift": model.use_sift,
        "frozen": list(model.frozen),
        "tensors": [[name, list(t.shape)] for name, t in tensors],
        "codebook": model.codebook is not None,
    }
    parts = [_MAGIC, struct.pack("<I", _VERSION), _blob(json.dumps(header, sort_keys=True).encode())]
    for _, t in tensors:
        parts.append(t.detach().numpy().astype("<f4").tobytes())
    if model.codebook is not None:
        parts.append(_blob(model.codebook.to_bytes()))
    return b"".join(parts)


def model_from_bytes(buf: bytes) -> HybridModel:
    try:
        if buf[:8] != _MAGIC:
            raise ModelError("not a model file (bad magic)")
        (version,) = struct.unpack_from("<I", buf, 8)
        if version != _VERSION:
            raise ModelError(f"unsupported model version {version}")
        (n,) = struct.unpack_from("<Q", buf, 12)
        pos = 20 + n
        header = json.loads(buf[20:pos])
        net = CharNet(len(header["classes"]), header["widths"], header["n_words"])
        params = dict(net.named_parameters())
        for name, shape in header["tensors"]:
            count = int(np.prod(shape))
            arr = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape)
            pos += 4 * count
            if name not in params or tuple(params[name].shape) != tuple(shape):
                raise ModelError(f"tensor {name} {shape} does not fit the network")
            with torch.no_grad():
                params[name].copy_(torch.from_numpy(arr.astype(np.float32)))
        codebook = None
        if header["codebook"]:
            (n,) = struct.unpack_from("<Q", buf, pos)
            codebook = Codebook.from_bytes(buf[pos + 8:pos + 8 + n])
            pos += 8 + n
        if pos != len(buf):
            raise ModelError(f"{len(buf) - pos} trailing bytes in model file")
        return HybridModel(net, codebook, header["classes"], header["use_sift"], header["frozen"])
    except (struct.error, ValueError, KeyError, TypeError) as e:
        raise ModelError(f"corrupt model file: {e}") from None


def save_model(model: HybridModel, path) -> None:
    Path(path).write_bytes(model_bytes(model))


def load_model(path) -> HybridModel:
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise ModelError(f"cannot read model {path}: {e}") from None
    return model_from_bytes(buf)
