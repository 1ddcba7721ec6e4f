"""The four architectures as layer graphs, and transfer-learning surgery.

Node names follow one scheme so that layer selections can be written by hand:

* ``enc{l}{a,b}`` – encoder conv blocks at level ``l`` (conv, bn, act)
* ``pool{l}`` – max pooling after encoder level ``l``
* ``bott{a,b}`` – bottleneck conv blocks
* ``up{l}`` / ``cat{l}`` – upsampling into decoder level ``l`` and the skip
  concatenation with ``enc{l}b``
* ``dec{l}{a,b}`` – decoder conv blocks; ``dec1`` is the last stage
* ``out`` – kernel-1 output conv
* ``head{i}``, ``gap``, ``head_out``, ``sigmoid`` – regression head

A conv block ``enc1a`` consists of nodes ``enc1a.conv``, ``enc1a.bn`` and
``enc1a.act``; selecting the block selects all three.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ShapeError, TransferError
from .nn.graph import Graph, ParamStore, count_params_and_flops
from .nn.layers import (BatchNorm1d, Concat, Conv1d, DepthwiseSeparableConv1d, GlobalAveragePool1d, MaxPool1d,
                        PReLU, RepeatUpsample1d, Sigmoid, TransposedConv1d)

ARCHITECTURES = ("unet", "mobile-unet", "conv-net", "mobile-net")
CURVE_ARCHS = ("unet", "mobile-unet")
SOH_ARCHS = ("conv-net", "mobile-net")
SOURCE_ARCH = {"conv-net": "unet", "mobile-net": "mobile-unet"}


@dataclass
class UNetPlan:
    levels: int = 4
    channels: tuple[int, ...] = (16, 32, 64, 96)
    bottleneck: int = 128
    outer_kernel: int = 7
    inner_kernel: int = 5
    convs_per_stage: int = 2
    out_channels: int = 3
    bn_momentum: float = 0.99
    bn_eps: float = 1e-3

    def __post_init__(self):
        self.channels = tuple(self.channels)
        if len(self.channels) != self.levels:
            raise ShapeError(f"plan has {self.levels} levels but {len(self.channels)} channel widths")

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


@dataclass
class HeadPlan:
    channels: tuple[int, ...] = (64, 32)
    kernel: int = 3
    stride: int = 2
    n_outputs: int = 1
    sigmoid: bool = True

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


@dataclass
class ModelSpec:
    arch: str
    n_nn: int
    graph: Graph
    plan: dict = field(default_factory=dict)

    @property
    def output_shape(self):
        return self.graph.output_shape


def _conv(mobile, cin, cout, k, stride=1, bias=True):
    if mobile:
        return DepthwiseSeparableConv1d(cin, cout, k, stride, bias)
    return Conv1d(cin, cout, k, stride, bias)


def _block(g: Graph, name, src, mobile, cin, cout, k, plan, stride=1):
    g.add(f"{name}.conv", _conv(mobile, cin, cout, k, stride, bias=False), src)
    g.add(f"{name}.bn", BatchNorm1d(cout, plan.bn_momentum, plan.bn_eps))
    return g.add(f"{name}.act", PReLU(cout))


def _build(n_nn: int, plan: UNetPlan, mobile: bool) -> Graph:
    if n_nn % (2 ** plan.levels):
        raise ShapeError(f"N_nn={n_nn} is not divisible by 2**levels={2 ** plan.levels}")
    g = Graph((2, n_nn))
    last = plan.levels
    src, cin = "input", 2
    skips = {}
    for lvl in range(1, last + 1):
        k = plan.outer_kernel if lvl == 1 else plan.inner_kernel
        cout = plan.channels[lvl - 1]
        for j in range(plan.convs_per_stage):
            src = _block(g, f"enc{lvl}{'ab'[j] if j < 2 else j}", src, mobile, cin, cout, k, plan)
            cin = cout
        skips[lvl] = src
        src = g.add(f"pool{lvl}", MaxPool1d(2), src)
    for j in range(plan.convs_per_stage):
        src = _block(g, f"bott{'ab'[j] if j < 2 else j}", src, mobile, cin, plan.bottleneck, plan.inner_kernel, plan)
        cin = plan.bottleneck
    for lvl in range(last, 0, -1):
        cout = plan.channels[lvl - 1]
        if mobile:
            src = g.add(f"up{lvl}", RepeatUpsample1d(2), src)
            up_ch = cin
        else:
            src = g.add(f"up{lvl}", TransposedConv1d(cin, cout, 2, 2, True), src)
            up_ch = cout
        src = g.add(f"cat{lvl}", Concat(), src, skips[lvl])
        cin = up_ch + cout
        k = plan.outer_kernel if lvl == 1 else plan.inner_kernel
        for j in range(plan.convs_per_stage):
            src = _block(g, f"dec{lvl}{'ab'[j] if j < 2 else j}", src, mobile, cin, cout, k, plan)
            cin = cout
    g.add("out", _conv(mobile, cin, plan.out_channels, 1, 1, bias=True), src)
    return g


def build_unet(n_nn: int = 128, plan: UNetPlan | None = None) -> ModelSpec:
    """Encoder/decoder with transposed-conv upsampling and skip concatenation."""
    plan = plan or UNetPlan()
    return ModelSpec("unet", n_nn, _build(n_nn, plan, mobile=False), plan.to_dict())


def build_mobile_unet(n_nn: int = 128, plan: UNetPlan | None = None) -> ModelSpec:
    """Same level/channel plan as ``build_unet`` with depthwise-separable
    convolutions and parameter-free repeat upsampling."""
    plan = plan or UNetPlan()
    return ModelSpec("mobile-unet", n_nn, _build(n_nn, plan, mobile=True), plan.to_dict())


def build_curve_model(arch: str, n_nn: int = 128, plan: UNetPlan | None = None) -> ModelSpec:
    if arch == "unet":
        return build_unet(n_nn, plan)
    if arch == "mobile-unet":
        return build_mobile_unet(n_nn, plan)
    raise TransferError(f"{arch!r} is not a curve architecture")


def contraction_nodes(graph: Graph) -> list[str]:
    return [n.name for n in graph.nodes if n.name.startswith(("enc", "pool", "bott"))]


def _head_graph(source: Graph, mobile: bool, head: HeadPlan, plan: UNetPlan) -> Graph:
    g = Graph(tuple(source.input_shape))
    keep = set(contraction_nodes(source))
    for n in source.nodes:
        if n.name in keep:
            g.add(n.name, n.layer, *n.inputs)
    src = g.output
    cin = source.shapes()[src][0]
    for i, cout in enumerate(head.channels, start=1):
        src = _block(g, f"head{i}", src, mobile, cin, cout, head.kernel, plan, stride=head.stride)
        cin = cout
    g.add("gap", GlobalAveragePool1d(), src)
    g.add("head_out", _conv(mobile, cin, head.n_outputs, 1, 1, bias=True))
    if head.sigmoid:
        g.add("sigmoid", Sigmoid())
    return g


@dataclass
class TransferPlan:
    source_arch: str
    copied: list[str]
    trainable: list[str]
    head: list[str]

    def to_dict(self):
        return asdict(self)


def transfer_head(source: ModelSpec, source_params: ParamStore, arch: str, head: HeadPlan | None = None,
                  rng: np.random.Generator | None = None, plan: UNetPlan | None = None):
    """Copy the frozen contraction path of ``source`` and append a new head.

    Returns ``(spec, params, transfer_plan)``; copied parameters are frozen
    copies, head parameters are freshly He-initialized and trainable.
    """
    expected = {"conv-net": "unet", "mobile-net": "mobile-unet", "feature-net": None,
                "mobile-feature-net": None}
    if arch not in expected:
        raise TransferError(f"unknown head architecture {arch!r}")
    want = expected[arch]
    if want is None:
        want = "mobile-unet" if arch.startswith("mobile") else "unet"
    if source.arch != want:
        raise TransferError(f"{arch} needs a {want} source checkpoint, got {source.arch}")
    head = head or HeadPlan()
    plan = plan or UNetPlan(**{k: v for k, v in source.plan.items()})
    rng = rng if rng is not None else np.random.default_rng(0)
    mobile = arch.startswith("mobile")
    g = _head_graph(source.graph, mobile, head, plan)
    params = g.init_params(rng, dtype=next(iter(source_params.values.values())).dtype)
    copied = contraction_nodes(source.graph)
    for key in list(params.values):
        node = key.split("/", 1)[0]
        if node in copied:
            params.values[key] = source_params.values[key].copy()
            params.trainable[key] = False
    head_nodes = [n.name for n in g.nodes if n.name not in copied]
    tp = TransferPlan(source.arch, copied, head_nodes, head_nodes)
    spec = ModelSpec(arch, source.n_nn, g, {**source.plan, "head": head.to_dict()})
    return spec, params, tp


def build_convnet(source: ModelSpec, source_params: ParamStore, head: HeadPlan | None = None, rng=None):
    """Conv-Net on top of a trained U-Net's frozen contraction path."""
    return transfer_head(source, source_params, "conv-net", head or HeadPlan(), rng)


def build_mobilenet(source: ModelSpec, source_params: ParamStore, head: HeadPlan | None = None, rng=None):
    """Mobile-Net on top of a trained Mobile U-Net's frozen contraction path."""
    return transfer_head(source, source_params, "mobile-net", head or HeadPlan(), rng)


def build_feature_head(source: ModelSpec, source_params: ParamStore, n_features: int, rng=None):
    """Regression head predicting ``n_features`` standardized curve features."""
    if n_features < 1:
        raise TransferError("n_features must be >= 1")
    arch = "mobile-feature-net" if source.arch == "mobile-unet" else "feature-net"
    return transfer_head(source, source_params, arch, HeadPlan(n_outputs=n_features, sigmoid=False), rng)


# ---------------------------------------------------------------------------
# layer selections for fine-tuning
# ---------------------------------------------------------------------------

def conv_nodes(graph: Graph) -> list[str]:
    kinds = ("Conv1d", "DepthwiseSeparableConv1d")
    return [n.name for n in graph.nodes if n.layer.kind in kinds]


def block_of(graph: Graph, conv_name: str) -> list[str]:
    """A conv node plus its batch-norm and activation siblings."""
    base = conv_name[:-len(".conv")] if conv_name.endswith(".conv") else conv_name
    names = {n.name for n in graph.nodes}
    out = [conv_name]
    for suffix in (".bn", ".act"):
        if base + suffix in names:
            out.append(base + suffix)
    return out


def preset_selection(spec: ModelSpec, preset: str) -> list[str]:
    """Node names made trainable by a fine-tuning preset.

    ``first4-last5``: the first four convolutions of the contraction path;
    for curve models also the last five convolutions plus the upsampling
    layer feeding the last decoder stage; for SOH models the last two
    convolutions. ``all``: every node. ``none``: nothing.
    """
    g = spec.graph
    if preset == "none":
        return []
    if preset == "all":
        return [n.name for n in g.nodes]
    if preset != "first4-last5":
        raise TransferError(f"unknown fine-tune preset {preset!r}")
    convs = conv_nodes(g)
    contraction = [c for c in convs if c.startswith(("enc", "bott"))]
    picked = contraction[:4]
    if spec.arch in CURVE_ARCHS:
        picked += convs[-5:]
        picked.append("up1")
    else:
        picked += convs[-2:]
    nodes = []
    for name in picked:
        for n in (block_of(g, name) if name != "up1" else [name]):
            if n not in nodes:
                nodes.append(n)
    return nodes


def apply_selection(spec: ModelSpec, params: ParamStore, nodes: list[str]) -> ParamStore:
    """Copy of ``params`` with exactly the learnable params of ``nodes`` trainable."""
    names = {n.name for n in spec.graph.nodes}
    unknown = [n for n in nodes if n not in names]
    if unknown:
        raise TransferError(f"unknown layer names: {unknown}")
    out = params.copy()
    out.set_trainable(names, False, spec.graph)
    out.set_trainable(nodes, True, spec.graph)
    return out


def summary_counts(spec: ModelSpec, params: ParamStore | None = None) -> dict:
    total, trainable, fixed, flops = count_params_and_flops(spec.graph)
    if params is not None:
        total, trainable, fixed = params.counts()
    return {"arch": spec.arch, "total": total, "trainable": trainable, "fixed": fixed, "flops": flops}
