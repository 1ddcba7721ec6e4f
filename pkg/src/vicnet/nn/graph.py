"""Layer graphs, parameter stores and the forward/backward driver."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from ..errors import NumericError, ShapeError, StateError
from .layers import Layer, layer_from_dict

INPUT = "input"


@dataclass(frozen=True)
class Node:
    name: str
    layer: Layer
    inputs: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"name": self.name, "layer": self.layer.to_dict(), "inputs": list(self.inputs)}

    @classmethod
    def from_dict(cls, d: dict) -> "Node":
        return cls(d["name"], layer_from_dict(d["layer"]), tuple(d["inputs"]))


@dataclass
class Graph:
    """A DAG of layers listed in topological order; the last node is the output.

    ``input_shape`` is ``(channels, length)`` of one sample.
    """

    input_shape: tuple[int, int]
    nodes: list[Node] = field(default_factory=list)

    def add(self, name: str, layer: Layer, *inputs: str) -> str:
        """Append a node; with no inputs it consumes the previous node's output."""
        if any(n.name == name for n in self.nodes) or name == INPUT:
            raise ShapeError(f"duplicate node name {name!r}")
        if not inputs:
            inputs = (self.nodes[-1].name if self.nodes else INPUT,)
        self.nodes.append(Node(name, layer, tuple(inputs)))
        return name

    @property
    def output(self) -> str:
        return self.nodes[-1].name if self.nodes else INPUT

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def shapes(self) -> dict[str, tuple[int, int]]:
        """Per-sample (channels, length) of every node output."""
        shapes = {INPUT: tuple(self.input_shape)}
        for n in self.nodes:
            try:
                ins = [shapes[i] for i in n.inputs]
            except KeyError as exc:
                raise ShapeError(f"input {exc.args[0]!r} is not defined before this node", n.name) from None
            try:
                shapes[n.name] = tuple(n.layer.output_shape(ins))
            except ShapeError as exc:
                raise ShapeError(str(exc), n.name) from None
        return shapes

    @property
    def output_shape(self) -> tuple[int, int]:
        return self.shapes()[self.output]

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = self.shapes()
        out = {}
        for n in self.nodes:
            ins = [shapes[i] for i in n.inputs]
            for pname, shp in n.layer.param_shapes(ins).items():
                out[f"{n.name}/{pname}"] = tuple(shp)
        return out

    def init_params(self, rng: np.random.Generator, dtype=np.float32) -> "ParamStore":
        shapes = self.shapes()
        values, trainable = {}, {}
        for n in self.nodes:
            ins = [shapes[i] for i in n.inputs]
            for pname, arr in n.layer.init_params(ins, rng, dtype).items():
                key = f"{n.name}/{pname}"
                values[key] = arr
                trainable[key] = pname not in n.layer.fixed_params
        return ParamStore(values, trainable)

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape), "nodes": [n.to_dict() for n in self.nodes]}

    @classmethod
    def from_dict(cls, d: dict) -> "Graph":
        return cls(tuple(d["input_shape"]), [Node.from_dict(n) for n in d["nodes"]])


@dataclass
class ParamStore:
    """Named parameter arrays ("node/param") plus a trainable flag for each."""

    values: dict[str, np.ndarray]
    trainable: dict[str, bool]

    def _keys(self, node: str) -> list[str]:
        index = self.__dict__.get("_index")
        if index is None or index[0] != len(self.values):
            table: dict[str, list[str]] = {}
            for k in self.values:
                table.setdefault(k.split("/", 1)[0], []).append(k)
            index = (len(self.values), table)
            self.__dict__["_index"] = index
        return index[1].get(node, [])

    def node_params(self, node: str) -> dict[str, np.ndarray]:
        return {k.split("/", 1)[1]: self.values[k] for k in self._keys(node)}

    def node_frozen(self, node: Node) -> bool:
        fixed = node.layer.fixed_params
        return not any(self.trainable[k] for k in self._keys(node.name) if k.split("/", 1)[1] not in fixed)

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.values.items()}, dict(self.trainable))

    def set_trainable(self, nodes: Iterable[str], flag: bool, graph: Graph) -> None:
        """Set the flag on every learnable parameter of the given nodes."""
        for name in nodes:
            node = graph.node(name)
            for k in self.values:
                if k.startswith(name + "/") and k.split("/", 1)[1] not in node.layer.fixed_params:
                    self.trainable[k] = flag

    def counts(self) -> tuple[int, int, int]:
        total = sum(v.size for v in self.values.values())
        trainable = sum(v.size for k, v in self.values.items() if self.trainable[k])
        return total, trainable, total - trainable


def to_internal(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.swapaxes(x, 1, 2))


def to_external(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.swapaxes(x, 1, 2))


def static_nodes(graph: Graph, params: ParamStore) -> set[str]:
    """Nodes whose output does not depend on any trainable parameter."""
    static = {INPUT}
    for n in graph.nodes:
        if params.node_frozen(n) and all(i in static for i in n.inputs):
            static.add(n.name)
    return static


def _check_input(graph: Graph, x: np.ndarray) -> None:
    if x.ndim != 3 or tuple(x.shape[1:]) != tuple(graph.input_shape):
        raise ShapeError(f"input shape {x.shape} does not match graph input (batch, "
                         f"{graph.input_shape[0]}, {graph.input_shape[1]})", INPUT)


def forward_internal(graph: Graph, params: ParamStore, feeds: dict[str, np.ndarray], mode: str = "eval",
                     cache: dict | None = None, keep: Iterable[str] = (), update_stats: bool = True):
    """Evaluate the graph on (batch, length, channels) activations.

    ``feeds`` maps node names (including ``"input"``) to precomputed outputs;
    those nodes are not re-evaluated. Returns ``{output: y, **kept}``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    acts = dict(feeds)
    keep = set(keep) | {graph.output}
    # only evaluate what the requested outputs depend on, stopping at the feeds
    needed = set(keep)
    for n in reversed(graph.nodes):
        if n.name in needed and n.name not in acts:
            needed.update(n.inputs)
    consumers: dict[str, int] = {}
    for n in graph.nodes:
        if n.name in needed and n.name not in acts:
            for i in n.inputs:
                consumers[i] = consumers.get(i, 0) + 1
    if cache is not None:
        cache.clear()
        cache["order"] = []
        cache["feeds"] = set(feeds)
    for n in graph.nodes:
        if n.name in acts or n.name not in needed:
            continue
        xs = [acts[i] for i in n.inputs]
        p = params.node_params(n.name)
        frozen = params.node_frozen(n)
        y, layer_cache = n.layer.forward(p, xs, train, frozen)
        if not np.all(np.isfinite(y)):
            raise NumericError(f"non-finite activation in node {n.name!r}")
        if train and layer_cache is not None and n.layer.kind == "BatchNorm1d" and update_stats:
            updates = layer_cache[3]
            if updates is not None:
                for pname, val in updates.items():
                    params.values[f"{n.name}/{pname}"][...] = val
        acts[n.name] = y
        if cache is not None:
            cache["order"].append(n.name)
            cache[n.name] = layer_cache
        if cache is None:
            # free activations no longer needed
            for i in n.inputs:
                consumers[i] -= 1
                if consumers[i] == 0 and i not in keep:
                    acts.pop(i, None)
    if cache is not None:
        cache["output_shape"] = acts[graph.output].shape
    return {k: acts[k] for k in keep if k in acts}


def forward(graph: Graph, params: ParamStore, x: np.ndarray, mode: str = "eval",
            cache: dict | None = None) -> np.ndarray:
    """Run the graph on a (batch, channels, length) tensor.

    In train mode pass an empty dict as ``cache``; it is filled with the
    intermediates ``backward`` needs. Batch norm uses mini-batch statistics
    (and updates its moving statistics) in train mode unless the layer is
    frozen; eval mode always uses the moving statistics.
    """
    _check_input(graph, x)
    dtype = next(iter(params.values.values())).dtype if params.values else x.dtype
    feeds = {INPUT: to_internal(x.astype(dtype, copy=False))}
    out = forward_internal(graph, params, feeds, mode, cache)
    return to_external(out[graph.output])


def backward(graph: Graph, params: ParamStore, cache: dict | None, dy: np.ndarray,
             internal: bool = False) -> dict[str, np.ndarray]:
    """Gradients of every trainable parameter given d(loss)/d(output).

    ``dy`` is (batch, channels, length) unless ``internal`` is true.
    Frozen parameters are omitted from the result.
    """
    if not cache or "order" not in cache:
        raise StateError("backward called without a train-mode forward cache")
    if not internal:
        dy = to_internal(dy)
    if tuple(dy.shape) != tuple(cache["output_shape"]):
        raise ShapeError(f"gradient shape {dy.shape} does not match output {cache['output_shape']}")
    evaluated = set(cache["order"])
    needs: dict[str, bool] = {INPUT: False}
    for n in graph.nodes:
        if n.name not in evaluated:
            needs[n.name] = False
            continue
        own = not params.node_frozen(n)
        needs[n.name] = own or any(needs.get(i, False) for i in n.inputs)
    grads_act: dict[str, np.ndarray] = {graph.output: dy}
    grads: dict[str, np.ndarray] = {}
    for n in reversed(graph.nodes):
        if n.name not in evaluated or not needs[n.name]:
            continue
        g = grads_act.pop(n.name, None)
        if g is None:
            continue
        p = params.node_params(n.name)
        need_dx = [needs.get(i, False) for i in n.inputs]
        dxs, pgrads = n.layer.backward(p, cache[n.name], g, need_dx)
        for pname, val in pgrads.items():
            key = f"{n.name}/{pname}"
            if params.trainable.get(key, False):
                grads[key] = val
        for i, dx, need in zip(n.inputs, dxs, need_dx):
            if need and dx is not None:
                if i in grads_act:
                    grads_act[i] = grads_act[i] + dx
                else:
                    grads_act[i] = dx
    return grads


def count_params_and_flops(graph: Graph) -> tuple[int, int, int, int]:
    """(total, trainable, fixed, flops) for a freshly initialized graph.

    Batch-norm moving statistics are the only fixed parameters of a fresh
    graph; use ``ParamStore.counts`` for stores with frozen layers.
    FLOPs are for one forward pass at batch size 1.
    """
    if not graph.nodes:
        return 0, 0, 0, 0
    shapes = graph.shapes()
    total = fixed = flops = 0
    for n in graph.nodes:
        ins = [shapes[i] for i in n.inputs]
        for pname, shp in n.layer.param_shapes(ins).items():
            size = int(np.prod(shp))
            total += size
            if pname in n.layer.fixed_params:
                fixed += size
        flops += n.layer.flops(ins)
    return total, total - fixed, fixed, flops


def count_with_store(graph: Graph, params: ParamStore) -> tuple[int, int, int, int]:
    total, trainable, fixed = params.counts()
    return total, trainable, fixed, count_params_and_flops(graph)[3]
