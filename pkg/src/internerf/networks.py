"""Network layouts, parameter partitioning and field evaluation.

A model is a sequence of networks (two proposal networks and a final one).
Each network owns a feature grid, a geometry MLP and optionally an
appearance MLP. For networks flagged ``interpolated`` the hashed grid levels
and all MLP layers live in per-vertex parameter sets; everything else is
shared.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import diffnet as dn
from .errors import ContractError
from .featgrid import (
    GridConfig,
    gather_corners,
    level_corners,
    level_entries,
    level_is_dense,
    level_resolutions,
)
from .interp import MixedLinear, blend


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    grid: GridConfig
    geo_hidden: int = 64
    app_hidden: tuple = ()
    dir_degree: int = 4
    interpolated: bool = False

    @property
    def has_appearance(self) -> bool:
        return bool(self.app_hidden)


@dataclass(frozen=True)
class ModelSpec:
    networks: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not self.networks or not self.networks[-1].has_appearance:
            raise ContractError("the last network must predict color")

    def network(self, name: str) -> NetworkSpec:
        for net in self.networks:
            if net.name == name:
                return net
        raise KeyError(name)

    @property
    def proposals(self) -> tuple:
        return self.networks[:-1]

    @property
    def final(self) -> NetworkSpec:
        return self.networks[-1]

    def to_dict(self) -> dict:
        return {"networks": [asdict(n) for n in self.networks]}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        nets = []
        for n in d["networks"]:
            n = dict(n)
            n["grid"] = GridConfig(**n["grid"])
            n["app_hidden"] = tuple(n["app_hidden"])
            nets.append(NetworkSpec(**n))
        return cls(tuple(nets))


def _mlp_shapes(net: NetworkSpec) -> dict:
    shapes = {
        f"{net.name}.geo.hidden.W": (net.geo_hidden, net.grid.output_width),
        f"{net.name}.geo.hidden.b": (net.geo_hidden,),
        f"{net.name}.geo.out.W": (1, net.geo_hidden),
        f"{net.name}.geo.out.b": (1,),
    }
    if net.has_appearance:
        widths = [net.geo_hidden + 6 * net.dir_degree, *net.app_hidden, 3]
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            shapes[f"{net.name}.app.{i}.W"] = (fan_out, fan_in)
            shapes[f"{net.name}.app.{i}.b"] = (fan_out,)
    return shapes


def param_shapes(spec: ModelSpec) -> dict:
    """Every parameter name and shape, in canonical (serialization) order."""
    shapes = {}
    for net in spec.networks:
        for level, n in enumerate(level_entries(net.grid)):
            shapes[f"{net.name}.grid.{level}"] = (n, net.grid.features_per_entry)
        shapes.update(_mlp_shapes(net))
    return shapes


def _is_vertex_key(spec: ModelSpec, key: str) -> bool:
    name, kind, *rest = key.split(".")
    net = spec.network(name)
    if not net.interpolated:
        return False
    if kind == "grid":
        return not level_is_dense(net.grid)[int(rest[0])]
    return True


def vertex_shapes(spec: ModelSpec) -> dict:
    return {k: s for k, s in param_shapes(spec).items() if _is_vertex_key(spec, k)}


def shared_shapes(spec: ModelSpec) -> dict:
    return {k: s for k, s in param_shapes(spec).items() if not _is_vertex_key(spec, k)}


def init_params(shapes: dict, rng, dtype=np.float32) -> dict:
    """Tables uniform in +-1e-4, weights uniform in +-1/sqrt(fan_in), biases zero."""
    params = {}
    for key, shape in shapes.items():
        if ".grid." in key:
            params[key] = rng.uniform(-1e-4, 1e-4, size=shape).astype(dtype)
        elif key.endswith(".W"):
            s = 1.0 / np.sqrt(shape[1])
            params[key] = rng.uniform(-s, s, size=shape).astype(dtype)
        else:
            params[key] = np.zeros(shape, dtype=dtype)
    return params


def init_shared(spec: ModelSpec, seed: int, dtype=np.float32) -> dict:
    return init_params(shared_shapes(spec), np.random.default_rng([seed, 0]), dtype)


def init_vertex(spec: ModelSpec, seed: int, vertex_id: int, dtype=np.float32) -> dict:
    return init_params(vertex_shapes(spec), np.random.default_rng([seed, 1, vertex_id]), dtype)


def table_keys(spec: ModelSpec, net: NetworkSpec) -> list:
    return [f"{net.name}.grid.{level}" for level in range(net.grid.levels)]


# -- evaluation --------------------------------------------------------------


@dataclass
class FieldOutput:
    tau: object
    rgb: Optional[object] = None
    bottleneck: Optional[object] = None


class Field:
    """Parameters bound for evaluation: shared values plus vertex sets.

    Values may be numpy arrays or :class:`~internerf.diffnet.Var` leaves.
    ``vertex_sets`` holds either four sets in the (SW, SE, NW, NE) corner
    order of the cell the mixing weights refer to, or a single set that is
    evaluated directly without mixing.
    """

    def __init__(self, spec: ModelSpec, shared: dict, vertex_sets: Optional[Sequence[dict]] = None):
        self.spec = spec
        self.shared = shared
        self.vertex_sets = list(vertex_sets) if vertex_sets is not None else None
        if self.vertex_sets is not None and len(self.vertex_sets) not in (1, 4):
            raise ContractError("expected four vertex parameter sets (or one, unmixed)")
        if self.vertex_sets is None and any(n.interpolated for n in spec.networks):
            raise ContractError("interpolated networks need four resident vertex sets")

    def _layer(self, net: NetworkSpec, prefix: str, w):
        if net.interpolated and len(self.vertex_sets) == 1:
            vs = self.vertex_sets[0]
            return dn.LinearLayer(vs[prefix + ".W"], vs[prefix + ".b"])
        if net.interpolated:
            layers = [dn.LinearLayer(vs[prefix + ".W"], vs[prefix + ".b"]) for vs in self.vertex_sets]
            return MixedLinear(layers, w)
        return dn.LinearLayer(self.shared[prefix + ".W"], self.shared[prefix + ".b"])

    def encode(self, net: NetworkSpec, x, w):
        """Grid features at ``x`` [P, 3]; hashed levels mixed when interpolated."""
        feats = []
        dense = level_is_dense(net.grid)
        for level, res in enumerate(level_resolutions(net.grid)):
            key = f"{net.name}.grid.{level}"
            corners = level_corners(x, res, dense[level], net.grid.table_size)
            if net.interpolated and not dense[level] and len(self.vertex_sets) == 1:
                feats.append(gather_corners(self.vertex_sets[0][key], corners))
            elif net.interpolated and not dense[level]:
                feats.append(blend([gather_corners(vs[key], corners) for vs in self.vertex_sets], w))
            else:
                feats.append(gather_corners(self.shared[key], corners))
        return dn.concat(feats, axis=-1)

    def evaluate(self, name: str, x, w=None, d_enc=None) -> FieldOutput:
        """Density (and color for the final network) at points ``x``.

        ``w`` holds per-point (``[P, 4]``) or global (``[4]``) mixing weights;
        it is ignored by networks that are not interpolated.
        """
        net = self.spec.network(name)
        if net.interpolated and w is None and len(self.vertex_sets) == 4:
            raise ContractError(f"network {name} is interpolated and needs mixing weights")
        z = self.encode(net, x, w)
        geo = dn.GeometryParams(
            self._layer(net, f"{name}.geo.hidden", w), self._layer(net, f"{name}.geo.out", w)
        )
        tau, bottleneck = dn.geometry_mlp(geo, z)
        if not net.has_appearance or d_enc is None:
            return FieldOutput(tau, None, bottleneck)
        n_layers = len(net.app_hidden) + 1
        app = dn.AppearanceParams([self._layer(net, f"{name}.app.{i}", w) for i in range(n_layers)])
        return FieldOutput(tau, dn.appearance_mlp(app, bottleneck, d_enc), bottleneck)


def mixed_forward(spec: ModelSpec, vertex_sets, shared: dict, w, x, d, network: Optional[str] = None):
    """Field output of one network with layer-wise mixing of four parameter sets.

    Args:
      vertex_sets: four vertex parameter dicts (SW, SE, NW, NE).
      shared: shared parameter dict.
      w: mixing weights, ``[4]`` or ``[P, 4]``.
      x: ``[P, 3]`` points; d: ``[P, 3]`` unit view directions.
      network: defaults to the final network.
    """
    net = spec.network(network) if network else spec.final
    d_enc = dn.dir_encode(np.asarray(d), net.dir_degree).astype(np.asarray(x).dtype) if net.has_appearance else None
    return Field(spec, shared, vertex_sets).evaluate(net.name, x, w, d_enc)


def merge_params(shared: dict, vertex: dict) -> dict:
    out = dict(shared)
    out.update(vertex)
    return out


def premixed_vertex(vertex_sets: Sequence[dict], w) -> dict:
    """One explicit parameter set ``sum_k w_k * set_k`` (float64)."""
    keys = vertex_sets[0].keys()
    return {
        k: sum(float(wk) * np.asarray(vs[k], dtype=np.float64) for wk, vs in zip(w, vertex_sets))
        for k in keys
    }
