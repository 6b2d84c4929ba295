"""River-network topology: parsing, canonical ordering and tree utilities.

Edges are kept in breadth-first order from the root, tributaries in the
order they were declared, so every tributary index is larger than its
parent index and the incidence matrix is unit upper triangular.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from app.units import (
    km2_to_m2,
    m2_to_km2,
    per_hour_to_per_second,
    per_second_to_per_hour,
)

logger = logging.getLogger(__name__)

ROOT_MARKER = "-"


class NetworkFormatError(ValueError):
    """Malformed or inconsistent network description."""

    def __init__(self, message: str, line_number: Optional[int] = None) -> None:
        self.line_number = line_number
        prefix = f"line {line_number}: " if line_number is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True, slots=True)
class EdgeRecord:
    id: str
    parent: Optional[int]
    area: float  # m²


@dataclass(frozen=True)
class RiverNetwork:
    edges: tuple[EdgeRecord, ...]
    root_index: int = 0

    def __post_init__(self) -> None:
        edges = tuple(self.edges)
        object.__setattr__(self, "edges", edges)
        if not edges:
            raise NetworkFormatError("network has no edges")
        if self.root_index != 0 or edges[0].parent is not None:
            raise NetworkFormatError("the root must be the first edge")
        seen: set[str] = set()
        counts = [0] * len(edges)
        for index, edge in enumerate(edges):
            if edge.id in seen:
                raise NetworkFormatError(f"duplicate edge id {edge.id!r}")
            seen.add(edge.id)
            if not edge.area > 0:
                raise NetworkFormatError(f"edge {edge.id!r} has non-positive area {edge.area}")
            if index == 0:
                continue
            if edge.parent is None:
                raise NetworkFormatError(f"edge {edge.id!r} is a second root")
            if not 0 <= edge.parent < index:
                raise NetworkFormatError(
                    f"edge {edge.id!r} has parent index {edge.parent}; edges must be in canonical order"
                )
            counts[edge.parent] += 1
            if counts[edge.parent] > 2:
                raise NetworkFormatError(f"edge {edges[edge.parent].id!r} has more than 2 tributaries")

    @property
    def n(self) -> int:
        return len(self.edges)

    @property
    def ids(self) -> list[str]:
        return [edge.id for edge in self.edges]

    @cached_property
    def areas(self) -> np.ndarray:
        values = np.array([edge.area for edge in self.edges], dtype=float)
        values.setflags(write=False)
        return values

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        kids: list[list[int]] = [[] for _ in self.edges]
        for index, edge in enumerate(self.edges):
            if edge.parent is not None:
                kids[edge.parent].append(index)
        return tuple(tuple(k) for k in kids)

    @cached_property
    def upstream_sets(self) -> tuple[frozenset[int], ...]:
        sets: list[set[int]] = [{i} for i in range(self.n)]
        for index in range(self.n - 1, 0, -1):
            sets[self.edges[index].parent].update(sets[index])
        return tuple(frozenset(s) for s in sets)

    def index_of(self, edge_id: str) -> int:
        for index, edge in enumerate(self.edges):
            if edge.id == edge_id:
                return index
        raise KeyError(f"unknown edge id {edge_id!r}")


@dataclass(frozen=True, eq=False)
class HydraulicParams:
    """Per-edge inverse residence times in 1/s (stream ``K``, hillslope ``H``)."""

    K: np.ndarray
    H: np.ndarray

    def __post_init__(self) -> None:
        K = np.array(self.K, dtype=float).reshape(-1)
        H = np.array(self.H, dtype=float).reshape(-1)
        if K.shape != H.shape:
            raise ValueError(f"K and H lengths differ ({K.size} vs {H.size})")
        if not (np.all(K > 0) and np.all(H > 0)):
            raise ValueError("all inverse residence times must be strictly positive")
        K.setflags(write=False)
        H.setflags(write=False)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "H", H)

    @property
    def n(self) -> int:
        return int(self.K.size)

    @classmethod
    def uniform(cls, n: int, K: float, H: float) -> "HydraulicParams":
        return cls(K=np.full(n, K), H=np.full(n, H))

    def check_network(self, net: RiverNetwork) -> None:
        if self.n != net.n:
            raise ValueError(f"hydraulic parameters cover {self.n} edges, network has {net.n}")


@dataclass(slots=True)
class _Line:
    number: int
    id: str
    parent: Optional[str]
    area_km2: float
    K_per_hour: float
    H_per_hour: float


def _parse_float(token: str, name: str, line_number: int) -> float:
    try:
        return float(token)
    except ValueError as exc:
        raise NetworkFormatError(f"{name} {token!r} is not a number", line_number) from exc


def _read_lines(text: str) -> list[_Line]:
    lines: list[_Line] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = stripped.split()
        if tokens[0] != "edge":
            raise NetworkFormatError(f"unknown record {tokens[0]!r}", number)
        if len(tokens) != 6:
            raise NetworkFormatError(
                "expected 'edge <id> <parent|-> <area_km2> <K_per_hour> <H_per_hour>'", number
            )
        _, edge_id, parent, area, K, H = tokens
        lines.append(
            _Line(
                number=number,
                id=edge_id,
                parent=None if parent == ROOT_MARKER else parent,
                area_km2=_parse_float(area, "area", number),
                K_per_hour=_parse_float(K, "K", number),
                H_per_hour=_parse_float(H, "H", number),
            )
        )
    return lines


def _canonical(lines: list[_Line]) -> list[_Line]:
    by_id: dict[str, _Line] = {}
    for line in lines:
        if line.id in by_id:
            raise NetworkFormatError(f"duplicate edge id {line.id!r}", line.number)
        by_id[line.id] = line
        if not line.area_km2 > 0:
            raise NetworkFormatError(f"edge {line.id!r} has non-positive area {line.area_km2}", line.number)
        if line.parent == line.id:
            raise NetworkFormatError(f"edge {line.id!r} is its own parent (cycle)", line.number)

    roots = [line for line in lines if line.parent is None]
    if not roots:
        raise NetworkFormatError("no root edge (parent '-') declared")
    if len(roots) > 1:
        raise NetworkFormatError(f"second root edge {roots[1].id!r}", roots[1].number)

    tributaries: dict[str, list[_Line]] = {line.id: [] for line in lines}
    for line in lines:
        if line.parent is None:
            continue
        if line.parent not in by_id:
            raise NetworkFormatError(f"edge {line.id!r} has unknown parent {line.parent!r}", line.number)
        siblings = tributaries[line.parent]
        siblings.append(line)
        if len(siblings) > 2:
            raise NetworkFormatError(f"edge {line.parent!r} has more than 2 tributaries", line.number)

    ordered: list[_Line] = []
    queue = deque([roots[0]])
    while queue:
        current = queue.popleft()
        ordered.append(current)
        queue.extend(tributaries[current.id])

    if len(ordered) != len(lines):
        reached = {line.id for line in ordered}
        stray = min((line for line in lines if line.id not in reached), key=lambda l: l.number)
        raise NetworkFormatError(f"edge {stray.id!r} is part of a cycle", stray.number)

    for line in ordered:
        if len(tributaries[line.id]) == 1:
            logger.warning(
                "Link has a single tributary",
                extra={"edge_id": line.id, "line_number": line.number},
            )
    return ordered


def _build(ordered: list[_Line]) -> tuple[RiverNetwork, HydraulicParams]:
    index = {line.id: i for i, line in enumerate(ordered)}
    edges = tuple(
        EdgeRecord(
            id=line.id,
            parent=None if line.parent is None else index[line.parent],
            area=km2_to_m2(line.area_km2),
        )
        for line in ordered
    )
    net = RiverNetwork(edges=edges)
    K = np.array([per_hour_to_per_second(line.K_per_hour) for line in ordered])
    H = np.array([per_hour_to_per_second(line.H_per_hour) for line in ordered])
    for line in ordered:
        if not (line.K_per_hour > 0 and line.H_per_hour > 0):
            raise NetworkFormatError(f"edge {line.id!r} has a non-positive rate", line.number)
    return net, HydraulicParams(K=K, H=H)


def parse_network_with_params(text: str) -> tuple[RiverNetwork, HydraulicParams]:
    """Parse a network file into the canonical network and its SI rates."""

    net, params = _build(_canonical(_read_lines(text)))
    logger.debug("Parsed network", extra={"edges": net.n})
    return net, params


def parse_network(text: str) -> RiverNetwork:
    return parse_network_with_params(text)[0]


def serialize_network(net: RiverNetwork, params: HydraulicParams) -> str:
    params.check_network(net)
    lines = ["# edge <id> <parent|-> <area_km2> <K_per_hour> <H_per_hour>"]
    for i, edge in enumerate(net.edges):
        parent = ROOT_MARKER if edge.parent is None else net.edges[edge.parent].id
        lines.append(
            f"edge {edge.id} {parent} {m2_to_km2(edge.area)!r} "
            f"{per_second_to_per_hour(float(params.K[i]))!r} {per_second_to_per_hour(float(params.H[i]))!r}"
        )
    return "\n".join(lines) + "\n"


def non_binary_links(net: RiverNetwork) -> list[int]:
    return [i for i, kids in enumerate(net.children) if len(kids) == 1]


def incidence_matrix(net: RiverNetwork) -> np.ndarray:
    lam = np.eye(net.n, dtype=np.int64)
    for index, edge in enumerate(net.edges):
        if edge.parent is not None:
            lam[edge.parent, index] = -1
    return lam


def upstream_indicator(net: RiverNetwork) -> np.ndarray:
    """``(i, j) = 1`` iff edge ``j`` drains through edge ``i``; the inverse of the incidence matrix."""

    indicator = np.zeros((net.n, net.n), dtype=np.int64)
    for i, members in enumerate(net.upstream_sets):
        indicator[i, sorted(members)] = 1
    return indicator


def upstream_areas(net: RiverNetwork) -> np.ndarray:
    return upstream_indicator(net) @ net.areas


def horton_orders(net: RiverNetwork) -> np.ndarray:
    orders = np.ones(net.n, dtype=np.int64)
    for index in range(net.n - 1, -1, -1):
        kids = net.children[index]
        if not kids:
            continue
        child_orders = sorted((int(orders[k]) for k in kids), reverse=True)
        top = child_orders[0]
        if len(child_orders) > 1 and child_orders[1] == top:
            top += 1
        orders[index] = top
    return orders


def subnetwork(net: RiverNetwork, e: int) -> RiverNetwork:
    if not 0 <= e < net.n:
        raise IndexError(f"edge index {e} out of range for a network of {net.n} edges")
    ordered: list[int] = []
    queue = deque([e])
    while queue:
        current = queue.popleft()
        ordered.append(current)
        queue.extend(net.children[current])
    remap = {old: new for new, old in enumerate(ordered)}
    edges = tuple(
        EdgeRecord(
            id=net.edges[old].id,
            parent=None if old == e else remap[net.edges[old].parent],
            area=net.edges[old].area,
        )
        for old in ordered
    )
    return RiverNetwork(edges=edges)


def subnetwork_params(net: RiverNetwork, params: HydraulicParams, e: int) -> HydraulicParams:
    sub = subnetwork(net, e)
    picks = [net.index_of(edge_id) for edge_id in sub.ids]
    return HydraulicParams(K=params.K[picks], H=params.H[picks])


def _grow(order: int, rng: np.random.Generator) -> list:
    if order == 1:
        return []
    if rng.random() < 0.5:
        side = int(rng.integers(1, order))
        kids = [_grow(order, rng), _grow(side, rng)]
    else:
        kids = [_grow(order - 1, rng), _grow(order - 1, rng)]
    if rng.random() < 0.5:
        kids.reverse()
    return kids


def _from_nested(tree: list, area_m2: float, prefix: str) -> RiverNetwork:
    edges: list[EdgeRecord] = []
    queue: deque[tuple[list, Optional[int]]] = deque([(tree, None)])
    while queue:
        node, parent = queue.popleft()
        index = len(edges)
        edges.append(EdgeRecord(id=f"{prefix}{index}", parent=parent, area=area_m2))
        for child in node:
            queue.append((child, index))
    return RiverNetwork(edges=tuple(edges))


def generate_network(
    order: int,
    rng: np.random.Generator,
    area_km2: float = 0.6,
    prefix: str = "L",
) -> RiverNetwork:
    """Random binary tree whose root Horton order equals ``order``.

    Each link of order ``ω > 1`` either continues its stem (an order-``ω``
    child plus a side tributary of lower order) or splits into two
    order-``ω-1`` subtrees, each with probability one half.
    """

    if order < 1:
        raise ValueError(f"order must be at least 1, got {order}")
    if not area_km2 > 0:
        raise ValueError(f"area must be positive, got {area_km2}")
    net = _from_nested(_grow(int(order), rng), km2_to_m2(area_km2), prefix)
    logger.debug("Generated network", extra={"order": order, "edges": net.n})
    return net


def _open_uniform(rng: np.random.Generator, low: float, high: float, size: int) -> np.ndarray:
    return low + (high - low) * (1.0 - rng.random(size))


def random_hydraulics(
    net: RiverNetwork,
    K: Union[float, np.ndarray],
    H: Union[float, np.ndarray],
    eps_K: Sequence[float],
    eps_H: Sequence[float],
    rng: np.random.Generator,
) -> HydraulicParams:
    """``K_e = ε_K K`` and ``H_e = ε_H H`` with ε drawn uniformly per edge."""

    lo_k, hi_k = float(eps_K[0]), float(eps_K[1])
    lo_h, hi_h = float(eps_H[0]), float(eps_H[1])
    if not (0 < lo_k <= hi_k and 0 < lo_h <= hi_h):
        raise ValueError("multiplier ranges must be positive and ordered")
    return HydraulicParams(
        K=K * _open_uniform(rng, lo_k, hi_k, net.n),
        H=H * _open_uniform(rng, lo_h, hi_h, net.n),
    )


def ratio_hydraulics(
    net: RiverNetwork,
    K_root: float,
    rng: np.random.Generator,
    k_ratio: Iterable[float] = (0.0, 1.0),
    h_ratio: Iterable[float] = (0.0, 1.0e-3),
) -> HydraulicParams:
    """Rates drawn as ratios of the root stream rate; the root keeps ``K_root``."""

    k_lo, k_hi = k_ratio
    h_lo, h_hi = h_ratio
    K = K_root * _open_uniform(rng, k_lo, k_hi, net.n)
    K[0] = K_root
    H = K_root * _open_uniform(rng, h_lo, h_hi, net.n)
    return HydraulicParams(K=K, H=H)


__all__ = [
    "EdgeRecord",
    "HydraulicParams",
    "NetworkFormatError",
    "RiverNetwork",
    "generate_network",
    "horton_orders",
    "incidence_matrix",
    "non_binary_links",
    "parse_network",
    "parse_network_with_params",
    "random_hydraulics",
    "ratio_hydraulics",
    "serialize_network",
    "subnetwork",
    "subnetwork_params",
    "upstream_areas",
    "upstream_indicator",
]
