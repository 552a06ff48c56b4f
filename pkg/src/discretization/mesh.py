"""Uniform quadrilateral meshes for Q2-Q1 Taylor-Hood elements."""
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from src.utils.errors import MeshError
from src.utils.logger import setup_logger
from src.utils.validators import ConfigValidator

logger = setup_logger('mesh')

# Local Q2 node offsets on the half-spacing lattice: corners, edge midpoints, center.
# Corners and midpoints run counterclockwise; the first four are the Q1 nodes.
Q2_OFFSETS = np.array([(0, 0), (2, 0), (2, 2), (0, 2), (1, 0), (2, 1), (1, 2), (0, 1), (1, 1)])

# Element edges as (corner, midpoint, corner) local indices: bottom, right, top, left
EDGES = ((0, 4, 1), (1, 5, 2), (2, 6, 3), (3, 7, 0))


@dataclass(frozen=True)
class DomainGeometry:
    boxes: Tuple[Tuple[float, float, float, float], ...]  # (x_min, x_max, y_min, y_max)
    inflow_center: float
    inflow_half_width: float

    @property
    def bbox(self) -> Tuple[float, float, float, float]:
        boxes = np.array(self.boxes)
        return boxes[:, 0].min(), boxes[:, 1].max(), boxes[:, 2].min(), boxes[:, 3].max()

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        inside = np.zeros(np.shape(x), dtype=bool)
        for x0, x1, y0, y1 in self.boxes:
            inside |= (x > x0) & (x < x1) & (y > y0) & (y < y1)
        return inside


DOMAINS: Dict[str, DomainGeometry] = {
    # Inlet channel [-1, 0] x [-0.5, 0.5] expanding into [0, 12] x [-1, 1]
    "step": DomainGeometry(boxes=((-1.0, 0.0, -0.5, 0.5), (0.0, 12.0, -1.0, 1.0)),
                           inflow_center=0.0, inflow_half_width=0.5),
    "channel": DomainGeometry(boxes=((0.0, 1.0, 0.0, 1.0),), inflow_center=0.5, inflow_half_width=0.5),
}


@dataclass(frozen=True)
class StructuredMesh:
    kind: str
    h: float
    geometry: DomainGeometry
    nodes: np.ndarray  # (n_nodes, 2) Q2 coordinates
    elements: np.ndarray  # (n_elements, 9) Q2 node indices in Q2_OFFSETS order
    pnodes: np.ndarray  # (n_pnodes, 2) Q1 coordinates
    pelements: np.ndarray  # (n_elements, 4) Q1 node indices
    origins: np.ndarray  # (n_elements, 2) lower-left corners
    inflow_nodes: np.ndarray
    wall_nodes: np.ndarray
    outflow_nodes: np.ndarray
    dirichlet_nodes: np.ndarray
    free_nodes: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_pnodes(self) -> int:
        return self.pnodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def area(self) -> float:
        return self.n_elements * self.h ** 2


def build_mesh(kind: str, h: float) -> StructuredMesh:
    """Build the Q2/Q1 node numbering of a uniform square-element mesh.

    Nodes are numbered lexicographically by (x2, x1). Dirichlet nodes are the inflow
    and wall nodes; nodes on the outflow boundary away from the walls stay free.

    Args:
        kind: "step" or "channel"
        h: Element side length; must tile every boundary segment

    Returns:
        StructuredMesh
    """
    error = ConfigValidator.validate_mesh_size(kind, h)
    if error:
        raise MeshError(error)
    geometry = DOMAINS[kind]
    x_min, x_max, y_min, y_max = geometry.bbox
    hh = h / 2.0
    nx = int(round((x_max - x_min) / hh))
    ny = int(round((y_max - y_min) / hh))

    ey, ex = np.meshgrid(np.arange(ny // 2), np.arange(nx // 2), indexing="ij")
    ex, ey = ex.ravel(), ey.ravel()
    active = geometry.contains(x_min + (2 * ex + 1) * hh, y_min + (2 * ey + 1) * hh)
    ex, ey = ex[active], ey[active]
    if len(ex) == 0:
        raise MeshError(f"No elements of size {h} fit in the {kind} domain")

    lat_i = 2 * ex[:, None] + Q2_OFFSETS[None, :, 0]
    lat_j = 2 * ey[:, None] + Q2_OFFSETS[None, :, 1]
    keys = lat_j * (nx + 1) + lat_i
    node_keys, elements = np.unique(keys, return_inverse=True)
    elements = elements.reshape(keys.shape)
    nodes = np.column_stack([x_min + (node_keys % (nx + 1)) * hh, y_min + (node_keys // (nx + 1)) * hh])

    pnode_keys, pelements = np.unique(keys[:, :4], return_inverse=True)
    pelements = pelements.reshape(-1, 4)
    pnodes = np.column_stack([x_min + (pnode_keys % (nx + 1)) * hh, y_min + (pnode_keys // (nx + 1)) * hh])

    inflow, wall, outflow = _classify_boundary(nodes, elements, x_min, x_max)
    dirichlet = np.union1d(inflow, wall)
    outflow = np.setdiff1d(outflow, dirichlet)
    free = np.setdiff1d(np.arange(len(nodes)), dirichlet)

    mesh = StructuredMesh(
        kind=kind,
        h=h,
        geometry=geometry,
        nodes=nodes,
        elements=elements,
        pnodes=pnodes,
        pelements=pelements,
        origins=np.column_stack([x_min + 2 * ex * hh, y_min + 2 * ey * hh]),
        inflow_nodes=inflow,
        wall_nodes=wall,
        outflow_nodes=outflow,
        dirichlet_nodes=dirichlet,
        free_nodes=free,
    )
    logger.debug(
        f"Built {kind} mesh h={h}: {mesh.n_elements} elements, {mesh.n_nodes} Q2 nodes, "
        f"{mesh.n_pnodes} Q1 nodes, {len(dirichlet)} Dirichlet nodes"
    )
    return mesh


def _classify_boundary(
    nodes: np.ndarray, elements: np.ndarray, x_min: float, x_max: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split boundary edge nodes into inflow, wall and outflow sets.

    An edge lies on the boundary when its midpoint node belongs to a single element.
    """
    edges = np.concatenate([elements[:, list(edge)] for edge in EDGES])
    mids, counts = np.unique(edges[:, 1], return_counts=True)
    boundary = edges[np.isin(edges[:, 1], mids[counts == 1])]

    tol = 1e-9
    x_edge = nodes[boundary[:, 1], 0]
    vertical = np.abs(nodes[boundary[:, 0], 0] - nodes[boundary[:, 2], 0]) < tol
    is_inflow = vertical & (np.abs(x_edge - x_min) < tol)
    is_outflow = vertical & (np.abs(x_edge - x_max) < tol)
    is_wall = ~(is_inflow | is_outflow)
    return (
        np.unique(boundary[is_inflow]),
        np.unique(boundary[is_wall]),
        np.unique(boundary[is_outflow]),
    )


def mesh_to_text(mesh: StructuredMesh) -> str:
    """Character grid of the node lattice, top row first.

    I inflow, W wall, O outflow, P interior pressure node, . interior velocity-only node.
    """
    hh = mesh.h / 2.0
    origin = mesh.nodes.min(axis=0)
    cols = np.rint((mesh.nodes[:, 0] - origin[0]) / hh).astype(int)
    rows = np.rint((mesh.nodes[:, 1] - origin[1]) / hh).astype(int)
    grid = np.full((rows.max() + 1, cols.max() + 1), " ")

    # Element corners sit on even lattice positions
    corner = (cols % 2 == 0) & (rows % 2 == 0)
    labels: List[str] = ["P" if c else "." for c in corner]
    for node in mesh.outflow_nodes:
        labels[node] = "O"
    for node in mesh.wall_nodes:
        labels[node] = "W"
    for node in mesh.inflow_nodes:
        labels[node] = "I"
    grid[rows, cols] = labels
    header = (
        f"{mesh.kind} mesh, h={mesh.h}: {mesh.n_elements} elements, "
        f"{mesh.n_nodes} Q2 nodes, {mesh.n_pnodes} Q1 nodes"
    )
    return "\n".join([header] + ["".join(row) for row in grid[::-1]])
