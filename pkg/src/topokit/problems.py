"""Benchmark boundary value problems and the analytic two-bar truss.

The grid catalog covers five plane-stress cases (MBB half-beam, centrally
loaded Michell beam, cantilever, bridge with a passive deck, tensile plate),
a thermal conduction plate, and a compliant force inverter. Boundary
condition extents are fixed named constants: distributed loads span
LOAD_EXTENT_EDGES element edges, the thermal sink spans the same extent, and
the bridge deck keeps BRIDGE_PASSIVE_ROWS rows solid.

Sign conventions follow the image layout of the density fields: row 0 is the
top of the domain and the y axis points down, so a "downward" load has a
positive y component. Compliance is insensitive to load sign; the mechanism
objective is defined by input and output DOFs both along x.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import GridDomain, Physics

CATALOG = ("mbb", "michell", "cantilever", "bridge", "tensile", "thermal", "mechanism")

#: Element edges spanned by each distributed load / support patch.
LOAD_EXTENT_EDGES = 4
#: Rows of elements kept solid below the bridge deck.
BRIDGE_PASSIVE_ROWS = 2

MECHANISM_INPUT_SPRING = 1.0
MECHANISM_OUTPUT_SPRING = 0.001

DEFAULT_VOLUME = {"thermal": 0.3, "mechanism": 0.4}
#: Filter radius in element widths at the 64-wide reference resolution;
#: scaled proportionally with the mesh.
FILTER_RADIUS_AT_64 = 2.0


@dataclass(frozen=True)
class ProblemSpec:
    """One benchmark case: mesh, physics, volume budget and SIMP penalty."""

    name: str
    nx: int
    ny: int
    physics: Physics
    volume_target: float
    penalty: float
    filter_radius: float
    domain: GridDomain

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny


def _node(nx: int, ix: int, iy: int) -> int:
    return iy * (nx + 1) + ix


def _edge_patch_weights(total: float, n_edges: int) -> np.ndarray:
    """Consistent nodal weights of a uniform load over n_edges element edges."""
    weights = np.full(n_edges + 1, 1.0 / n_edges)
    weights[0] = weights[-1] = 0.5 / n_edges
    return total * weights


def _patch_extent(n: int, center: int) -> np.ndarray:
    """Node indices of a load patch of LOAD_EXTENT_EDGES edges, clamped."""
    extent = min(LOAD_EXTENT_EDGES, n)
    start = min(max(center - extent // 2, 0), n - extent)
    return np.arange(start, start + extent + 1)


def make_problem(
    name: str,
    resolution: tuple[int, int] = (64, 32),
    v0: float | None = None,
    penalty: float = 3.0,
    filter_radius: float | None = None,
):
    """Build a fully populated problem from the catalog.

    ``make_problem("twobar")`` returns the analytic :class:`TwoBarProblem`;
    every other name builds a grid case. The volume target defaults to 0.3
    except for the mechanism (0.4).
    """
    if name == "twobar":
        return TwoBarProblem()
    if name not in CATALOG:
        raise ValueError(f"unknown problem {name!r}; catalog: {', '.join(CATALOG + ('twobar',))}")
    nx, ny = int(resolution[0]), int(resolution[1])
    if nx < 1 or ny < 1:
        raise ValueError("resolution must be positive")
    if v0 is None:
        v0 = DEFAULT_VOLUME.get(name, 0.3)
    if filter_radius is None:
        filter_radius = FILTER_RADIUS_AT_64 * nx / 64.0

    if name == "thermal":
        physics = Physics(kind="thermal", modulus_solid=1.0, modulus_void=0.001)
    elif name == "mechanism":
        physics = Physics(kind="mechanism")
    else:
        physics = Physics(kind="compliance")

    dpn = physics.dofs_per_node
    n_dofs = dpn * (nx + 1) * (ny + 1)
    load = np.zeros(n_dofs)
    fixed: list[int] = []
    passive = np.zeros(0, dtype=int)
    springs: tuple[tuple[int, float], ...] = ()
    output_vector = None

    if name == "mbb":
        # Half-beam: symmetry on the left edge, roller at the bottom-right
        # corner, unit load pressing down on the top-left patch.
        fixed = [2 * _node(nx, 0, iy) for iy in range(ny + 1)]
        fixed.append(2 * _node(nx, nx, ny) + 1)
        patch = np.arange(min(LOAD_EXTENT_EDGES, nx) + 1)
        weights = _edge_patch_weights(1.0, patch.size - 1)
        for ix, w in zip(patch, weights):
            load[2 * _node(nx, ix, 0) + 1] += w
    elif name == "michell":
        # Simply supported span, unit load on the bottom-center patch.
        fixed = [2 * _node(nx, 0, ny), 2 * _node(nx, 0, ny) + 1, 2 * _node(nx, nx, ny) + 1]
        patch = _patch_extent(nx, nx // 2)
        weights = _edge_patch_weights(1.0, patch.size - 1)
        for ix, w in zip(patch, weights):
            load[2 * _node(nx, ix, ny) + 1] += w
    elif name == "cantilever":
        # Clamped left edge, unit load at the middle of the free edge.
        for iy in range(ny + 1):
            fixed.extend([2 * _node(nx, 0, iy), 2 * _node(nx, 0, iy) + 1])
        patch = _patch_extent(ny, ny // 2)
        weights = _edge_patch_weights(1.0, patch.size - 1)
        for iy, w in zip(patch, weights):
            load[2 * _node(nx, nx, iy) + 1] += w
    elif name == "bridge":
        # Deck load spread across the whole top edge; pinned bottom-left,
        # roller bottom-right; top rows are non-designable solid.
        fixed = [2 * _node(nx, 0, ny), 2 * _node(nx, 0, ny) + 1, 2 * _node(nx, nx, ny) + 1]
        weights = _edge_patch_weights(1.0, nx)
        for ix, w in zip(range(nx + 1), weights):
            load[2 * _node(nx, ix, 0) + 1] += w
        rows = min(BRIDGE_PASSIVE_ROWS, ny)
        passive = np.arange(rows * nx)
    elif name == "tensile":
        # Plate pulled in +x from a centered patch on the right edge; left
        # edge restrained in x with one node pinning y.
        fixed = sorted(
            [2 * _node(nx, 0, iy) for iy in range(ny + 1)] + [2 * _node(nx, 0, ny // 2) + 1]
        )
        patch = _patch_extent(ny, ny // 2)
        weights = _edge_patch_weights(1.0, patch.size - 1)
        for iy, w in zip(patch, weights):
            load[2 * _node(nx, nx, iy)] += w
    elif name == "thermal":
        # Uniform unit heat source over the domain, sink at the middle of
        # the left edge.
        element_source = 1.0 / (nx * ny)
        for iy in range(ny):
            for ix in range(nx):
                for node in (
                    _node(nx, ix, iy),
                    _node(nx, ix + 1, iy),
                    _node(nx, ix + 1, iy + 1),
                    _node(nx, ix, iy + 1),
                ):
                    load[node] += element_source / 4.0
        fixed = [_node(nx, 0, iy) for iy in _patch_extent(ny, ny // 2)]
    elif name == "mechanism":
        # Force inverter on a half domain: symmetry along the top edge,
        # bottom-left corner clamped; input force and spring at the top-left
        # x DOF, output spring at the top-right x DOF.
        fixed = [2 * _node(nx, ix, 0) + 1 for ix in range(nx + 1)]
        for iy in (ny - 1, ny):
            fixed.extend([2 * _node(nx, 0, iy), 2 * _node(nx, 0, iy) + 1])
        dof_in = 2 * _node(nx, 0, 0)
        dof_out = 2 * _node(nx, nx, 0)
        load[dof_in] = 1.0
        output_vector = np.zeros(n_dofs)
        output_vector[dof_out] = 1.0
        springs = ((dof_in, MECHANISM_INPUT_SPRING), (dof_out, MECHANISM_OUTPUT_SPRING))

    domain = GridDomain(
        nx=nx,
        ny=ny,
        dofs_per_node=dpn,
        fixed_dofs=np.unique(np.asarray(fixed, dtype=int)),
        load=load,
        output_vector=output_vector,
        passive_solid=passive,
        springs=springs,
    )
    return ProblemSpec(
        name=name,
        nx=nx,
        ny=ny,
        physics=physics,
        volume_target=float(v0),
        penalty=float(penalty),
        filter_radius=float(filter_radius),
        domain=domain,
    )


# ---------------------------------------------------------------------------
# two-bar stress-constrained truss


@dataclass(frozen=True)
class TwoBarProblem:
    """Two bars under a unit load with per-bar stress constraints."""

    name: str = "twobar"
    length1: float = 0.6
    length2: float = 0.4
    load: float = 1.0
    sigma_max: float = 1.0
    area_min: float = 0.0
    area_max: float = 2.0


@dataclass(frozen=True)
class TwoBarState:
    """Bar areas plus the fixed problem constants."""

    a1: float
    a2: float
    l1: float = 0.6
    l2: float = 0.4
    load: float = 1.0
    sigma_max: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.a1 <= 2.0 and 0.0 <= self.a2 <= 2.0):
            raise ValueError("bar areas must lie in [0, 2]")


@dataclass(frozen=True)
class TwoBarEval:
    mass: float
    gbar: np.ndarray
    stresses: np.ndarray
    dmass: np.ndarray
    dgbar: np.ndarray


def twobar_eval(state: TwoBarState) -> TwoBarEval:
    """Mass, relaxed stress constraints, and their analytic gradients.

    The relaxed constraints are gbar_i = (A_i / 2) * (|sigma_i| / sigma_max
    - 1) <= 0; bar 1 is always in tension and bar 2 in compression, so the
    absolute values are smooth on the admissible set.
    """
    a1, a2 = state.a1, state.a2
    denom = a1 * state.l2 + a2 * state.l1
    if denom <= 0.0:
        raise ValueError("stress undefined: a1*l2 + a2*l1 must be positive")
    sigma1 = state.load * state.l2 / denom
    sigma2 = -state.load * state.l1 / denom
    g1 = abs(sigma1) / state.sigma_max - 1.0
    g2 = abs(sigma2) / state.sigma_max - 1.0
    gbar = np.array([0.5 * a1 * g1, 0.5 * a2 * g2])

    mass = 0.6 * a1 + 0.8 * a2
    dmass = np.array([0.6, 0.8])
    # d|sigma_i|/dA_j = -|sigma_i| * l_{j'} / denom with l' = (l2, l1)
    dabs1 = -abs(sigma1) / denom * np.array([state.l2, state.l1])
    dabs2 = -abs(sigma2) / denom * np.array([state.l2, state.l1])
    dgbar = np.array(
        [
            [0.5 * g1 + 0.5 * a1 * dabs1[0] / state.sigma_max, 0.5 * a1 * dabs1[1] / state.sigma_max],
            [0.5 * a2 * dabs2[0] / state.sigma_max, 0.5 * g2 + 0.5 * a2 * dabs2[1] / state.sigma_max],
        ]
    )
    return TwoBarEval(
        mass=mass,
        gbar=gbar,
        stresses=np.array([sigma1, sigma2]),
        dmass=dmass,
        dgbar=dgbar,
    )


def twobar_siren_forward(
    theta: np.ndarray, omega0: float, z1: float = 0.5
) -> tuple[np.ndarray, np.ndarray]:
    """Three-weight sinusoidal micro-net mapping theta to the bar areas.

    A_i = sin(theta_{i+1} * sin(omega0 * theta_1 * z1)) + 1, which keeps both
    areas inside [0, 2]. Returns the areas and the analytic 2x3 Jacobian.
    """
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != 3:
        raise ValueError("theta must have three entries")
    hidden = np.sin(omega0 * theta[0] * z1)
    d_hidden = omega0 * z1 * np.cos(omega0 * theta[0] * z1)
    areas = np.sin(theta[1:] * hidden) + 1.0
    cos_outer = np.cos(theta[1:] * hidden)
    jac = np.zeros((2, 3))
    jac[:, 0] = cos_outer * theta[1:] * d_hidden
    jac[0, 1] = cos_outer[0] * hidden
    jac[1, 2] = cos_outer[1] * hidden
    return areas, jac
