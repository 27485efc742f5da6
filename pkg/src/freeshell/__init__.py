"""freeshell: flatten disk-topology shells into printable flat plates.

A thin shell mesh is flattened into a 2D layout of rigid triangular
tiles joined by heat-shrinkable connectors; the layout is turned into
printable solid geometry plus a verification report. See README.md for
the pipeline stages and the CLI.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    ConvergenceError,
    DivergenceError,
    DomainError,
    FreeshellError,
    GeometryError,
    IoError,
    LineSearchError,
    NonFiniteError,
    ParseError,
    RemeshError,
    SolveError,
    TopologyError,
)
from .mesh import (  # noqa: F401
    EdgeAdjacency,
    EdgeStats,
    TargetMesh,
    build_adjacency,
    edge_statistics,
    load_mesh,
    make_mesh,
    save_mesh,
)
