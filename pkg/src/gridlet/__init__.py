"""gridlet: a desk-scale simulated grid submission toolkit.

Subsystems: `voauth` (membership and pooled accounts), `catalog` (dataset
metadata and availability sync), `query` (selection and per-site task
planning), `sandbox` (script flattening and staging inventory),
`orchestrator` (both submission paths and job tracking), `sitesim`
(gatekeeper, batch queue, stub binary, outboxes), `collector` (fetch and
hole-free merge), `grid` (the assembled world), plus the `gridlet` CLI and
the line-oriented status server in `server`.
"""

__version__ = "0.1.0"

from .grid import Grid
from .sitesim import SiteConfig

__all__ = ["Grid", "SiteConfig", "__version__"]
