"""Event classification on PMU (PQ|V|f) measurements.

Submodules: ``core`` (tensors, snapshots, container format), ``ingest``
(quality pipeline), ``gsp`` (Fiedler PMU ordering), ``synth`` (synthetic
events), ``augment`` (snapshot sampling, splits), ``nn`` (numpy network
engine), ``infoload`` (MI estimation), ``classifier``, ``train``,
``metrics``, ``baselines`` and ``cli``.
"""
from .core import (ChannelKind, EventClass, PqvfTensor, ScalingStats, Snapshot, build_tensor,
                   load_tensor, save_tensor)
from .errors import *  # noqa: F401,F403
from .gsp import PmuOrdering, sort_pmus

__version__ = "0.1.0"
