"""Adapter between foundation models and the scene optimizer.

The optimizer talks to this package two ways: a long-running child
process speaking newline-delimited JSON (promptable segmentation), and
`.m4dc` prior datasets written by the exporter. Real deployments plug
video models into the backend interface; the mock backend replays
masks so the plumbing can be tested without any model.
"""

from .backends import MockBackend, resize_nearest
from .container import read_container, write_container
from .export import export_priors
from .protocol import decode_mask, encode_mask
from .server import serve

__all__ = [
    "MockBackend",
    "decode_mask",
    "encode_mask",
    "export_priors",
    "read_container",
    "resize_nearest",
    "serve",
    "write_container",
]
