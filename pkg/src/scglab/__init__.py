"""scglab: a desk-scale workbench for editing a classifier's concept logic.

A small CNN explains itself through per-class structural concept graphs,
a human (or script) edits those graphs, and the corrected logic is
distilled back into the network via two teachers.
"""

__version__ = "0.1.0"
