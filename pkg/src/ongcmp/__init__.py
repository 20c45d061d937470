"""Basketball event classification from global and collective motion patterns.

Optical flow is rendered as colour images (GCMP), classified by a CNN + LSTM
in two ontology stages and fused with a per-frame success/failure vote into
one of 11 event labels.
"""

__version__ = "0.1.0"
