"""Execution-integrity laboratory.

Programs for a small RISC ISA are encrypted per basic block with
control-flow-coupled keys, executed on a fetch-decrypting simulator,
attacked by scripted adversaries, and measured for diversification
and runtime overhead.
"""

__version__ = "0.1.0"
