"""
World-action model runtime
Deterministic inference-and-execution runtime: action representation,
flow-matching sampling, chunk fusion, attention masks, FP8 emulation and a
closed-loop simulator.
"""

__version__ = "1.0.0"
