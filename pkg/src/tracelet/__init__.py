"""Trace-based contract verification toolkit.

A small recursive procedural language with an event-emitting trace
semantics, a negation-free fixed-point logic over finite traces, and a
symbolic-execution sequent calculus whose closed proofs can be
cross-checked against the interpreter.
"""

__version__ = "0.1.0"
