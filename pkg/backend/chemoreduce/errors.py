"""
errors.py

Exception hierarchy shared by the numerics and the experiment harness.
Each CLI-facing failure maps onto one process exit code.
"""
from __future__ import annotations

from typing import Optional, Sequence

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_BLOWUP = 3
EXIT_IO = 4


class ChemoreduceError(RuntimeError):
    """Base class for every error raised by the package."""

    exit_code = EXIT_FAILURE


class ConfigError(ChemoreduceError, ValueError):
    """Invalid or unreadable experiment configuration."""

    exit_code = EXIT_CONFIG

    def __init__(self, message: str, problems: Optional[Sequence[str]] = None):
        self.problems = list(problems or [])
        if self.problems:
            message = message + "\n" + "\n".join(f"  - {p}" for p in self.problems)
        super().__init__(message)


class GridError(ChemoreduceError, ValueError):
    exit_code = EXIT_CONFIG


class CoefficientError(ChemoreduceError, ValueError):
    exit_code = EXIT_CONFIG


class StepRejected(ChemoreduceError):
    """A step exceeded the stability guard; the caller should shrink dt."""

    def __init__(self, ratio: float):
        self.ratio = ratio
        super().__init__(f"stability guard exceeded: dt_eff*max|G| = {ratio:.3g}")


class NumericalBlowUp(ChemoreduceError, ArithmeticError):
    """Non-finite state, or a step that kept failing after every allowed halving."""

    exit_code = EXIT_BLOWUP

    def __init__(self, message: str, t: Optional[float] = None):
        self.t = t
        if t is not None:
            message = f"{message} (t={t:.6g})"
        super().__init__(message)


class DiagnosticError(ChemoreduceError, ValueError):
    """A diagnostic needed a positive value where the state has none."""

    def __init__(self, message: str, node: Optional[int] = None, trait: Optional[float] = None):
        self.node = node
        self.trait = trait
        if node is not None:
            message = f"{message} at node {node}" + (f" (trait {trait:.6g})" if trait is not None else "")
        super().__init__(message)


class InfeasibleSupport(DiagnosticError):
    def __init__(self, message: str, nodes: Sequence[int]):
        self.nodes = list(nodes)
        super().__init__(f"{message}: negative weights at nodes {self.nodes}")


class SingularSupport(DiagnosticError):
    pass


class OutputError(ChemoreduceError):
    exit_code = EXIT_IO

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        if path is not None:
            message = f"{message}: {path}"
        super().__init__(message)
