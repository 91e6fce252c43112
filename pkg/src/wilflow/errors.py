from __future__ import annotations


class WilflowError(Exception):
    """Base class; carries optional time-stepping context."""

    kind = "error"

    def __init__(self, message: str, *, step: int | None = None, time: float | None = None):
        super().__init__(message)
        self.message = message
        self.step = step
        self.time = time

    def with_context(self, step: int, time: float) -> "WilflowError":
        if self.step is None:
            self.step = step
            self.time = time
            self.add_note(f"at step {step}, t={time:.6g}")
        return self

    def as_record(self) -> dict[str, object]:
        return {"error": self.kind, "message": self.message, "step": self.step, "time": self.time}


class DegenerateElement(WilflowError):
    kind = "degenerate_element"

    def __init__(self, simplex: int, measure: float, **kwargs):
        super().__init__(f"simplex {simplex} has measure {measure:.3e}", **kwargs)
        self.simplex = simplex
        self.measure = measure


class DegenerateVertexNormal(WilflowError):
    kind = "degenerate_vertex_normal"

    def __init__(self, vertex: int, norm: float, **kwargs):
        super().__init__(f"vertex normal at {vertex} has length {norm:.3e}", **kwargs)
        self.vertex = vertex


class InvalidSpec(WilflowError):
    kind = "invalid_spec"


class ParseError(WilflowError):
    kind = "parse_error"

    def __init__(self, message: str, line: int, path: str | None = None):
        where = f"{path}:{line}" if path else f"line {line}"
        super().__init__(f"{where}: {message}")
        self.line = line
        self.path = path


class UnsupportedFormat(WilflowError):
    kind = "unsupported_format"


class UnsupportedDegree(WilflowError):
    kind = "unsupported_degree"


class ConflictingConstraint(WilflowError):
    kind = "conflicting_constraint"


class SingularMatrix(WilflowError):
    kind = "singular_matrix"


class StabilityViolation(WilflowError):
    kind = "stability_violation"

    def __init__(self, slack: float, tolerance: float, **kwargs):
        super().__init__(f"energy slack {slack:.3e} below -{tolerance:.3e}", **kwargs)
        self.slack = slack
        self.tolerance = tolerance


class BranchCrossing(WilflowError):
    kind = "branch_crossing"


class ConfigError(WilflowError):
    kind = "config_error"

    def __init__(self, problems: list[str] | str):
        if isinstance(problems, str):
            problems = [problems]
        super().__init__("; ".join(problems))
        self.problems = list(problems)


class DegenerateRegion(UserWarning):
    """Polygon passed to the manifold distance is self-intersecting."""
