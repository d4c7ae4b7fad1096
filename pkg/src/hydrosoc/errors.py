"""Exception types shared across the package."""


class HydrosocError(Exception):
    """Base class for every error raised by hydrosoc."""


class InputError(HydrosocError, ValueError):
    """Bad input document or configuration."""


class MalformedLine(InputError):
    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class DanglingReference(InputError):
    def __init__(self, ref: str, context: str = ""):
        self.ref = ref
        msg = f"reference to undeclared id {ref!r}"
        if context:
            msg += f" ({context})"
        super().__init__(msg)


class DuplicateId(InputError):
    def __init__(self, ident: str):
        self.ident = ident
        super().__init__(f"duplicate id {ident!r}")


class MissingSection(InputError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"missing required section [{name}]")


class InvariantViolation(InputError):
    def __init__(self, description: str):
        self.description = description
        super().__init__(description)


class MissingKey(InputError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"missing required key {key!r}")


class OutOfRange(InputError):
    def __init__(self, key: str, detail: str = ""):
        self.key = key
        msg = f"value out of range for {key!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class InfeasibleProfile(InputError):
    """Occupancy targets cannot be met by any assignment of agents."""


class UnknownNode(HydrosocError, KeyError):
    def __init__(self, node_id: str):
        self.node_id = node_id
        super().__init__(node_id)

    def __str__(self) -> str:
        return f"unknown node {self.node_id!r}"


class SimulationError(HydrosocError, RuntimeError):
    """Runtime failure inside a simulation."""


class NonConvergence(SimulationError):
    def __init__(self, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"hydraulic solve did not converge after {iterations} iterations "
            f"(residual {residual:.3e})"
        )


class DisconnectedDemand(SimulationError):
    def __init__(self, node_id: str):
        self.node_id = node_id
        super().__init__(f"junction {node_id!r} has demand but no path to a fixed-head node")
