class ScenarioError(Exception):
    """A scenario asked the simulator to do something structurally invalid."""


class ValidationError(ScenarioError):
    """A scenario file failed schema or invariant validation."""
