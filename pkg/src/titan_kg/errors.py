"""Exception hierarchy shared by every titan_kg module.

All errors raised on purpose by this package derive from :class:`TitanError`,
so callers (and the CLI) can catch one base class and still report the
concrete error class name.
"""


class TitanError(Exception):
    """Base class for all titan_kg errors."""


# --- ontology ---------------------------------------------------------------

class UnknownRelation(TitanError):
    """A relation token is neither canonical, a known alias, nor resolvable."""


class NoSuchSignature(TitanError):
    """No relation signature exists for (source kind, relation name)."""


# --- kg ---------------------------------------------------------------------

class MalformedBundle(TitanError):
    """The input document is not a usable STIX bundle."""


class UnknownSignature(TitanError):
    """A STIX relationship maps to no registry signature (strict mode only)."""


# --- pathlang ---------------------------------------------------------------

class PathSyntaxError(TitanError):
    """Unbalanced wrapper, empty segment, or stray tokens in a path."""


class MalformedOperator(TitanError):
    """An operator step with invalid arguments (e.g. select with one name)."""


class OperatorPlacementError(TitanError):
    """Steps appear in an order the path language forbids."""


class TypeFlowError(TitanError):
    """Kind inference failed: a relation does not apply to the current kind."""


class MissingStartKind(TitanError):
    """A path without a type seed was validated without a start kind."""


# --- executor ---------------------------------------------------------------

class StartKindMismatch(TitanError):
    """Start nodes are missing, unknown, or not of the kind the path needs."""


class SelectNameUnresolved(TitanError):
    """A select name matched no node in the current frontier."""


class OperatorArityError(TitanError):
    """exec_common / exec_difference applied to fewer than two branches."""


# --- datagen ----------------------------------------------------------------

class TemplateSchemaError(TitanError):
    """A question template violates the corpus schema or type-checks."""


# --- planner ----------------------------------------------------------------

class PlannerUnavailable(TitanError):
    """The planner backend could not be reached or refused the request."""


class UnparseablePlan(TitanError):
    """Planner output contains no well-formed path block."""

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


class RemoteUnavailable(TitanError):
    """An optional remote text service (e.g. paraphraser) failed."""
