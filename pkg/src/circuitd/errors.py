"""Exception types shared across the package.

Graph-validation problems are reported as data (see circuit.Violation), not
exceptions; the classes here cover contract violations and runtime faults.
"""

from __future__ import annotations


class CircuitdError(Exception):
    """Base class for all errors raised by this package."""


# -- circuit specs ----------------------------------------------------------

class CircuitSyntaxError(CircuitdError):
    """Circuit document is not well-formed (position is part of the message)."""


class SchemaError(CircuitdError):
    """Circuit document is well-formed but violates the schema."""


class InvalidCircuit(CircuitdError):
    """Operation requires a valid circuit and the given one is not."""


class UnknownAgent(CircuitdError):
    """Agent name not declared in the circuit."""


class InvalidDocumentId(CircuitdError):
    """Document id is empty, too long, or contains forbidden characters."""


# -- mailbox ----------------------------------------------------------------

class NotClaimed(CircuitdError):
    """Entry is not in working/, so it cannot be acked or nacked."""


# -- lease ------------------------------------------------------------------

class TakeoverFailed(CircuitdError):
    """Previous lease holder could not be terminated within the kill window."""


class Fenced(CircuitdError):
    """The lease token no longer matches: another instance took over."""


# -- component invocation ---------------------------------------------------

class ComponentFailure(CircuitdError):
    """Base class for failed processing attempts; counts toward the ledger."""


class MissingInput(ComponentFailure):
    """A required upstream knowledge record does not exist yet."""

    def __init__(self, placeholder: str):
        super().__init__(f"missing input {placeholder}")
        self.placeholder = placeholder


class ComponentTimeout(ComponentFailure):
    """Component ran past its timeout and was killed."""


class NonZeroExit(ComponentFailure):
    """Component exited with a nonzero status."""

    def __init__(self, exit_code: int, stderr: str):
        super().__init__(f"exit status {exit_code}: {stderr[:512]}")
        self.exit_code = exit_code
        self.stderr = stderr


class MissingOutput(ComponentFailure):
    """Component exited 0 but did not write its output file."""


class MappingError(ComponentFailure):
    """Translator source payload cannot be converted."""


class TransportError(ComponentFailure):
    """Bundle transfer failed; the attempt is retriable."""


# -- configuration ----------------------------------------------------------

class BadPattern(CircuitdError):
    """Filter regex does not compile; the agent refuses to start."""


# -- networker --------------------------------------------------------------

class ChecksumMismatch(CircuitdError):
    """Received bundle body does not match its declared checksum."""


# -- supervisor / control plane ---------------------------------------------

class SpawnError(CircuitdError):
    """Agent process could not be launched."""


class NotRunning(CircuitdError):
    """Stop requested for an agent with no live instance (warning-level)."""


class DuplicateDocId(CircuitdError):
    """Explicit document id was already ingested."""


class NoSuchDeadLetter(CircuitdError):
    """No dead letter exists for the given agent and document."""


class BindError(CircuitdError):
    """Control API could not bind its address."""


class ApiError(CircuitdError):
    """Control API request failed (client side)."""
