"""Exception hierarchy shared across the fabric and the clients."""


class DesktwinError(Exception):
    """Base class for every error raised by this package."""


# -- wire-level --------------------------------------------------------------

class WireError(DesktwinError):
    pass


class OversizedPayload(WireError):
    """Payload exceeds the 1500-byte MTU."""


class Truncated(WireError):
    """Byte sequence is too short to hold the claimed structure."""


class FcsMismatch(WireError):
    """Recomputed CRC-32 disagrees with the frame check sequence."""


class UnknownSchema(WireError):
    """Payload starts with a schema id this codec does not know."""

    def __init__(self, schema_id: int):
        self.schema_id = schema_id
        super().__init__(f"unknown payload schema id 0x{schema_id:02x}")


class FragmentMismatch(WireError):
    """Camera fragments are inconsistent or incomplete."""


class MalformedFrame(DesktwinError):
    """Camera frame byte length disagrees with its declared geometry."""


# -- control protocol / transport -------------------------------------------

class ProtocolError(DesktwinError):
    """Control message violates the handshake or barrier protocol."""


class TransportError(DesktwinError):
    """Connection-level failure (refused, reset, closed mid-message)."""


class TransportTimeout(TransportError):
    """A blocking transport read exceeded its deadline."""


class Refused(DesktwinError):
    """Server rejected the connection (e.g. duplicate MAC)."""


class RosterMismatch(DesktwinError):
    """Client name or MAC does not match the session roster."""


class ClientTimeout(DesktwinError):
    """A client missed the barrier (or join) deadline."""


class SpawnError(DesktwinError):
    """A client process could not be launched."""


# -- scenario / harness ------------------------------------------------------

class ParseError(DesktwinError):
    """Scenario file could not be read or parsed."""


class ValidationError(DesktwinError):
    """Scenario violates one or more invariants; lists all of them."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class SinkError(DesktwinError):
    """Trace sink could not be written."""


class MalformedTrace(DesktwinError):
    """Trace file is empty or does not match the expected layout."""
