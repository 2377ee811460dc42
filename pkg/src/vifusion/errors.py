"""Exception hierarchy shared by every vifusion module."""


class VifusionError(Exception):
    pass


class InvalidInputError(VifusionError, ValueError):
    pass


class CapacityExceededError(VifusionError):
    pass


class CorruptionError(VifusionError):
    pass


class OversizeError(VifusionError):
    """Segment can never fit in the fusion buffer."""


class ConfigurationError(VifusionError):
    pass


class UnreachableError(VifusionError):
    pass


class ProtocolError(VifusionError):
    pass


class FramingError(ProtocolError):
    """Bad magic/version or truncated frame on a byte stream."""


class TransportError(VifusionError, ConnectionError):
    pass


class TransportTimeout(VifusionError, TimeoutError):
    pass


class StragglerTimeoutError(VifusionError, TimeoutError):
    def __init__(self, job_id: int, absent: list[int]):
        self.job_id = job_id
        self.absent = sorted(absent)
        super().__init__(f"job {job_id}: straggler timeout, absent senders {self.absent}")


class RingAbortedError(VifusionError):
    def __init__(self, src, dst, reason: str = "peer disconnected"):
        self.hop = (src, dst)
        super().__init__(f"ring aborted on hop {src} -> {dst}: {reason}")


class CollectiveError(VifusionError):
    pass
