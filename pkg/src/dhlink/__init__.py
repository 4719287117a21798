"""DHLink: an event-driven platform for sharing health data between microservices."""

from dhlink.auth import Credentials
from dhlink.envelope import Envelope, encode_envelope, parse_envelope
from dhlink.errors import DHLinkError
from dhlink.schema import DataSchema, FieldSpec, canonical_decode, canonical_encode, validate_instance

__version__ = "0.1.0"

__all__ = [
    "Credentials",
    "DHLinkError",
    "DataSchema",
    "Envelope",
    "FieldSpec",
    "canonical_decode",
    "canonical_encode",
    "encode_envelope",
    "parse_envelope",
    "validate_instance",
]
