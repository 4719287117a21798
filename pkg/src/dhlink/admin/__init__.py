"""Administrator tooling for the application lifecycle."""

from dhlink.admin.lifecycle import (
    APP_STATES,
    DECOMMISSIONED,
    INITIALISING_APP,
    PROPOSED,
    WORKING,
    Administrator,
    ApplicationRecord,
    Report,
    parse_proposal,
)

__all__ = [
    "APP_STATES",
    "Administrator",
    "ApplicationRecord",
    "DECOMMISSIONED",
    "INITIALISING_APP",
    "PROPOSED",
    "Report",
    "WORKING",
    "parse_proposal",
]
