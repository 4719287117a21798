"""Scripted reproductions of the two platform applications with checkable transcripts."""

from dhlink.scenarios.ai2_mindtick import Ai2MindtickRun, run_ai2_mindtick
from dhlink.scenarios.config import PlantSpec, ScenarioConfig
from dhlink.scenarios.proximity import ProximityRun, run_proximity
from dhlink.scenarios.traces import Plant, generate_traces, resolve_plants
from dhlink.scenarios.transcript import Event, Transcript
from dhlink.scenarios.verify import Check, verify_transcript

RUNNERS = {"ai2-mindtick": run_ai2_mindtick, "proximity": run_proximity}

__all__ = [
    "Ai2MindtickRun", "Check", "Event", "Plant", "PlantSpec", "ProximityRun", "RUNNERS", "ScenarioConfig",
    "Transcript", "generate_traces", "resolve_plants", "run_ai2_mindtick", "run_proximity",
    "verify_transcript",
]
