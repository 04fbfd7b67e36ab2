from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field


class Report(BaseModel):
    """Outcome of one experiment run, serialized to JSON next to its CSV tables."""
    model_config = ConfigDict(ser_json_inf_nan="strings")

    task: str = Field(..., description="Echo of the task that produced this report")
    config: Dict[str, Any] = Field(..., description="The validated experiment config, seed applied")
    config_digest: str
    seed: int
    results: Dict[str, Any] = Field(default_factory=dict, description="Domain outputs keyed by name")
    provenance: Dict[str, str] = Field(default_factory=dict, description="Inputs hash plus method tag per result")
    tables: List[str] = Field(default_factory=list, description="CSV files written alongside the report")
    wall_clock_seconds: Optional[float] = None

    def to_json(self, include_wall_clock: bool = True) -> str:
        exclude = None if include_wall_clock else {"wall_clock_seconds"}
        return self.model_dump_json(indent=2, exclude=exclude)
