from pydantic import BaseModel, ConfigDict

SCHEMA_VERSION = 1


class ReportBase(BaseModel):
    """Common envelope of every JSON artifact"""

    model_config = ConfigDict(extra="forbid")

    schema_version: int = SCHEMA_VERSION
