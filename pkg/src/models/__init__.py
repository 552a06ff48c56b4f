from src.models.reports import CSV_SCHEMA_VERSION, OracleReport, PicardReport, PicardStep, SolutionStatistics

__all__ = ["CSV_SCHEMA_VERSION", "OracleReport", "PicardReport", "PicardStep", "SolutionStatistics"]
