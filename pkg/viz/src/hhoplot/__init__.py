"""Figure rendering for displacement-solver CSV outputs."""

from .readers import FieldSamples, ParseError, read_field_csv, read_recovery_csv
from .render import (
    PlotJob,
    render_contour,
    render_recovery_curves,
    render_surface,
)

__all__ = [
    "FieldSamples",
    "ParseError",
    "PlotJob",
    "read_field_csv",
    "read_recovery_csv",
    "render_contour",
    "render_recovery_curves",
    "render_surface",
]
