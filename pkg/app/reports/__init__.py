"""
Report model, CSV writers and the markdown summary renderer.
"""
from .models import Report
from .writers import render_summary, write_csv, write_report

__all__ = ["Report", "render_summary", "write_csv", "write_report"]
