"""Workflow execution monitoring: events, execution graphs, wf-instances, node metrics."""

__version__ = "0.1.0"
