"""Report figures rendered to files next to the CSV/JSON outputs.

Uses the object-oriented matplotlib API with the Agg canvas so nothing
touches pyplot's global state or needs a display.
"""
import math

import matplotlib

matplotlib.use("Agg")

from matplotlib.backends.backend_agg import FigureCanvasAgg  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402
from matplotlib.patches import FancyBboxPatch, Rectangle  # noqa: E402

from .graph import UNASSIGNED, gantt_rows  # noqa: E402

TASK_BLUE = "#1f77b4"
FAILED_RED = "#d62728"
NODE_GREEN = "#2ca02c"

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
}


def figure_size(width=7.0, rows=1):
    golden = (math.sqrt(5) - 1.0) / 2.0
    return width, max(width * golden * 0.6, 0.25 * rows + 1.2)


def _save(fig, path, dpi=150):
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=dpi, bbox_inches="tight")


def plot_gantt(g, path, title=None):
    """One lane per machine, one bar per timed task (seconds from first start)."""
    timed, omitted = gantt_rows(g)
    lanes = sorted({r.machine or UNASSIGNED for r in timed}, key=lambda m: (m == UNASSIGNED, m))
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=figure_size(rows=len(lanes)))
        ax = fig.add_subplot(111)
        if timed:
            t0 = min(r.start_time for r in timed)
            lane_of = {m: i for i, m in enumerate(lanes)}
            for r in timed:
                color = FAILED_RED if r.status.value == "FAILED" else TASK_BLUE
                ax.broken_barh([((r.start_time - t0) / 1000.0, (r.end_time - r.start_time) / 1000.0)],
                               (lane_of[r.machine or UNASSIGNED] - 0.4, 0.8),
                               facecolors=color, edgecolor="white", linewidth=0.5)
            ax.set_yticks(range(len(lanes)))
            ax.set_yticklabels(lanes)
            ax.set_ylim(-0.6, len(lanes) - 0.4)
            ax.invert_yaxis()
        ax.set_xlabel("time since first task start [s]")
        ax.set_ylabel("machine")
        heading = title or "Task execution timeline"
        if omitted:
            heading += f" ({omitted} untimed tasks omitted)"
        ax.set_title(heading)
        _save(fig, path)
    return path


def plot_node_assignment(assignment, path, title=None):
    """One green band per machine holding a blue box per task, in start order."""
    machines = list(assignment)
    widest = max((len(t) for t in assignment.values()), default=0)
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(max(7.0, 0.6 * widest + 1.5), 0.5 * len(machines) + 1.2))
        ax = fig.add_subplot(111)
        for row, machine in enumerate(machines):
            band = "#dddddd" if machine == UNASSIGNED else "#e5f5e0"
            edge = "#999999" if machine == UNASSIGNED else NODE_GREEN
            ax.add_patch(FancyBboxPatch((-0.1, row - 0.4), len(assignment[machine]) + 0.2, 0.8,
                                        boxstyle="round,pad=0.02", facecolor=band, edgecolor=edge))
            for col, tid in enumerate(assignment[machine]):
                ax.add_patch(Rectangle((col + 0.05, row - 0.3), 0.9, 0.6, facecolor="#c6dbef",
                                       edgecolor=TASK_BLUE, linewidth=0.8))
                ax.text(col + 0.5, row, tid, ha="center", va="center", fontsize=6)
        ax.set_xlim(-0.3, max(widest, 1) + 0.3)
        ax.set_ylim(max(len(machines), 1) - 0.5, -0.5)
        ax.set_yticks(range(len(machines)))
        ax.set_yticklabels(machines)
        ax.set_xticks([])
        ax.spines["bottom"].set_visible(False)
        ax.set_xlabel("tasks in start order")
        ax.set_title(title or "Task to node assignment")
        _save(fig, path)
    return path


def plot_series(series, path):
    """CPU utilization and memory of one node's resource series."""
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(7.0, 4.0))
        ax_cpu, ax_mem = fig.subplots(2, 1, sharex=True)
        if series.samples:
            t0 = series.samples[0].taken_at
            xs = [(s.taken_at - t0) / 1000.0 for s in series.samples]
            ax_cpu.plot(xs, [s.cpu_util for s in series.samples], color=TASK_BLUE)
            ax_mem.plot(xs, [s.mem_used_bytes / 2 ** 30 for s in series.samples], color=NODE_GREEN)
        ax_cpu.set_ylim(0, 1)
        ax_cpu.set_ylabel("CPU util")
        ax_mem.set_ylabel("mem used [GiB]")
        ax_mem.set_xlabel("time [s]")
        ax_cpu.set_title(f"{series.node} every {series.interval_ms} ms")
        _save(fig, path)
    return path
