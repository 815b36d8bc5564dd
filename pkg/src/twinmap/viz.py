"""
Diagnostic plots for road geometry fine-tuning.

Renders the original and adjusted road graphs over the near-ground band of
the cloud using matplotlib (PNG) or plotly (HTML).
"""

from pathlib import Path
from typing import Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import plotly.graph_objects as go

from .geo_ingest import RoadGraph


def _edge_traces(graph: RoadGraph):
    for edge in graph.edges:
        xy = np.asarray(edge.polyline)
        yield edge.id, xy[:, 0], xy[:, 1]


def plot_alignment(
    original: RoadGraph,
    adjusted: RoadGraph,
    ground_xy: np.ndarray,
    path: Union[str, Path],
    use_plotly: bool = False,
) -> Path:
    """
    Plot road graphs before and after fine-tuning.

    Args:
        original: Graph as parsed from OSM
        adjusted: Graph after fine-tuning
        ground_xy: Near-ground band points
        path: Output file (.png for matplotlib, .html for plotly)
        use_plotly: Whether to use Plotly (True) or Matplotlib (False)

    Returns:
        Path to the saved figure
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ground_xy = np.asarray(ground_xy).reshape(-1, 2)

    if use_plotly:
        fig = go.Figure()
        fig.add_trace(go.Scattergl(
            x=ground_xy[:, 0], y=ground_xy[:, 1], mode="markers",
            marker=dict(size=2, color="lightgray"), name="ground band",
        ))
        for label, graph, color in (("OSM", original, "firebrick"), ("adjusted", adjusted, "royalblue")):
            for index, (edge_id, xs, ys) in enumerate(_edge_traces(graph)):
                fig.add_trace(go.Scatter(
                    x=xs, y=ys, mode="lines", line=dict(color=color),
                    name=label, legendgroup=label, showlegend=index == 0,
                    hovertext=edge_id,
                ))
        fig.update_layout(title="Road geometry fine-tuning", xaxis_title="x (m)",
                          yaxis_title="y (m)", yaxis_scaleanchor="x")
        fig.write_html(str(path))
        return path

    fig, ax = plt.subplots(figsize=(8, 8))
    ax.scatter(ground_xy[:, 0], ground_xy[:, 1], s=1, c="lightgray", label="ground band")
    for label, graph, color in (("OSM", original, "firebrick"), ("adjusted", adjusted, "royalblue")):
        for index, (_, xs, ys) in enumerate(_edge_traces(graph)):
            ax.plot(xs, ys, color=color, linewidth=1, label=label if index == 0 else None)
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title("Road geometry fine-tuning")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
