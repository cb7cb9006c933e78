"""Общая настройка matplotlib для воспроизводимых SVG."""

from __future__ import annotations

import io
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

from matplotlib import colormaps  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from speechaudit_hub.infra.storage import write_text  # noqa: E402

logger = logging.getLogger(__name__)

FIG_SIZE = (6.4, 4.8)
DECILE_CMAP = "viridis"
N_DECILES = 10

_SVG_RC = {
    "svg.hashsalt": "speechaudit",
    "svg.fonttype": "none",
    "path.simplify": False,
}


def new_figure(figsize: tuple[float, float] = FIG_SIZE) -> Figure:
    return Figure(figsize=figsize, dpi=100)


def decile_colors() -> list[tuple[float, float, float, float]]:
    cmap = colormaps[DECILE_CMAP]
    return [cmap(i / (N_DECILES - 1)) for i in range(N_DECILES)]


def decile_label(decile: int) -> str:
    if decile == 1:
        return "1 (easiest)"
    if decile == N_DECILES:
        return f"{N_DECILES} (hardest)"
    return str(decile)


def save_svg(fig: Figure, path: str | Path) -> None:
    """SVG без даты и со стабильными id: одинаковый вход даёт одинаковые байты."""
    buf = io.StringIO()
    with matplotlib.rc_context(_SVG_RC):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    write_text(path, buf.getvalue())
    logger.debug("Figure written to %s", path)
