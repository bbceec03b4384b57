from enum import Enum
from typing import Any, Dict, List, Optional

import matplotlib.pyplot as pl
import numpy as np

from geomix.core.ChainDraws import ITERATION_COLUMN, ChainDraws
from geomix.core.RasterGrid import RasterGrid


class PlotType(Enum):
    """Enumeration representing types of plots of scalar draws."""

    TRACE = 1
    """Draws plotted against their stored iteration"""
    HISTOGRAM = 2
    """Marginal distribution of the draws"""

    @property
    def default_kwargs(self) -> Dict[str, Any]:
        """
        Gets the default keyword args for the given plot.

        Returns:
            dictionary of keyword arguments to pass to plotting function
        """
        kwargs: Dict[str, Any] = {}
        if self == PlotType.HISTOGRAM:
            kwargs.update(dict(linewidth=3, histtype="step", bins=50))
        elif self == PlotType.TRACE:
            kwargs.update(dict(linewidth=1))
        return kwargs

    def single_plot(self, ax: pl.Axes, values: np.ndarray, **kwargs) -> None:
        """
        Creates a single plot of this type.

        Args:
            ax: the axes on which to plot
            values: the draws of one parameter
            **kwargs: any other keyword arguments to pass to plotting function
        """
        if self == PlotType.HISTOGRAM:
            ax.hist(values, **kwargs)
        elif self == PlotType.TRACE:
            ax.plot(np.arange(len(values)), values, **kwargs)
        return

    def make_xlabel(self, column: str) -> str:
        """
        Makes the label for the x-axis.

        Args:
            column: name of the plotted parameter

        Returns:
            label for x axis of plot
        """
        return column if self == PlotType.HISTOGRAM else "stored draw #"

    def make_ylabel(self, column: str) -> str:
        """
        Makes the label for the y-axis.

        Args:
            column: name of the plotted parameter

        Returns:
            label for y axis of plot
        """
        return "# of draws" if self == PlotType.HISTOGRAM else column


class DrawPlotter:
    """Class that produces plots of any PlotType from recorded draws."""

    def __init__(self, draws: ChainDraws, columns: Optional[List[str]] = None):
        """
        Creates an object that can make plots of the given parameters.

        Args:
            draws: recorded draws
            columns: scalar columns to plot (every parameter if None)
        """
        if columns is None:
            columns = [
                column
                for column in draws.scalars.columns
                if column != ITERATION_COLUMN and not column.endswith("accept")
            ]
        unknown = [column for column in columns if column not in draws.scalars.columns]
        if unknown:
            raise KeyError(f"Draws have no column(s) {unknown}.")
        self.draws: ChainDraws = draws
        self.columns: List[str] = columns

    def plot(
        self,
        plot_type: PlotType,
        file_name: Optional[str] = None,
        headless: bool = False,
        **extra_kwargs,
    ) -> None:
        """
        Plots one panel per parameter.

        Args:
            plot_type: the type of plot to make
            file_name: if not None, matplotlib figure is saved to this file
            headless: if True, matplotlib.pyplot.show() is not called
            **extra_kwargs: keyword arguments to pass to matplotlib plotting function
        """
        fontsize: int = 12
        num_columns: int = len(self.columns)
        fig = pl.figure(figsize=(12, max(3, 2.5 * num_columns)))
        kwargs: Dict[str, Any] = plot_type.default_kwargs
        kwargs.update(extra_kwargs)
        for (index, column) in enumerate(self.columns):
            ax = fig.add_subplot(num_columns, 1, index + 1)
            plot_type.single_plot(ax, self.draws.scalar(column), **kwargs)
            ax.set_xlabel(plot_type.make_xlabel(column), size=fontsize)
            ax.set_ylabel(plot_type.make_ylabel(column), size=fontsize)
            ax.tick_params(labelsize=fontsize, width=2.5, length=7.5, which="major")
        fig.suptitle(f"{self.draws.model.label} model draws", size=fontsize)
        fig.tight_layout()
        if file_name is not None:
            fig.savefig(file_name)
        if not headless:
            pl.show()
        pl.close(fig)
        return


def plot_raster_band(
    raster: RasterGrid,
    band: int = 0,
    title: str = "",
    file_name: Optional[str] = None,
    headless: bool = False,
    **kwargs,
) -> None:
    """
    Maps one band of a raster.

    Args:
        raster: the raster
        band: 0-based band index
        title: title of the plot
        file_name: if not None, matplotlib figure is saved to this file
        headless: if True, matplotlib.pyplot.show() is not called
        **kwargs: extra kwargs to pass to matplotlib.pyplot.imshow
    """
    fontsize: int = 12
    extent = raster.bbox
    fig = pl.figure(figsize=(12, 9))
    ax = fig.add_subplot(111)
    kwargs.update(
        dict(
            interpolation="none",
            extent=(extent.xmin, extent.xmax, extent.ymin, extent.ymax),
            origin="upper",
        )
    )
    image = ax.imshow(np.ma.masked_invalid(raster.values[band]), **kwargs)
    colorbar = pl.colorbar(image, ax=ax)
    ax.set_xlabel("easting [m]", size=fontsize)
    ax.set_ylabel("northing [m]", size=fontsize)
    ax.set_title(title, size=fontsize)
    ax.tick_params(labelsize=fontsize, width=2.5, length=7.5)
    colorbar.ax.tick_params(labelsize=fontsize, width=2.5, length=7.5)
    fig.tight_layout()
    if file_name is not None:
        fig.savefig(file_name)
    if not headless:
        pl.show()
    pl.close(fig)
    return
