"""Edge-prioritized polyp segmentation: network, MI-penalised feature decoupling, training tools."""

__version__ = "0.1.0"
