from .pipeline import RenderGrads, RenderMode, RenderPass, render, render_backward
from .project import Splat2D, project_gaussian

__all__ = ["RenderGrads", "RenderMode", "RenderPass", "Splat2D", "project_gaussian",
           "render", "render_backward"]
