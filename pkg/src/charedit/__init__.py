"""Interactive dialogue-driven editor for game character control parameters."""

__version__ = "0.1.0"

from .schema import (  # noqa: F401
    ChannelDescriptor,
    ParameterSchema,
    desk_schema,
    mix,
    paper_scale_schema,
    snap_discrete,
    validate,
)
from .solver import SolveConfig, SolveResult, create, edit, strength_weight  # noqa: F401
from .bundle import ModelStack, build_desk_stack, build_paper_stack, load_stack, save_stack  # noqa: F401
