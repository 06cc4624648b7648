from nbt_planner.grammar.blocks import Blocks
from nbt_planner.grammar.values import Values

__all__ = [
    "Blocks",
    "Values",
]
