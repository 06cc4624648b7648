from nbt_planner.settings.base import Section, deg

__all__ = ["Section", "deg"]
