import math
from dataclasses import MISSING, fields
from typing import Any, Dict, Type, TypeVar

from nbt_planner.utils import ValidationError

T = TypeVar("T")

DEGREES = math.pi / 180.0


def deg(alias: str) -> Dict:
    """field metadata for an angle written in degrees in config files"""
    return {"scale": DEGREES, "alias": alias}


def scale_value(value: Any, scale: float) -> Any:
    if isinstance(value, (list, tuple)):
        return type(value)(scale_value(item, scale) for item in value)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return value
    return value * scale


class Section:
    """mixin for settings dataclasses that are loaded from one config block"""

    @classmethod
    def aliased_fields(cls) -> Dict[str, str]:
        # aliases exist where the config key carries a unit, e.g. 'fov_h_deg' for fov_h
        return {
            value.metadata.get("alias", name): name
            for name, value in cls.__dataclass_fields__.items()
            if value.init
        }

    @classmethod
    def pre_load_mods(cls, data: Dict, section: str) -> Dict:
        aliased = cls.aliased_fields()
        unknown = sorted(set(data) - set(aliased))
        if unknown:
            raise ValidationError(
                f"{section}: unknown keys {unknown}, expected some of {sorted(aliased)}"
            )
        kwargs = {}
        for key, value in data.items():
            name = aliased[key]
            scale = cls.__dataclass_fields__[name].metadata.get("scale")
            if scale is not None and value is not None:
                value = scale_value(value, scale)
            if isinstance(value, list):
                value = tuple(value)
            kwargs[name] = value
        return kwargs

    @classmethod
    def init(cls: Type[T], data: Dict, section: str) -> T:
        if not isinstance(data, dict):
            raise ValidationError(f"{section}: expected a block, got {data!r}")
        kwargs = cls.pre_load_mods(data, section)
        missing = [
            value.metadata.get("alias", value.name)
            for value in fields(cls)
            if value.init
            and value.default is MISSING
            and value.default_factory is MISSING
            and value.name not in kwargs
        ]
        if missing:
            raise ValidationError(f"{section}: missing required keys {missing}")
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as error:
            raise ValidationError(f"{section}: {error}") from error
