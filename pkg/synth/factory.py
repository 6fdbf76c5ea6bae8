"""Primitive factory for synthetic scenes."""

from typing import Dict, Type

from .primitives import BasePrimitive, Box, Plane, Sphere


class PrimitiveFactory:
    """Factory class for creating scene primitives."""

    _registry: Dict[str, Type[BasePrimitive]] = {
        'plane': Plane,
        'box': Box,
        'sphere': Sphere,
    }

    @classmethod
    def create(cls, config: Dict) -> BasePrimitive:
        """
        Create a primitive from its scene entry.

        Args:
            config: Primitive dictionary
                Required keys:
                - type: Primitive type identifier (e.g., 'box', 'plane')
                Other keys depend on the type

        Returns:
            BasePrimitive: Primitive instance

        Raises:
            ValueError: If the primitive type is not registered
            KeyError: If required config keys are missing
        """
        if 'type' not in config:
            raise KeyError("Primitive missing required field: 'type'")

        primitive_type = config['type']
        if primitive_type not in cls._registry:
            available_types = ', '.join(cls._registry.keys())
            raise ValueError(
                f"Unknown primitive type: '{primitive_type}'. "
                f"Available types: {available_types}"
            )
        return cls._registry[primitive_type](config)

    @classmethod
    def register(cls, primitive_type: str, primitive_class: Type[BasePrimitive]):
        """
        Register a new primitive class.

        Raises:
            TypeError: If primitive_class does not inherit from BasePrimitive
        """
        if not issubclass(primitive_class, BasePrimitive):
            raise TypeError(
                f"Primitive class must inherit from BasePrimitive, "
                f"got {primitive_class.__name__}"
            )
        cls._registry[primitive_type] = primitive_class

    @classmethod
    def get_registered_types(cls) -> list:
        return list(cls._registry.keys())
