"""Analytic scene primitives with exact signed distances and max-height footprints."""

from abc import ABC, abstractmethod
from typing import Dict

import numpy as np


class BasePrimitive(ABC):
    """Abstract base class for analytic primitives in the local metric frame (east, north, up)."""

    def __init__(self, config: Dict):
        """
        Initialize the primitive from its scene entry.

        Args:
            config: Primitive dictionary containing:
                - type: Primitive type identifier
                - name: Optional display name
                - albedo: Optional RGB reflectance in [0, 1]
        """
        self.name = config.get('name', config.get('type', type(self).__name__))
        albedo = np.asarray(config.get('albedo', [0.6, 0.6, 0.6]), dtype=np.float64)
        if albedo.shape != (3,) or np.any(albedo < 0) or np.any(albedo > 1):
            raise ValueError(f"{self.name}: albedo must be 3 values in [0, 1]")
        self.albedo = albedo

    @abstractmethod
    def sdf(self, points: np.ndarray) -> np.ndarray:
        """
        Signed distance in meters, negative inside.

        Args:
            points: (N, 3) local coordinates in meters

        Returns:
            np.ndarray: (N,) distances
        """
        pass

    @abstractmethod
    def max_height(self, east: np.ndarray, north: np.ndarray) -> np.ndarray:
        """Highest surface altitude above each (east, north), -inf where the primitive is absent."""
        pass


class Plane(BasePrimitive):
    """Horizontal ground plane z = altitude."""

    def __init__(self, config: Dict):
        super().__init__(config)
        self.altitude = float(config.get('altitude', 0.0))

    def sdf(self, points: np.ndarray) -> np.ndarray:
        return points[..., 2] - self.altitude

    def max_height(self, east: np.ndarray, north: np.ndarray) -> np.ndarray:
        return np.full(np.shape(east), self.altitude)


class Box(BasePrimitive):
    """Axis-aligned box standing on base altitude: footprint center/size in meters, height."""

    def __init__(self, config: Dict):
        super().__init__(config)
        cx, cy = (float(c) for c in config['center'])
        sx, sy = (float(s) for s in config['size'])
        height = float(config['height'])
        base = float(config.get('base', 0.0))
        if sx <= 0 or sy <= 0 or height <= 0:
            raise ValueError(f"{self.name}: size and height must be positive")
        self.center = np.array([cx, cy, base + 0.5 * height])
        self.half = np.array([0.5 * sx, 0.5 * sy, 0.5 * height])

    @property
    def top(self) -> float:
        return float(self.center[2] + self.half[2])

    def sdf(self, points: np.ndarray) -> np.ndarray:
        q = np.abs(points - self.center) - self.half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    def max_height(self, east: np.ndarray, north: np.ndarray) -> np.ndarray:
        covered = (np.abs(east - self.center[0]) <= self.half[0]) & (np.abs(north - self.center[1]) <= self.half[1])
        return np.where(covered, self.top, -np.inf)


class Sphere(BasePrimitive):
    def __init__(self, config: Dict):
        super().__init__(config)
        self.center = np.asarray(config['center'], dtype=np.float64)
        self.radius = float(config['radius'])
        if self.center.shape != (3,) or self.radius <= 0:
            raise ValueError(f"{self.name}: sphere needs a 3-D center and a positive radius")

    def sdf(self, points: np.ndarray) -> np.ndarray:
        return np.linalg.norm(points - self.center, axis=-1) - self.radius

    def max_height(self, east: np.ndarray, north: np.ndarray) -> np.ndarray:
        d2 = (east - self.center[0]) ** 2 + (north - self.center[1]) ** 2
        inside = d2 <= self.radius ** 2
        return np.where(inside, self.center[2] + np.sqrt(np.maximum(self.radius ** 2 - d2, 0.0)), -np.inf)
