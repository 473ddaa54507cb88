# geometry/errors.py

class GeometryError(ValueError):
    """Invalid camera parameters, motions or image shapes."""
