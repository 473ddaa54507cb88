# synth/errors.py


class SceneConfigError(ValueError):
    """A scene or sequence configuration cannot be rendered (for example the camera sits inside geometry)."""
