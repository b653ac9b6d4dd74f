"""babelkit: layer-extension checkpoint surgery and multilingual corpus curation."""

__version__ = "0.1.0"
