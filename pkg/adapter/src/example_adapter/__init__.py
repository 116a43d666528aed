"""Reference inference adapter: a deliberately-wrong but deterministic
pseudo-depth model behind the arbench REST model contract."""

__version__ = "0.1.0"
