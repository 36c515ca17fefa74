"""Grid radiance fields trained by view partitioning and teacher-student merging."""

__version__ = "0.1.0"
