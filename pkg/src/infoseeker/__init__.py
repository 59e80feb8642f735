"""Three-tier host/manager/worker orchestration engine with offline simulation."""

__version__ = "0.1.0"
