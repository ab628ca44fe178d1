"""Shared helpers: console logging, telemetry, artifact I/O."""
