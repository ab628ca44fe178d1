"""
OpenTelemetry setup and configuration for the thermal toolkit.
"""
import logging
from contextlib import contextmanager
from typing import Iterator, Optional

from opentelemetry import trace
from opentelemetry.exporter.otlp.proto.http.trace_exporter import OTLPSpanExporter
from opentelemetry.sdk.resources import Resource
from opentelemetry.sdk.trace import TracerProvider
from opentelemetry.sdk.trace.export import SimpleSpanProcessor
from opentelemetry.semconv.resource import ResourceAttributes

from ..config.settings import settings

logger = logging.getLogger(__name__)

_tracer: Optional[trace.Tracer] = None


def setup_telemetry() -> Optional[trace.Tracer]:
    """
    Initialize OpenTelemetry tracing.
    Sets up a TracerProvider with OTLP export when an endpoint is configured.
    """
    global _tracer
    if not settings.OTEL_ENABLED:
        logger.debug("OpenTelemetry is disabled. Skipping setup.")
        return None

    try:
        resource = Resource.create({
            ResourceAttributes.SERVICE_NAME: settings.OTEL_SERVICE_NAME
        })
        provider = TracerProvider(resource=resource)

        if settings.OTEL_EXPORTER_OTLP_ENDPOINT:
            provider.add_span_processor(SimpleSpanProcessor(OTLPSpanExporter()))
            logger.info("Added OTLP span exporter")
        else:
            logger.warning("OTEL_EXPORTER_OTLP_ENDPOINT not set. No traces will be exported.")

        trace.set_tracer_provider(provider)
        _tracer = trace.get_tracer(__name__)
        logger.info("OpenTelemetry setup completed successfully")
        return _tracer

    except Exception as e:
        logger.error(f"Failed to setup OpenTelemetry: {e}")
        return None


@contextmanager
def traced(name: str, **attributes) -> Iterator[Optional[trace.Span]]:
    """Run a block inside a span when tracing is enabled, otherwise do nothing."""
    if _tracer is None:
        yield None
        return
    with _tracer.start_as_current_span(name) as span:
        for key, value in attributes.items():
            span.set_attribute(key, value)
        yield span
