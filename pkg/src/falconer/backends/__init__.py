"""Pluggable inference providers behind uniform classify/extract contracts."""

from .base import (
    Backend,
    BackendDescriptor,
    BackendStats,
    ClassifyItem,
    ClassifyResult,
    ExtractItem,
)
from .cache import ResponseCache, cache_key
from .http import ChatCompletionsClient, HttpProxyBackend, LlmAnnotatorBackend, post_json
from .mock import MockBackend

__all__ = [
    "Backend",
    "BackendDescriptor",
    "BackendStats",
    "ClassifyItem",
    "ClassifyResult",
    "ExtractItem",
    "ResponseCache",
    "cache_key",
    "ChatCompletionsClient",
    "HttpProxyBackend",
    "LlmAnnotatorBackend",
    "MockBackend",
    "post_json",
]
