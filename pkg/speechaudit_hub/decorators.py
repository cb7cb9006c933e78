from __future__ import annotations

import functools
import logging
import time
from typing import Any, Callable, TypeVar

T = TypeVar("T")


def _describe(args: tuple[Any, ...], kwargs: dict[str, Any]) -> str:
    # в лог пишем только каталог и хеш конфига
    parts: list[str] = []
    for value in list(args) + list(kwargs.values()):
        output_dir = getattr(value, "output_dir", None)
        if output_dir is not None:
            parts.append(f"output_dir={output_dir}")
            config_hash = getattr(value, "config_hash", None)
            if callable(config_hash):
                parts.append(f"config={config_hash()[:12]}")
    return " ".join(parts)


def log_action(action: str, verbose: bool = False) -> Callable[[Callable[..., T]], Callable[..., T]]:
    def decorator(func: Callable[..., T]) -> Callable[..., T]:
        @functools.wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> T:
            logger = logging.getLogger(__name__)
            context = _describe(args, kwargs)
            start = time.perf_counter()

            try:
                result = func(*args, **kwargs)
                elapsed = time.perf_counter() - start
                summary = ""
                if verbose and isinstance(result, dict):
                    keys = ("rows", "metrics", "samples", "artifacts")
                    summary = "".join(f" {k}={result[k]}" for k in keys if k in result)

                logger.info("%s result=OK %s elapsed=%.2fs%s", action, context, elapsed, summary)
                return result
            except Exception as e:
                logger.info(
                    "%s result=ERROR error_type=%s error_message=%s %s",
                    action,
                    type(e).__name__,
                    e,
                    context,
                )
                raise

        return wrapper

    return decorator
