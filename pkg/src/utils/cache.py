"""Sampling-coordinate caching utilities."""

import hashlib
import threading
from typing import Optional, Dict, Any, Tuple
from dataclasses import dataclass
from collections import OrderedDict
import logging

import numpy as np

from src.config.settings import settings

logger = logging.getLogger(__name__)


@dataclass
class CacheEntry:
    """Frustum sampling coordinates for one calibration/grid combination."""

    coords: np.ndarray
    mask: np.ndarray
    hit_count: int = 1


class SamplingCache:
    """In-memory LRU cache for frustum sampling coordinates.

    Safe to share between threads: lookups, stores and clears hold one lock.
    """

    def __init__(
        self,
        max_size: Optional[int] = None,
        enabled: Optional[bool] = None
    ):
        """
        Initialize sampling cache.

        Args:
            max_size: Maximum number of entries (default from settings)
            enabled: Whether lookups are served (default from settings)
        """
        self.max_size = max_size or settings.cache_max_size
        self.enabled = settings.cache_enabled if enabled is None else enabled

        # Use OrderedDict for LRU functionality
        self._cache: OrderedDict[str, CacheEntry] = OrderedDict()
        self._lock = threading.Lock()

        self._hits = 0
        self._misses = 0

        logger.info(
            f"Sampling cache initialized: "
            f"max_size={self.max_size}, enabled={self.enabled}"
        )

    @staticmethod
    def make_key(*parts: bytes) -> str:
        """
        Generate a cache key from identifying byte strings.

        Args:
            *parts: Fingerprints of calibration, discretization, grid and extents

        Returns:
            Cache key (hash)
        """
        digest = hashlib.sha256()
        for part in parts:
            digest.update(len(part).to_bytes(8, "little"))
            digest.update(part)
        return digest.hexdigest()

    def get(self, key: str) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """
        Get cached coordinates.

        Args:
            key: Key from `make_key`

        Returns:
            (coords, mask) or None if not cached
        """
        if not self.enabled:
            return None

        with self._lock:
            entry = self._cache.get(key)
            if entry is None:
                self._misses += 1
                logger.debug(f"Cache miss: {key[:16]}...")
                return None

            # Move to end (most recently used)
            self._cache.move_to_end(key)
            entry.hit_count += 1
            self._hits += 1
            logger.debug(f"Cache hit: {key[:16]}... (hits: {entry.hit_count})")
            return entry.coords, entry.mask

    def set(self, key: str, coords: np.ndarray, mask: np.ndarray) -> None:
        """
        Store coordinates in the cache.

        Stored arrays are made read-only so callers cannot mutate shared state.

        Args:
            key: Key from `make_key`
            coords: N x 3 sampling coordinates
            mask: N validity flags
        """
        if not self.enabled:
            return

        coords = np.array(coords)
        mask = np.array(mask)
        coords.flags.writeable = False
        mask.flags.writeable = False

        with self._lock:
            self._cache[key] = CacheEntry(coords=coords, mask=mask)
            self._cache.move_to_end(key)

            # Enforce size limit (LRU eviction)
            if len(self._cache) > self.max_size:
                oldest_key, _ = self._cache.popitem(last=False)
                logger.debug(f"Cache eviction (LRU): {oldest_key[:16]}...")

            logger.debug(f"Cache set: {key[:16]}... (size: {len(self._cache)})")

    def clear(self) -> None:
        """Clear all cache entries."""
        with self._lock:
            self._cache.clear()
            self._hits = 0
            self._misses = 0
        logger.info("Cache cleared")

    def get_stats(self) -> Dict[str, Any]:
        """
        Get cache statistics.

        Returns:
            Dictionary with cache stats
        """
        with self._lock:
            hits, misses, size = self._hits, self._misses, len(self._cache)
        total_requests = hits + misses
        hit_rate = (hits / total_requests * 100) if total_requests > 0 else 0

        return {
            "size": size,
            "max_size": self.max_size,
            "hits": hits,
            "misses": misses,
            "hit_rate": round(hit_rate, 2),
        }


# Global cache instance
_cache_instance: Optional[SamplingCache] = None
_instance_lock = threading.Lock()


def get_cache() -> SamplingCache:
    """
    Get or create global cache instance.

    Returns:
        SamplingCache instance
    """
    global _cache_instance

    with _instance_lock:
        if _cache_instance is None:
            _cache_instance = SamplingCache()

    return _cache_instance


def clear_cache() -> None:
    """Clear global cache instance."""
    cache = get_cache()
    cache.clear()
