from typing import List, Optional, Union

import numpy as np

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator, None]


def as_generator(seed: SeedLike) -> np.random.Generator:
    """Return a numpy Generator for an int seed, SeedSequence or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn_generators(seed: Optional[int], count: int) -> List[np.random.Generator]:
    """
    Independent streams derived from a master seed by stream index.
    Stream i is the same no matter how many workers consume the streams.
    """
    children = np.random.SeedSequence(seed).spawn(count)
    return [np.random.default_rng(child) for child in children]
