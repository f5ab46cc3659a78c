import numpy as np

from bsfa import HeadInput


def make_head(rng, n, d, causal=True):
    return HeadInput(
        q=rng.standard_normal((n, d)),
        k=rng.standard_normal((n, d)),
        v=rng.standard_normal((n, d)),
        causal=causal,
    )
