"""Container for MCMC draws."""

from __future__ import annotations

import gzip
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from ..errors import ShapeError

__all__ = ["PosteriorSamples"]

# above this many values the long-format CSV is gzip-compressed
GZIP_THRESHOLD = 10**6


@dataclass
class PosteriorSamples:
    """Draws with shape (chains, iterations, parameters).

    ``iterations`` holds the absolute sampler iteration of each retained
    draw.  ``acceptance`` maps update names to per-chain acceptance rates;
    ``scale_trace`` maps adaptive proposal names to (chains, n_iter) arrays
    of the proposal scale in force at every iteration.
    """

    names: list
    draws: np.ndarray
    iterations: np.ndarray
    acceptance: dict = field(default_factory=dict)
    scale_trace: dict = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.ndim != 3 or self.draws.shape[2] != len(self.names):
            raise ShapeError("draws must be (chains, iterations, parameters)")
        self._index = {n: k for k, n in enumerate(self.names)}

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0] * self.draws.shape[1]

    def __contains__(self, name) -> bool:
        return name in self._index

    def index(self, name) -> int:
        return self._index[name]

    def get(self, name) -> np.ndarray:
        """(chains, iterations) draws of one parameter."""
        return self.draws[:, :, self._index[name]]

    def group(self, prefix) -> np.ndarray:
        """Pooled draws (n_draws, k) of all parameters named ``prefix[...]``."""
        cols = [k for k, n in enumerate(self.names)
                if n.startswith(prefix + "[")]
        return self.draws[:, :, cols].reshape(-1, len(cols))

    def pooled(self, name) -> np.ndarray:
        return self.get(name).reshape(-1)

    def thinned(self, step: int) -> "PosteriorSamples":
        return PosteriorSamples(self.names, self.draws[:, ::step],
                                self.iterations[::step], self.acceptance,
                                self.scale_trace)

    # -- I/O ---------------------------------------------------------------

    def to_frame(self) -> pd.DataFrame:
        c, t, p = self.draws.shape
        return pd.DataFrame({
            "chain": np.repeat(np.arange(c), t * p),
            "iter": np.tile(np.repeat(self.iterations, p), c),
            "parameter": np.tile(np.asarray(self.names, dtype=object), c * t),
            "value": self.draws.reshape(-1),
        })

    def write_csv(self, path, compress=None) -> Path:
        """Long-format CSV (chain, iter, parameter, value)."""
        path = Path(path)
        if compress is None:
            compress = self.draws.size > GZIP_THRESHOLD
        if compress and path.suffix != ".gz":
            path = path.with_name(path.name + ".gz")
        text = self.to_frame().to_csv(index=False, float_format="%.17g",
                                      lineterminator="\n")
        if compress:
            # mtime=0 keeps the bytes reproducible
            with open(path, "wb") as raw, gzip.GzipFile(
                    fileobj=raw, mode="wb", mtime=0, filename="") as fh:
                fh.write(text.encode("utf-8"))
        else:
            path.write_text(text, encoding="utf-8")
        return path

    @classmethod
    def read_csv(cls, path) -> "PosteriorSamples":
        df = pd.read_csv(path, float_precision="round_trip")
        names = list(dict.fromkeys(df["parameter"]))
        chains = np.unique(df["chain"])
        iters = np.unique(df["iter"])
        draws = df["value"].to_numpy().reshape(len(chains), len(iters),
                                                len(names))
        return cls(names, draws, iters)
