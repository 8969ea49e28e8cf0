"""Prior and sampler configuration."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from ..errors import ConfigError

__all__ = ["PriorConfig", "SamplerConfig"]


def _from_mapping(cls, mapping):
    names = {f.name for f in fields(cls)}
    unknown = set(mapping) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**mapping)


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters.

    Coefficients get independent zero-mean normal priors on the standardized
    scale; the CAR dependence ``rho ~ Uniform(rho_min, 1)`` and precision
    scale ``tau2 ~ Gamma(tau2_shape, tau2_rate)``.
    """

    sigma_beta: float = 2.5
    sigma_alpha: float = 2.5
    a_psi: float = 1.0
    b_psi: float = 1.0
    a_r: float = 1.0
    b_r: float = 1.0
    rho_min: float = 0.1
    tau2_shape: float = 1.0
    tau2_rate: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "rho_min":
                if not 0.0 <= v < 1.0:
                    raise ConfigError("rho_min must lie in [0, 1)")
            elif not (v > 0 and v < float("inf")):
                raise ConfigError(f"prior {f.name} must be finite and positive")

    to_dict = asdict

    @classmethod
    def from_dict(cls, mapping):
        return _from_mapping(cls, mapping)


@dataclass(frozen=True)
class SamplerConfig:
    """MCMC run settings.  ``n_iter`` counts burn-in iterations too."""

    n_iter: int = 3000
    n_burnin: int = 1000
    n_chains: int = 2
    thin: int = 1
    seed: int = 0
    target_accept_block: float = 0.234
    target_accept_scalar: float = 0.44
    adapt_covariance_every: int = 100
    n_jobs: int = 1

    def __post_init__(self):
        if not 0 <= self.n_burnin < self.n_iter:
            raise ConfigError("need 0 <= n_burnin < n_iter")
        if self.n_chains < 1 or self.thin < 1 or self.n_jobs < 1:
            raise ConfigError("n_chains, thin and n_jobs must be >= 1")
        for name in ("target_accept_block", "target_accept_scalar"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1)")

    @property
    def n_keep(self) -> int:
        return len(range(self.n_burnin, self.n_iter, self.thin))

    to_dict = asdict

    @classmethod
    def from_dict(cls, mapping):
        return _from_mapping(cls, mapping)
