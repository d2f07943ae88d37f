"""Scenario and truncation configuration for the synthetic clustered-multipath link.

A scenario fixes the OFDM/array geometry shared by both link directions: the base
station serves one single-antenna user through an N_t-element half-wavelength ULA,
CSI is observed on n_sub subcarriers spanning bandwidth_hz, and the downlink /
uplink carriers differ (FDD) while the propagation geometry is shared.
"""

from dataclasses import dataclass, field, asdict

from .errors import ConfigError


@dataclass(frozen=True)
class ChannelScenario:
    n_tx: int = 32
    n_sub: int = 256
    bandwidth_hz: float = 20e6
    f_down_hz: float = 5.2e9
    f_up_hz: float = 5.4e9
    n_clusters: int = 3
    paths_per_cluster: int = 8
    delay_spread_s: float = 400e-9
    angle_spread_deg: float = 5.0
    # fraction of delay_spread_s used as per-subpath delay jitter, must stay <= 0.05
    delay_jitter_frac: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.n_tx < 1 or self.n_sub < 1:
            raise ConfigError("n_tx and n_sub must be positive")
        if self.bandwidth_hz <= 0:
            raise ConfigError("bandwidth_hz must be positive")
        if self.f_down_hz <= 0 or self.f_up_hz <= 0:
            raise ConfigError("carrier frequencies must be positive")
        if self.n_clusters < 1 or self.paths_per_cluster < 1:
            raise ConfigError("need at least one cluster and one path per cluster")
        if self.delay_spread_s < 0:
            raise ConfigError("delay_spread_s must be nonnegative")
        if not 0.0 <= self.delay_jitter_frac <= 0.05:
            raise ConfigError("delay_jitter_frac must lie in [0, 0.05]")
        if self.angle_spread_deg < 0:
            raise ConfigError("angle_spread_deg must be nonnegative")

    @property
    def n_paths(self):
        return self.n_clusters * self.paths_per_cluster

    @property
    def delay_resolution_s(self):
        # delay-domain bin spacing of the n_sub-point transform
        return 1.0 / self.bandwidth_hz

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(f"bad scenario fields: {e}") from e


@dataclass(frozen=True)
class TruncationSpec:
    """How many leading delay rows survive truncation."""

    n_trunc: int

    def validate(self, scenario: ChannelScenario):
        if not 0 < self.n_trunc <= scenario.n_sub:
            raise ConfigError(
                f"n_trunc={self.n_trunc} outside (0, {scenario.n_sub}]")
        # truncation only makes sense if the multipath fits the kept delay window
        if scenario.delay_spread_s >= self.n_trunc / scenario.bandwidth_hz:
            raise ConfigError(
                "delay_spread_s must be below n_trunc/bandwidth_hz for the kept "
                "delay window to cover the channel")
        return self


# named profiles: "full" is the reference geometry, "desk" fits CPU-budget runs
PROFILES = {
    "full": {
        "scenario": ChannelScenario(n_tx=32, n_sub=256),
        "n_trunc": 32,
        "k": 32,
    },
    "desk": {
        "scenario": ChannelScenario(n_tx=16, n_sub=64),
        "n_trunc": 16,
        "k": 16,
    },
}


def get_profile(name):
    try:
        return PROFILES[name]
    except KeyError:
        raise ConfigError(f"unknown profile {name!r}, expected one of {sorted(PROFILES)}")
