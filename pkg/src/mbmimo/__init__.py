"""Coupling-aware multi-band massive MIMO downlink simulator."""

from .allocation import (AllocationState, BlockWaterFilling, PowerScheme, UserCapability,
                         inner_optimize, sum_rate)
from .antenna import (ArrayGeometry, ArrayKind, ChuParams, build_zr, build_zt,
                      max_radiation_efficiency, mutual_impedance, self_impedance)
from .channel import (EquivalentChannelSet, SubcarrierGrid, build_grid, calibrate_noise,
                      draw_fading, equivalent_channel, synthesize, transimpedance)
from .numerics import NumericalDomainError, rng_stream
from .scenario import Scenario, load_config, parse_config
from .search import (SearchConfig, SearchResult, SpacingSearch, golden_section,
                     gradient_ascent_2d, offline_optimize, online_optimize, particle_swarm,
                     swan_bracket)

__version__ = "0.1.0"
