"""Neutral-atom device simulator: declare atoms, beams and processes, compile, integrate."""

from .atomic import (Atom, FineLevel, FineManifold, GaussianPosition, HyperfineLevel, HyperfineManifold, Level,
                     Manifold, MaxwellBoltzmann, clebsch_gordan, transition_amplitudes, zeeman_shift)
from .compiler import SimulationJob, compile, recompile, shot_rng
from .model import System
from .noise import LaserPhaseNoiseModel, synthesize_phase_noise
from .observe import Coherence, Field, Motion, Population
from .optics import (GaussianBeam, GeneralGaussianBeam, MixedPolarization, PlanarBeam, Polarization,
                     TweezerArray)
from .params import Parameter
from .sequence import (AmplCol, AmplRow, FreqCol, FreqRow, Gate, MoveCol, MoveRow, Off, On, Parallel, Pulse,
                       RampCol, RampRow, Sequence, Wait)
from .scenario import build_scenario, load_scenario
from .solvers import play, qubit_channel, run, run_shots

__version__ = "0.1.0"
