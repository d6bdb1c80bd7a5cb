"""Neural SAT/MaxSAT toolkit: formulas, exact oracles, GNN solvers, diffusion and SDP baselines."""
from .cnf import CnfFormula, Literal, evaluate, gap, parse_dimacs, read_dimacs, write_dimacs
from .solvers import closest_assignment, dpll_solve, maxsat_optimum, unit_propagate
from .generators import DatasetSpec, LabeledInstance, gen_3sat, gen_sr_pair
from .graph import LCG, VCG, build_graph
from .model import ModelConfig, SatGNN
from .inference import resample_solve, solve, sweep
from .training import TrainConfig, train
from .estimators import DiffusionSatSolver, NeuralSatSolver, SdpMaxSat

__version__ = "0.1.0"
