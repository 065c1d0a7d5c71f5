"""Joint estimation of well-posed LPV models in linear fractional
representation together with a neural scheduling map, from input-output
data alone.

Subpackages:
    linalg  dense kernels (LU, determinant, expm and its Frechet
            derivative, spectral radius)
    lfr     model core: Delta block, well-posed feedthrough construction,
            simulation, latent elimination, realization conversions
    sched   scheduling maps (one-block ResNet with saturating output)
    train   loss, exact rollout gradients, Adam / L-BFGS, multi-start fit
    bench   benchmark generator, multisine design, BFR metric, CSV I/O
    model   model value and JSON document round-trip
    cli     command-line front end
"""

from . import bench, lfr, linalg, model, sched, train
from .bench import Dataset, bfr, generate_msd_dataset, multisine
from .lfr import (
    DeltaStructure,
    LfrPlant,
    SchedulingBox,
    WellPosedFactors,
    build_Dzw,
    build_N,
    delta_of_p,
    eliminate_to_ss,
    is_well_posed,
    simulate,
)
from .model import LfrModel, read_model, write_model
from .sched import SchedulingNet, xavier_init
from .train import FitResult, TrainConfig, fit

__version__ = "0.1.0"
