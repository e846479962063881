"""Data-free recursive distillation (DFRD) for open-set robot localization."""

from .errors import (DfrdError, IncompleteFrame, InvalidConfigError, InvalidInputError,
                     ProtocolError, TrainingDivergedError, TransferError)
from .kt import (LocalTeacher, PseudoDataset, PseudoSample, TeacherHandle, blackbox_answer,
                 distill, kt_session, reconstruct_dataset)
from .mlp import (LabeledDataset, MlpConfig, MlpModel, TrainConfig, forward_softmax, init_mlp,
                  load_mlp, loss_and_grad, predict_rank, save_mlp, train)
from .rrf import (RrfVector, onehot_from_rrf, rank_of, rrf_encode, rrf_to_dense,
                  sample_random_rrf)
from .samplers import QuerySet, SamplerSpec, build_query_set, naive_random_sample, oracle_sample
from .scenario import (ExperimentConfig, GenerationReport, WorldConfig, gen_world,
                       run_experiment, run_generation)

__version__ = "0.1.0"
