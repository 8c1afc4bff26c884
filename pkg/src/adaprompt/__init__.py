"""Region-adaptive pixel-space prompting over a frozen encoder."""

from .autodiff import (ParamGroup, SgdState, Tensor, conv2d, grad_check,
                       sgd_step, softmax)
from .classifier import (ClassPrototypes, FrozenEncoder, build_prototypes,
                         encode, loss, similarity_logits)
from .edges import EdgeMap, laplacian_edge_map, laplacian_kernel, to_grayscale
from .experiment import (ExperimentConfig, MetricsRow, ablate, evaluate,
                         export_masks, train)
from .maskgen import (GumbelSchedule, MaskGeneratorParams, anneal,
                      count_generator_params, dilate, gumbel_noise,
                      gumbel_softmax_sample, inference_decision,
                      region_logits)
from .prompting import (PromptTemplate, apply_prompt, count_prompt_params,
                        frame_support)
from .synth import SynthConfig, SynthSample, gen_dataset, region_overlap_stats
from .tensorio import read_tensor, write_tensor

__all__ = [name for name in dir() if not name.startswith("_")]
