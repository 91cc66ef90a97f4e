"""Differentiable motion feature extraction and a toy video classifier.

Everything is built on plain numpy arrays with hand-written adjoints; see
the README for the op convention (forward functions return ``(y, vjp)``).
"""

from .tensor import F32, F64, Rng, elementwise, rng_normal, scale, tensor_new
from .ops import (BatchNormState, batchnorm, conv2d, depthwise_conv2d,
                  fully_connected, global_avg_pool, relu, softmax,
                  softmax_cross_entropy, temporal_shift)
from .correlation import (correlation_flops, correlation_volume,
                          correlation_volume_batch, reduce_channels)
from .displacement import (KernelSoftArgmaxParams, assemble_displacement,
                           confidence_map, kernel_soft_argmax, soft_argmax)
from .ms_module import (MsModule, MsModuleConfig, feature_transform, fuse,
                        ms_forward)
from .dataset import DatasetConfig, SyntheticMotionDataset, gen_dataset
from .model import ToyMSNet, ToyNetConfig
from .train import (TrainConfig, ensemble_predict, evaluate,
                    sgd_nesterov_step, temporal_average, train)
from .io_formats import (FormatError, checkpoint_load, checkpoint_save,
                         msqt_read, msqt_write)
from .viz import color_wheel, confidence_viz, flow_colorize, ppm_write

__version__ = "0.1.0"
