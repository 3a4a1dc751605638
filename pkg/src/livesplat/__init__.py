"""livesplat: on-the-fly deformable Gaussian avatar training, CPU-only.

A differentiable tile splatting renderer over a mesh-anchored Gaussian
cloud, with motion-aware clone/prune, learnable binary-mask simplification,
a synthetic deforming-head scene harness, and streaming persistence.
"""

from .camera import Camera
from .cloud import (EffectiveAttributes, GaussianCloud, activate,
                    build_covariance, color_of, eval_gaussian, make_cloud)
from .anchors import (AnchorBindings, AnchorMesh, CanonicalReference,
                      MeshFrame, accumulate_motion, anchor_frame,
                      bind_uv_points, point_to_surface, sample_uv_anchors,
                      to_world)
from .adapt import (AdaptConfig, GradAccumulator, accumulate_step,
                    clone_prune, compute_idx, simplify_small,
                    straight_through)
from .render import (ProjectedGaussians, RenderOutput, project,
                     rasterize_forward, rasterize_backward_screen,
                     render_reference)
from .pipeline import (ParamGrads, RenderContext, render_cloud,
                       render_cloud_backward, render_cloud_reference)
from .losses import (loss_dark_channel, loss_dssim, loss_l1,
                     loss_normal_consistency)
from .metrics import mse, psnr
from .optim import Adam, LearningRates
from .scene import (FrameSample, SceneConfig, SceneDirectory, SyntheticScene,
                    gen_scene, save_scene)

__version__ = "0.1.0"
