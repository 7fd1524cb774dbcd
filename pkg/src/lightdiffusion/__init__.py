"""Synthetic light diffusion for portrait-like renders.

Environment-map prefiltering and lighting statistics (:mod:`.envmap`), an
OLAT-based renderer (:mod:`.renderer`), specular/shadow maps (:mod:`.maps`),
synthetic shadow augmentation (:mod:`.shadowaug`), the networks and their
training (:mod:`.model`), and dataset generation plus metrics
(:mod:`.dataset`, :mod:`.metrics`).
"""

from .envmap import (
    EnvironmentMap,
    Lobe,
    ProceduralEnvSpec,
    diffuse_convolve,
    diffusion_parameter,
    dominant_light_direction,
    exponent_for_gini,
    gen_procedural_env,
    gini,
    gini_coefficient,
    luminance,
    mean_radiance,
)
from .errors import (
    ClampWarning,
    DegenerateLightingError,
    DegenerateTintError,
    LightDiffusionError,
    SaturatedShadowError,
    TrainingDivergedError,
    UndefinedGiniError,
    ValidationError,
)
from .maps import SpecShadowPair, composite, compute_spec_shadow, reconstruct_diffuse
from .metrics import MetricsReport, metrics
from .renderer import (
    ImageBuffer,
    Occluder,
    RenderBundle,
    SceneSpec,
    build_scene,
    render_diffused,
    render_env,
    render_olat,
)
from .shadowaug import (
    SilhouetteTexture,
    apply_external_shadow,
    project_shadow_mask,
    sample_silhouette,
    subsurface_tint,
)

__version__ = "0.1.0"
