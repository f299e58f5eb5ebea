"""合成模型模块（球头模型、扰动、模拟响应）"""

from .sphere import Perturbation, ResponseModel, SphereModelConfig, generate_sphere_set, perturb_set

__all__ = [
    'SphereModelConfig',
    'Perturbation',
    'ResponseModel',
    'generate_sphere_set',
    'perturb_set',
]
