"""外部格式适配模块"""

from .sofa import import_sofa

__all__ = [
    'import_sofa',
]
