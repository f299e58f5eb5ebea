"""工具函数模块"""

from .file import *

__all__ = [
    'load_config',
    'merge_config',
    'resolve_config',
    'load_manifest',
    'write_manifest',
    'save_table',
    'save_json',
    'file_digest',
    'RunRecord',
]
