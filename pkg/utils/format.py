#!/usr/bin/env python3
"""
格式化输出工具 - 表格行和 SVG 图（空间热图、频率 LSD 曲线与聚类条、幅度响应图）

SVG 输出固定了 hashsalt 且不写日期，同样的输入得到同样的文件。
"""

from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence, Union

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import TwoSlopeNorm  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from core.cues import FrequencyLsdCurve, MagnitudeMap, SpatialGridSummary  # noqa: E402
from core.errors import IoFailure  # noqa: E402
from core.stats import ClusterResult  # noqa: E402

# 显著性边框线宽：p < 0.05 细、p < 0.01 中、p < 0.001 粗
TIER_LINE_WIDTHS = {1: 0.8, 2: 2.0, 3: 3.5}
_UNITS = {'itd': 'µs', 'ild': 'dB', 'lsd': 'dB'}
CLUSTER_COLUMNS = [
    'comparison', 'start_bin', 'stop_bin', 'start_hz', 'stop_hz', 'sign', 'mass', 'p', 'p_fdr',
    'higher_lsd', 'n_permutations', 'seed', 'correction_scope',
]

plt.rcParams['svg.hashsalt'] = 'hrtf-eval'
plt.rcParams['svg.fonttype'] = 'none'


def _save_svg(fig, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format='svg', metadata={'Date': None, 'Creator': None})
    except OSError as e:
        raise IoFailure(f"无法写入 {path}: {e}")
    finally:
        plt.close(fig)
    return path


def spatial_rows(summary: SpatialGridSummary) -> List[Dict[str, Any]]:
    """空间网格汇总 → CSV 行（被排除的节点也列出，统计量为空）"""
    rows = [{'condition': summary.label, 'metric': summary.metric, 'excluded': False, **n.to_row()}
            for n in summary.nodes]
    for node in summary.excluded:
        rows.append({
            'condition': summary.label, 'metric': summary.metric, 'excluded': True,
            'azimuth_deg': node.azimuth_deg, 'elevation_deg': node.elevation_deg, 'n_subjects': 1,
            'mean_diff': float('nan'), 't': float('nan'), 'p': float('nan'), 'p_fdr': float('nan'), 'tier': 0,
        })
    return rows


def curve_rows(curves: Sequence[FrequencyLsdCurve]) -> List[Dict[str, Any]]:
    """频率 LSD 曲线 → 长表"""
    rows = []
    for curve in curves:
        for f, mean, sd in zip(curve.freq_bins_hz, curve.lsd_db, curve.lsd_sd_db):
            rows.append({'condition': curve.label, 'freq_hz': float(f), 'lsd_db': float(mean),
                         'sd_db': float(sd), 'n_subjects': curve.n_subjects})
    return rows


def cluster_rows(results: Mapping[str, ClusterResult], freqs: np.ndarray) -> List[Dict[str, Any]]:
    """聚类结果 → CSV 行（每个比较一组聚类，校正只在比较内部进行）"""
    rows = []
    for comparison, res in results.items():
        for c in res.clusters:
            rows.append({
                'comparison': comparison,
                'start_bin': c.start_bin,
                'stop_bin': c.stop_bin,
                'start_hz': float(freqs[c.start_bin]),
                'stop_hz': float(freqs[c.stop_bin]),
                'sign': c.sign,
                'mass': c.mass,
                'p': c.p_value,
                'p_fdr': c.p_adjusted,
                'higher_lsd': c.winner,
                'n_permutations': res.n_permutations,
                'seed': res.seed,
                'correction_scope': 'per_comparison',
            })
    return rows


def magnitude_rows(m: MagnitudeMap) -> List[Dict[str, Any]]:
    rows = []
    for a, mags in zip(m.angles_deg, m.magnitude_db):
        for f, v in zip(m.freq_hz, mags):
            rows.append({'plane': m.plane, 'ear': m.ear, 'condition': m.label,
                         'angle_deg': float(a), 'freq_hz': float(f), 'magnitude_db': float(v)})
    return rows


# ==================== SVG ====================

def spatial_heatmap_svg(summary: SpatialGridSummary, path: Union[str, Path]) -> Path:
    """
    空间差异热图

    横轴方位角、纵轴仰角，发散色图（蓝负红正），显著节点加黑框，
    线宽按 0.05 / 0.01 / 0.001 三档区分。
    """
    step = summary.grid_step_deg
    fig, ax = plt.subplots(figsize=(8, 4))
    values = [n.mean_diff for n in summary.nodes if np.isfinite(n.mean_diff)]
    vmax = max([abs(v) for v in values] + [1e-12])
    norm = TwoSlopeNorm(vcenter=0.0, vmin=-vmax, vmax=vmax)
    cmap = plt.get_cmap('RdBu_r')

    for n in summary.nodes:
        az = n.node.azimuth_deg
        el = n.node.elevation_deg
        # 两极各一个节点，横跨整行
        x0, width = (-step / 2, 360.0) if abs(el) == 90.0 else (az - step / 2, step)
        color = cmap(norm(n.mean_diff)) if np.isfinite(n.mean_diff) else (0.8, 0.8, 0.8, 1.0)
        ax.add_patch(Rectangle((x0, el - step / 2), width, step, facecolor=color, edgecolor='none'))
        if n.tier > 0:
            ax.add_patch(Rectangle((x0, el - step / 2), width, step, fill=False,
                                   edgecolor='black', linewidth=TIER_LINE_WIDTHS[n.tier]))
        ax.text(az if abs(el) != 90.0 else 180.0 - step / 2, el, f"{n.mean_diff:.2g}",
                ha='center', va='center', fontsize=6)
    for node in summary.excluded:
        ax.text(node.azimuth_deg, node.elevation_deg, '×', ha='center', va='center', fontsize=8)

    ax.set_xlim(-step / 2, 360 - step / 2)
    ax.set_ylim(-90 - step / 2, 90 + step / 2)
    ax.set_xlabel('方位角 (°)')
    ax.set_ylabel('仰角 (°)')
    ax.set_title(f"{summary.label}: {summary.metric.upper()} 有符号差异 ({_UNITS[summary.metric]}), n={summary.n_subjects}")
    fig.colorbar(plt.cm.ScalarMappable(norm=norm, cmap=cmap), ax=ax)
    return _save_svg(fig, path)


def cluster_bars_svg(
    curves: Sequence[FrequencyLsdCurve],
    results: Mapping[str, ClusterResult],
    path: Union[str, Path],
    alpha: float = 0.05
) -> Path:
    """逐频点 LSD 曲线（均值 ± 标准差）加显著聚类条，每个比较一行"""
    fig, ax = plt.subplots(figsize=(8, 4.5))
    colors = {}
    for i, curve in enumerate(curves):
        line, = ax.plot(curve.freq_bins_hz / 1000.0, curve.lsd_db, label=curve.label, linewidth=1.2)
        colors[curve.label] = line.get_color()
        ax.fill_between(curve.freq_bins_hz / 1000.0, curve.lsd_db - curve.lsd_sd_db,
                        curve.lsd_db + curve.lsd_sd_db, color=line.get_color(), alpha=0.2, linewidth=0)

    freqs = curves[0].freq_bins_hz / 1000.0 if curves else np.zeros(1)
    top = max([float(np.max(c.lsd_db + c.lsd_sd_db)) for c in curves] + [1.0])
    for row, (comparison, res) in enumerate(results.items()):
        y = top * (1.05 + 0.06 * row)
        ax.text(freqs[-1], y, comparison, ha='right', va='bottom', fontsize=6)
        for c in res.significant(alpha):
            ax.hlines(y, freqs[c.start_bin], freqs[c.stop_bin], colors=colors.get(c.winner, 'black'), linewidth=4)

    ax.set_xlabel('频率 (kHz)')
    ax.set_ylabel('LSD (dB)')
    ax.legend(fontsize=7, loc='upper left')
    return _save_svg(fig, path)


def magnitude_map_svg(m: MagnitudeMap, path: Union[str, Path]) -> Path:
    """幅度响应图：横轴频率，纵轴方位角或极角"""
    fig, ax = plt.subplots(figsize=(6, 4))
    mesh = ax.pcolormesh(m.freq_hz / 1000.0, m.angles_deg, m.magnitude_db, shading='nearest', cmap='viridis')
    ax.set_xlabel('频率 (kHz)')
    ax.set_ylabel('方位角 (°)' if m.plane == 'horizontal' else '极角 (°)')
    ax.set_title(f"{m.label} {m.ear} {m.plane} (n={m.n_sets})")
    fig.colorbar(mesh, ax=ax, label='dB')
    return _save_svg(fig, path)
