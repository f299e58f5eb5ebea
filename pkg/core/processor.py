#!/usr/bin/env python3
"""
批处理器 - 协调合成、预处理、线索比较、行为分析的全部流程
"""

import time
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from models.sphere import (
    Perturbation,
    ResponseModel,
    SphereModelConfig,
    generate_sphere_set,
    localisation_grid,
    perturb_set,
    simulate_responses,
)
from services.sofa import import_sofa
from utils.bundle import read_bundle, write_bundle
from utils.file import Manifest, RunRecord, SubjectEntry, save_json, save_table, write_manifest
from utils.format import (
    CLUSTER_COLUMNS,
    cluster_bars_svg,
    cluster_rows,
    curve_rows,
    magnitude_map_svg,
    magnitude_rows,
    spatial_heatmap_svg,
    spatial_rows,
)
from utils.logs import read_lsd_table, read_response_log, write_response_log
from .behavior import (
    SUMMARY_METRICS,
    BehaviorConfig,
    condition_tests,
    group_summary,
    log_trial_metrics,
    lsd_correlation_table,
    plane_correlation,
    summarize_log,
    table_condition_tests,
)
from .cues import (
    EARS,
    GRID_METRICS,
    PLANES,
    CueReport,
    compare_sets,
    lsd_frequency_curve,
    mean_lsd_db,
    mean_magnitude_map,
    spatial_grid_differences,
)
from .errors import ConfigError, HeterogeneousGrids, HrtfEvalError, InsufficientSubjects, StatisticsError
from .model import HrirSet, MetricConfig, apply_azimuth_convention
from .preprocess import PreprocessConfig, preprocess_pipeline
from .stats import cluster_permutation_freq, median_iqr

BUNDLE_SUFFIX = '.hrirb'
CUE_AGGREGATES = ('mean_abs_itd_us', 'mean_abs_ild_db', 'mean_lsd_db')
DEFAULT_CORRELATION_BAND_HZ = (1000.0, 16000.0)


def derive_seed(*keys: int) -> int:
    """由若干整数派生出一个 32 位种子（与调用顺序、并行度无关）"""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def load_set(path: Path, subject_id: str, label: str, convention: str = 'counterclockwise') -> HrirSet:
    """
    读取一个 HRIR 集合（.sofa 走 SOFA 适配器，其余按 bundle 读）

    Args:
        path: 文件路径
        subject_id: 清单中的受试者编号（覆盖文件中的值）
        label: 清单中的条件名（覆盖文件中的值）
        convention: 文件方位角约定
    """
    path = Path(path)
    if path.suffix.lower() == '.sofa':
        hrir_set = import_sofa(path, convention)
    else:
        hrir_set = apply_azimuth_convention(read_bundle(path), convention)
    return hrir_set.replace(subject_id=subject_id, label=label)


# ==================== 单受试者任务（可并行） ====================

def _preprocess_subject(
    entry: SubjectEntry,
    reference_label: str,
    convention: str,
    cfg: PreprocessConfig,
    out_dir: Path
) -> Tuple[List[Path], List[str]]:
    paths: List[Path] = []
    errors: List[str] = []
    try:
        reference = load_set(entry.reference, entry.subject_id, reference_label, convention)
    except HrtfEvalError as e:
        return paths, [f"{entry.subject_id}/{reference_label} ({entry.reference}): {e}"]

    jobs = [(reference_label, entry.reference)] + [(c.name, c.path) for c in entry.conditions]
    for name, path in jobs:
        try:
            hrir_set = reference if name == reference_label else load_set(path, entry.subject_id, name, convention)
            processed = preprocess_pipeline(hrir_set, reference, cfg)
            paths.append(write_bundle(processed, out_dir / entry.subject_id / f"{name}{BUNDLE_SUFFIX}"))
        except HrtfEvalError as e:
            errors.append(f"{entry.subject_id}/{name} ({path}): {e}")
    return paths, errors


@dataclass
class SubjectComparison:
    """一个受试者全部条件的比较结果"""

    subject_id: str
    reference: HrirSet
    sets: Dict[str, HrirSet] = field(default_factory=dict)
    reports: Dict[str, CueReport] = field(default_factory=dict)
    band_lsd_db: Dict[str, float] = field(default_factory=dict)


def _compare_subject(
    entry: SubjectEntry,
    reference_label: str,
    convention: str,
    cfg: MetricConfig,
    band_cfg: MetricConfig,
    tol_deg: float
) -> SubjectComparison:
    reference = load_set(entry.reference, entry.subject_id, reference_label, convention)
    result = SubjectComparison(entry.subject_id, reference)
    for cond in entry.conditions:
        hrir_set = load_set(cond.path, entry.subject_id, cond.name, convention)
        result.sets[cond.name] = hrir_set
        result.reports[cond.name] = compare_sets(hrir_set, reference, cfg, tol_deg)
        result.band_lsd_db[cond.name] = mean_lsd_db(hrir_set, reference, band_cfg, tol_deg)
    return result


def _synth_subject(
    sphere: SphereModelConfig,
    s_idx: int,
    subject_id: str,
    radii: Sequence[float],
    reference_name: str,
    conditions: Sequence[Dict[str, Any]],
    seed: int,
    out_dir: Path
) -> Dict[str, Path]:
    n = len(radii)

    def measured(idx: int, label: str) -> HrirSet:
        cfg = replace(sphere, head_radius_m=radii[idx], subject_id=subject_id, label=label,
                      noise_seed=derive_seed(seed, idx, 0))
        return generate_sphere_set(cfg)

    written = {reference_name: write_bundle(measured(s_idx, reference_name),
                                            out_dir / subject_id / f"{reference_name}{BUNDLE_SUFFIX}")}
    for c_idx, cond in enumerate(conditions, start=1):
        name = cond['name']
        if cond.get('other_subject'):
            # 非个体化条件：借用下一个受试者的实测集合
            hrir_set = measured((s_idx + 1) % n, name)
        else:
            cfg = replace(sphere, head_radius_m=radii[s_idx] * float(cond.get('head_radius_scale', 1.0)),
                          subject_id=subject_id, label=name, noise_seed=derive_seed(seed, s_idx, c_idx))
            if 'gain_law' in cond:
                cfg = replace(cfg, gain_law=str(cond['gain_law']))
            hrir_set = generate_sphere_set(cfg)
        if cond.get('perturbation'):
            hrir_set, _ = perturb_set(hrir_set, Perturbation.from_dict(cond['perturbation']),
                                      seed=derive_seed(seed, s_idx, c_idx, 1))
        written[name] = write_bundle(hrir_set, out_dir / subject_id / f"{name}{BUNDLE_SUFFIX}")
    return written


# ==================== 批处理器 ====================

class BatchProcessor:
    """批处理协调器"""

    def __init__(self, config: Dict[str, Any], quiet: bool = False):
        """
        初始化处理器

        Args:
            config: 已合并的配置字典
            quiet: 不打印进度（错误仍然打印）
        """
        self.config = config
        self.quiet = quiet

        self.metric_cfg = MetricConfig.from_dict(config.get('metrics'))
        self.preprocess_cfg = PreprocessConfig.from_dict(config.get('preprocess'), self.metric_cfg)
        self.behavior_cfg = BehaviorConfig.from_dict(config.get('behavior'))

        stats = config.get('stats') or {}
        self.alpha = float(stats.get('alpha', 0.05))
        self.alpha_cluster = float(stats.get('alpha_cluster', 0.05))
        self.n_permutations = int(stats.get('n_permutations', 999))
        self.seed = int(stats.get('seed', 0))
        band = stats.get('correlation_band_hz') or DEFAULT_CORRELATION_BAND_HZ
        self.band_cfg = replace(self.metric_cfg, freq_band_hz=tuple(float(v) for v in band))

        self.grid_step_deg = float((config.get('spatial') or {}).get('grid_step_deg', 45.0))
        output = config.get('output') or {}
        self.output_dir = Path(output.get('output_dir', './outputs'))
        self.jobs = max(1, int(output.get('jobs', 1)))
        if self.n_permutations < 1:
            raise ConfigError(f"n_permutations 必须 ≥ 1: {self.n_permutations}")

    def _say(self, message: str):
        if not self.quiet:
            print(message)

    def _warn(self, message: str):
        self._say(f"⚠️  {message}")

    def _banner(self, title: str):
        self._say(f"\n{'='*70}")
        self._say(title)
        self._say(f"{'='*70}")

    def _map(self, fn: Callable, tasks: Sequence[tuple]) -> List[Any]:
        """按 --jobs 并行执行；结果顺序与 tasks 一致"""
        if self.jobs > 1 and len(tasks) > 1:
            return Parallel(n_jobs=self.jobs)(delayed(fn)(*task) for task in tasks)
        return [fn(*task) for task in tasks]

    def _record(self, command: str, manifest: Optional[Path]) -> RunRecord:
        return RunRecord(command=command, manifest=str(manifest) if manifest else None,
                         config=self.config, seed=self.seed)

    def _finish(self, record: RunRecord, out_dir: Path, paths: Sequence[Path]) -> int:
        record.add_outputs(sorted(paths), root=out_dir)
        record_path = record.save(out_dir / 'run_record.yaml')
        for message in record.errors:
            print(f"❌ {message}")
        self._say(f"\n💾 输出 {len(paths)} 个文件 → {out_dir}")
        self._say(f"📊 运行记录: {record_path}")
        return 2 if record.errors else 0

    # ---------- synth ----------

    def synth(self) -> int:
        """
        生成合成数据：每个受试者一个参考集合和若干条件集合、模拟响应日志、可直接运行的清单

        Returns:
            退出码
        """
        synth = self.config.get('synth') or {}
        out_dir = self.output_dir / 'synth'
        record = self._record('synth', None)
        self._banner("🧪 生成合成数据")

        start = time.perf_counter()
        sphere = SphereModelConfig.from_dict(synth.get('sphere'))
        n_subjects = int(synth.get('n_subjects', 2))
        if n_subjects < 1:
            raise ConfigError(f"n_subjects 必须 ≥ 1: {n_subjects}")
        subjects = [f"S{i + 1:02d}" for i in range(n_subjects)]
        spread = float(synth.get('head_radius_spread', 0.0))
        radii = [
            sphere.head_radius_m * (1.0 + spread * float(np.random.default_rng([self.seed, i]).standard_normal()))
            for i in range(n_subjects)
        ]
        reference = dict(synth.get('reference') or {'name': 'measured'})
        reference_name = str(reference.get('name', 'measured'))
        conditions = [dict(c) for c in synth.get('conditions') or []]
        names = [reference_name] + [str(c.get('name', '')) for c in conditions]
        if '' in names or len(set(names)) != len(names):
            raise ConfigError(f"synth 条件名为空或重复: {names}")

        written = self._map(_synth_subject, [
            (sphere, i, sid, radii, reference_name, conditions, self.seed, out_dir / 'bundles')
            for i, sid in enumerate(subjects)
        ])
        paths = [p for subject in written for p in subject.values()]
        record.timings_s['bundles'] = round(time.perf_counter() - start, 3)
        self._say(f"✅ {len(paths)} 个 bundle（{n_subjects} 个受试者 × {len(names)} 个条件）")

        start = time.perf_counter()
        models = {reference_name: ResponseModel.from_dict(reference.get('response'))}
        for cond in conditions:
            models[cond['name']] = ResponseModel.from_dict(cond.get('response'))
        log = simulate_responses(localisation_grid(), subjects, models,
                                 repetitions=int(synth.get('repetitions', 3)), seed=self.seed)
        log_path = write_response_log(log, out_dir / 'responses.csv')
        paths.append(log_path)
        record.timings_s['responses'] = round(time.perf_counter() - start, 3)
        self._say(f"✅ 响应日志: {len(log)} 个试次")

        manifest = {
            'reference_label': reference_name,
            'azimuth_convention': 'counterclockwise',
            'responses': log_path.name,
            'subjects': [
                {
                    'id': sid,
                    'reference': str(written[i][reference_name].relative_to(out_dir)),
                    'conditions': [
                        {'name': c['name'], 'path': str(written[i][c['name']].relative_to(out_dir))}
                        for c in conditions
                    ],
                }
                for i, sid in enumerate(subjects)
            ],
        }
        paths.append(write_manifest(manifest, out_dir / 'manifest.yaml'))
        return self._finish(record, out_dir, paths)

    # ---------- preprocess ----------

    def preprocess(self, manifest: Manifest) -> int:
        """
        对清单中每个受试者的参考和全部条件做完整预处理链，写出 no-ITD bundle

        单个文件的错误被收集，处理继续；结束时有错误则返回 2。
        """
        out_dir = self.output_dir / 'preprocessed'
        record = self._record('preprocess', manifest.path)
        self._banner(f"📂 预处理: {len(manifest.subjects)} 个受试者")

        start = time.perf_counter()
        results = self._map(_preprocess_subject, [
            (entry, manifest.reference_label, manifest.azimuth_convention, self.preprocess_cfg, out_dir)
            for entry in manifest.subjects
        ])
        record.timings_s['preprocess'] = round(time.perf_counter() - start, 3)

        paths: List[Path] = []
        for entry, (written, errors) in zip(manifest.subjects, results):
            paths.extend(written)
            record.errors.extend(errors)
            status = '✅' if not errors else '❌'
            self._say(f"{status} {entry.subject_id}: {len(written)} 个 bundle")

        if not record.errors:
            paths.append(write_manifest({
                'reference_label': manifest.reference_label,
                'azimuth_convention': 'counterclockwise',
                'responses': str(manifest.responses) if manifest.responses else None,
                'analysis': manifest.analysis,
                'subjects': [
                    {
                        'id': entry.subject_id,
                        'reference': f"{entry.subject_id}/{manifest.reference_label}{BUNDLE_SUFFIX}",
                        'conditions': [
                            {'name': c.name, 'path': f"{entry.subject_id}/{c.name}{BUNDLE_SUFFIX}"}
                            for c in entry.conditions
                        ],
                    }
                    for entry in manifest.subjects
                ],
            }, out_dir / 'manifest.yaml'))
        return self._finish(record, out_dir, paths)

    # ---------- compare ----------

    def compare(self, manifest: Manifest) -> int:
        """
        线索比较：逐受试者 CSV、聚合中位数/IQR 与条件间检验、空间热图、
        频率 LSD 曲线与聚类检验、幅度响应图、相关分析用的 LSD 表
        """
        out_dir = self.output_dir / 'compare'
        record = self._record('compare', manifest.path)
        conditions = manifest.condition_names()
        self._banner(f"📊 线索比较: {len(manifest.subjects)} 个受试者 × {len(conditions)} 个条件")

        start = time.perf_counter()
        subjects: List[SubjectComparison] = self._map(_compare_subject, [
            (entry, manifest.reference_label, manifest.azimuth_convention,
             self.metric_cfg, self.band_cfg, self.preprocess_cfg.match_tolerance_deg)
            for entry in manifest.subjects
        ])
        record.timings_s['cues'] = round(time.perf_counter() - start, 3)

        paths: List[Path] = []
        for subject in subjects:
            for name, report in subject.reports.items():
                paths.append(save_table([r.to_row() for r in report.records],
                                        out_dir / 'cues' / subject.subject_id / f"{name}.csv"))
        aggregates = [subject.reports[c].aggregates() for subject in subjects for c in conditions if c in subject.reports]
        paths.append(save_table(aggregates, out_dir / 'cue_aggregates.csv'))
        paths.extend(self._cue_statistics(subjects, conditions, out_dir))
        self._say(f"✅ 线索表: {len(aggregates)} 个比较")

        start = time.perf_counter()
        paths.extend(self._spatial(subjects, conditions, out_dir))
        record.timings_s['spatial'] = round(time.perf_counter() - start, 3)

        start = time.perf_counter()
        paths.extend(self._frequency(subjects, conditions, out_dir))
        record.timings_s['frequency'] = round(time.perf_counter() - start, 3)

        start = time.perf_counter()
        paths.extend(self._magnitude_maps(subjects, [manifest.reference_label] + conditions, manifest.reference_label, out_dir))
        record.timings_s['magnitude_maps'] = round(time.perf_counter() - start, 3)

        lsd_rows = [
            {'participant': subject.subject_id, 'condition': c, 'lsd_db': subject.band_lsd_db[c]}
            for subject in subjects for c in conditions if c in subject.band_lsd_db
        ]
        paths.append(save_table(lsd_rows, out_dir / 'lsd_table.csv'))
        return self._finish(record, out_dir, paths)

    def _cue_statistics(self, subjects: Sequence[SubjectComparison], conditions: Sequence[str], out_dir: Path) -> List[Path]:
        summary_rows = []
        for c in conditions:
            for metric in CUE_AGGREGATES:
                values = [getattr(s.reports[c], metric) for s in subjects if c in s.reports]
                med, p25, p75 = median_iqr(values)
                summary_rows.append({'condition': c, 'metric': metric, 'n_subjects': len(values),
                                     'median': med, 'p25': p25, 'p75': p75})
        paths = [save_table(summary_rows, out_dir / 'cue_summary.csv')]

        test_rows, trail = [], {}
        for metric in CUE_AGGREGATES:
            table = {s.subject_id: {c: getattr(r, metric) for c, r in s.reports.items()} for s in subjects}
            try:
                tests = table_condition_tests(table, metric, conditions, self.alpha)
            except StatisticsError as e:
                self._warn(f"{metric} 条件间检验跳过: {e}")
                continue
            test_rows.extend(tests.rows())
            trail[metric] = tests.trail
        if test_rows:
            paths.append(save_table(test_rows, out_dir / 'cue_condition_tests.csv'))
            paths.append(save_json(trail, out_dir / 'cue_condition_tests_trail.json'))
        return paths

    def _spatial(self, subjects: Sequence[SubjectComparison], conditions: Sequence[str], out_dir: Path) -> List[Path]:
        paths = []
        for c in conditions:
            reports = [s.reports[c] for s in subjects if c in s.reports]
            for metric in GRID_METRICS:
                try:
                    summary = spatial_grid_differences(reports, metric, self.grid_step_deg, self.alpha)
                except InsufficientSubjects as e:
                    self._warn(f"{c} 空间统计跳过: {e}")
                    break
                stem = out_dir / 'spatial' / f"{c}_{metric}"
                paths.append(save_table(spatial_rows(summary), stem.with_suffix('.csv')))
                paths.append(spatial_heatmap_svg(summary, stem.with_suffix('.svg')))
                self._say(f"✅ 空间图 {c}/{metric}: {len(summary.significant())} 个显著节点")
        return paths

    def _frequency(self, subjects: Sequence[SubjectComparison], conditions: Sequence[str], out_dir: Path) -> List[Path]:
        curves = []
        for c in conditions:
            members = [s for s in subjects if c in s.sets]
            curves.append(lsd_frequency_curve([s.sets[c] for s in members], [s.reference for s in members],
                                              self.metric_cfg, label=c,
                                              tol_deg=self.preprocess_cfg.match_tolerance_deg))
        paths = [save_table(curve_rows(curves), out_dir / 'lsd_curves.csv')]

        results = {}
        by_label = {curve.label: curve for curve in curves}
        for a, b in combinations(conditions, 2):
            if by_label[a].subject_ids != by_label[b].subject_ids:
                self._warn(f"{a} vs {b}: 受试者不一致，跳过聚类检验")
                continue
            try:
                results[f"{a} vs {b}"] = cluster_permutation_freq(
                    by_label[a].per_subject, by_label[b].per_subject,
                    alpha_cluster=self.alpha_cluster, n_perm=self.n_permutations,
                    seed=self.seed, labels=(a, b), n_jobs=self.jobs,
                )
            except InsufficientSubjects as e:
                self._warn(f"{a} vs {b} 聚类检验跳过: {e}")
        if curves:
            paths.append(save_table(cluster_rows(results, curves[0].freq_bins_hz), out_dir / 'lsd_clusters.csv',
                                    columns=CLUSTER_COLUMNS))
            paths.append(cluster_bars_svg(curves, results, out_dir / 'lsd_clusters.svg', self.alpha))
        n_sig = sum(len(r.significant(self.alpha)) for r in results.values())
        self._say(f"✅ 频率 LSD: {len(curves)} 条曲线，{len(results)} 个比较，{n_sig} 个显著聚类")
        return paths

    def _magnitude_maps(
        self,
        subjects: Sequence[SubjectComparison],
        labels: Sequence[str],
        reference_label: str,
        out_dir: Path
    ) -> List[Path]:
        paths = []
        for label in labels:
            if label == reference_label:
                sets = [s.reference for s in subjects]
            else:
                sets = [s.sets[label] for s in subjects if label in s.sets]
            for plane in PLANES:
                for ear in EARS:
                    try:
                        m = mean_magnitude_map(sets, ear, plane, self.metric_cfg)
                    except HeterogeneousGrids as e:
                        self._warn(f"{label} {plane}/{ear} 幅度图跳过: {e}")
                        continue
                    stem = out_dir / 'magnitude' / f"{label}_{plane}_{ear}"
                    paths.append(save_table(magnitude_rows(m), stem.with_suffix('.csv')))
                    paths.append(magnitude_map_svg(m, stem.with_suffix('.svg')))
        return paths

    # ---------- behave ----------

    def behave(self, log_path: Path, lsd_table: Optional[Path] = None, baseline: Optional[str] = None) -> int:
        """
        行为分析：逐试次、受试者、组汇总，条件间检验，平面相关，可选的 LSD 相关

        Args:
            log_path: 响应日志
            lsd_table: compare 输出的 lsd_table.csv（可选）
            baseline: 个体化基线条件名（默认取配置 behavior.baseline）
        """
        out_dir = self.output_dir / 'behave'
        record = self._record('behave', log_path)
        baseline = baseline or str((self.config.get('behavior') or {}).get('baseline', 'measured'))

        log = read_response_log(log_path)
        self._banner(f"🎧 行为分析: {len(log)} 个试次，{len(log.participants())} 个受试者")

        start = time.perf_counter()
        trials = log_trial_metrics(log, self.behavior_cfg)
        summaries = summarize_log(log, self.behavior_cfg)
        paths = [
            save_table([t.to_row() for t in trials], out_dir / 'trials.csv'),
            save_table([s.to_row() for s in summaries], out_dir / 'participants.csv'),
            save_table([g.to_row() for g in group_summary(summaries)], out_dir / 'group.csv'),
        ]
        record.timings_s['metrics'] = round(time.perf_counter() - start, 3)

        start = time.perf_counter()
        test_rows, trail = [], {}
        for metric in SUMMARY_METRICS:
            try:
                tests = condition_tests(summaries, metric, self.behavior_cfg.alpha)
            except StatisticsError as e:
                self._warn(f"{metric} 条件间检验跳过: {e}")
                continue
            test_rows.extend(tests.rows())
            trail[metric] = tests.trail
        if test_rows:
            paths.append(save_table(test_rows, out_dir / 'condition_tests.csv'))
            paths.append(save_json(trail, out_dir / 'condition_tests_trail.json'))

        plane_rows = []
        for condition in log.conditions():
            subset = [t for t in trials if t.condition == condition]
            for plane in ('horizontal', 'median'):
                try:
                    plane_rows.append({'condition': condition, **plane_correlation(subset, plane).to_dict()})
                except StatisticsError as e:
                    self._warn(f"{condition} {plane} 平面相关跳过: {e}")
        if plane_rows:
            paths.append(save_table(plane_rows, out_dir / 'plane_correlation.csv'))
        record.timings_s['tests'] = round(time.perf_counter() - start, 3)

        if lsd_table is not None:
            paths.extend(self._lsd_correlation(lsd_table, summaries, log.conditions(), baseline, out_dir))

        self._say(f"✅ {len(summaries)} 个受试者汇总，{len(test_rows)} 行检验结果")
        return self._finish(record, out_dir, paths)

    def _lsd_correlation(self, lsd_table: Path, summaries, conditions: Sequence[str], baseline: str, out_dir: Path) -> List[Path]:
        table = read_lsd_table(lsd_table)
        if baseline not in conditions:
            self._warn(f"日志中没有基线条件 {baseline}，跳过 LSD 相关")
            return []
        rows = []
        for condition in conditions:
            if condition == baseline or condition not in table:
                continue
            for res in lsd_correlation_table(table[condition], summaries, condition, baseline):
                rows.append(res.to_dict())
        if not rows:
            self._warn("LSD 表与日志没有共同条件，跳过 LSD 相关")
            return []
        self._say(f"✅ LSD 相关: {len(rows)} 行")
        return [save_table(rows, out_dir / 'lsd_correlation.csv')]
