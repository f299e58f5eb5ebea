import numpy as np
import pytest

from core.errors import MissingInput, MissingVariable, UnsupportedConvention
from services.sofa import import_sofa

h5py = pytest.importorskip('h5py')


def _write_sofa(path, convention='SimpleFreeFieldHRIR', receivers=2, with_rate=True, cartesian=False):
    ir = np.zeros((3, receivers, 200))
    ir[:, :, 20] = 1.0
    with h5py.File(path, 'w') as f:
        f.attrs['SOFAConventions'] = np.bytes_(convention)
        f.attrs['ListenerShortName'] = np.bytes_('KEMAR')
        f.attrs['Title'] = np.bytes_('measured')
        f.create_dataset('Data.IR', data=ir)
        if with_rate:
            rate = f.create_dataset('Data.SamplingRate', data=np.array([48000.0]))
            rate.attrs['Units'] = np.bytes_('hertz')
        if cartesian:
            pos = f.create_dataset('SourcePosition', data=np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
            pos.attrs['Type'] = np.bytes_('cartesian')
        else:
            pos = f.create_dataset('SourcePosition', data=np.array([[0.0, 0.0, 1.2], [90.0, 0.0, 1.2], [30.0, 20.0, 1.2]]))
            pos.attrs['Type'] = np.bytes_('spherical')
    return path


def test_import_spherical(tmp_path):
    s = import_sofa(_write_sofa(tmp_path / 'a.sofa'))
    assert s.sample_rate_hz == 48000
    assert s.n_directions == 3
    assert s.length == 200
    assert s.subject_id == 'KEMAR'
    assert s.directions[1].azimuth_deg == 90.0
    assert s.directions[2].elevation_deg == 20.0
    assert s.directions[0].distance_m == 1.2


def test_import_clockwise(tmp_path):
    s = import_sofa(_write_sofa(tmp_path / 'a.sofa'), convention_hint='clockwise')
    assert s.directions[1].azimuth_deg == pytest.approx(270.0)


def test_import_cartesian(tmp_path):
    s = import_sofa(_write_sofa(tmp_path / 'c.sofa', cartesian=True))
    assert s.directions[0].azimuth_deg == pytest.approx(0.0)
    assert s.directions[1].azimuth_deg == pytest.approx(90.0)
    assert s.directions[2].elevation_deg == pytest.approx(90.0)


def test_import_errors(tmp_path):
    with pytest.raises(MissingInput):
        import_sofa(tmp_path / 'none.sofa')
    with pytest.raises(UnsupportedConvention):
        import_sofa(_write_sofa(tmp_path / 'b.sofa', convention='GeneralFIR'))
    with pytest.raises(UnsupportedConvention):
        import_sofa(_write_sofa(tmp_path / 'c.sofa', receivers=4))
    with pytest.raises(MissingVariable):
        import_sofa(_write_sofa(tmp_path / 'd.sofa', with_rate=False))
