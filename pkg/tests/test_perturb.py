import math

import numpy as np
import pytest

from smallpia.diagnostics import fit_stability_slope
from smallpia.exceptions import ConfigurationError
from smallpia.exceptions import DimensionError
from smallpia.exceptions import UsageError
from smallpia.grid import GridSpec
from smallpia.iterate import IterationConfig
from smallpia.iterate import run_gia
from smallpia.iterate import run_pia
from smallpia.perturb import AdditiveNoise
from smallpia.perturb import CoarseSolve
from smallpia.perturb import ConstantOffset
from smallpia.perturb import PerturbationSpec
from smallpia.perturb import StateNoise
from smallpia.perturb import run_gia_perturbed
from smallpia.perturb import run_pia_perturbed
from smallpia.perturb import sweep
from smallpia.perturb import sweep_frame


CONFIG = IterationConfig(max_iters=8)


@pytest.fixture(scope='module')
def clean_pia(problem, grid, bc, reference):
    return run_pia(problem, grid, bc, CONFIG, reference[0])


@pytest.fixture(scope='module')
def clean_gia(problem, grid, bc, reference):
    return run_gia(problem, grid, bc, CONFIG, reference[0])


@pytest.fixture(scope='module')
def offset_sweep(problem, grid, bc, reference, clean_pia):
    return sweep(
        problem,
        grid,
        bc,
        CONFIG,
        clean_pia,
        ConstantOffset,
        [0.2, 0.1, 0.05],
        reference=reference[0],
    )


@pytest.mark.parametrize('algorithm', ['pia', 'gia'])
def test_identity_reproduces_clean_run(
    problem, grid, bc, reference, clean_pia, clean_gia, algorithm
):
    clean, runner = {
        'pia': (clean_pia, run_pia_perturbed),
        'gia': (clean_gia, run_gia_perturbed),
    }[algorithm]
    spec = PerturbationSpec()
    assert spec.is_identity
    perturbed = runner(problem, grid, bc, CONFIG, spec, clean, reference[0])
    assert perturbed.gaps == [0.0] * len(clean.records)
    assert perturbed.trace.errors == clean.errors


def test_constant_offset_sweep(offset_sweep):
    gaps = [point.plateau_gap for point in offset_sweep]
    assert gaps[0] > gaps[1] > gaps[2] > 0
    slope = fit_stability_slope([(p.amplitude, p.plateau_gap) for p in offset_sweep])
    assert 0.7 <= slope <= 2.3


def test_sweep_frame(offset_sweep, tmp_path):
    frame = sweep_frame(offset_sweep)
    assert list(frame.columns) == ['epsilon', 'plateau_gap']
    assert list(frame['epsilon']) == [0.2, 0.1, 0.05]

    path = tmp_path / 'perturbed.csv'
    offset_sweep[0].perturbed.to_csv(path)
    assert path.read_text().splitlines()[0] == 'iter,gap_sup,error_vs_reference'


def test_additive_noise(problem, grid, bc, reference, clean_pia):
    gaps = {}
    for amplitude in (1e-2, 1e-3):
        spec = PerturbationSpec.of(AdditiveNoise(amplitude), seed=1)
        perturbed = run_pia_perturbed(
            problem, grid, bc, CONFIG, spec, clean_pia, reference[0]
        )
        assert perturbed.records[-1].error_vs_reference <= 10 * amplitude
        gaps[amplitude] = perturbed.plateau_gap()
    assert gaps[1e-3] < gaps[1e-2]


def test_gia_starts_from_clean_value(problem, grid, bc, reference, clean_gia):
    spec = PerturbationSpec.of(AdditiveNoise(1e-2))
    perturbed = run_gia_perturbed(problem, grid, bc, CONFIG, spec, clean_gia, reference[0])
    assert perturbed.records[0].gap_sup == 0
    # v^0 is never approximated, so the first noisy iterate is v^2
    assert perturbed.records[1].gap_sup == 0
    assert perturbed.records[2].gap_sup > 0


def test_state_noise_is_reproducible(problem, grid, bc, reference, clean_pia):
    def run(seed):
        spec = PerturbationSpec.of(StateNoise(0.1), seed=seed)
        return run_pia_perturbed(problem, grid, bc, CONFIG, spec, clean_pia, reference[0])

    first, again, other = run(3), run(3), run(4)
    assert first.gaps == again.gaps
    assert first.gaps != other.gaps


def test_coarse_solve(problem, grid, bc, reference, clean_pia, clean_gia):
    spec = PerturbationSpec.of(CoarseSolve(2))
    for clean, runner in [(clean_pia, run_pia_perturbed), (clean_gia, run_gia_perturbed)]:
        perturbed = runner(problem, grid, bc, CONFIG, spec, clean, reference[0])
        assert 0 < perturbed.plateau_gap() < 0.1

    spec = PerturbationSpec.of(CoarseSolve(7))
    with pytest.raises(DimensionError):
        run_pia_perturbed(problem, grid, bc, CONFIG, spec, clean_pia, reference[0])


def test_large_offset_stays_bounded(problem, grid, bc, reference, clean_pia):
    spec = PerturbationSpec.of(ConstantOffset(math.pi))
    perturbed = run_pia_perturbed(problem, grid, bc, CONFIG, spec, clean_pia, reference[0])
    # arctan terminal plus a running reward of at most 1 over T = 1
    bound = math.pi / 2 + 1 + 1
    assert all(r.value_sup <= bound for r in perturbed.records)
    assert np.all(perturbed.trace.policy(1).values == math.pi / 2)


def test_perturbed_needs_clean_fields(problem, grid, bc, reference):
    clean = run_pia(
        problem, grid, bc, IterationConfig(max_iters=1, record_fields=False), reference[0]
    )
    with pytest.raises(UsageError):
        run_pia_perturbed(problem, grid, bc, CONFIG, PerturbationSpec(), clean, reference[0])


def test_perturbed_needs_same_grid(problem, bc, clean_pia):
    other = GridSpec(-6, 6, 59, 1.0, 60)
    with pytest.raises(DimensionError):
        run_pia_perturbed(problem, other, bc, CONFIG, PerturbationSpec(), clean_pia)


def test_plateau_window(offset_sweep):
    perturbed = offset_sweep[0].perturbed
    assert perturbed.plateau_gap(1) == perturbed.gaps[-1]
    with pytest.raises(UsageError):
        perturbed.plateau_gap(0)


@pytest.mark.parametrize(
    'make',
    [
        lambda: AdditiveNoise(-1.0),
        lambda: CoarseSolve(1),
        lambda: ConstantOffset(math.nan),
        lambda: StateNoise(-0.1),
        lambda: PerturbationSpec(pde_mode=ConstantOffset(0.1)),
        lambda: PerturbationSpec(argmax_mode=AdditiveNoise(0.1)),
        lambda: PerturbationSpec(seed=-1),
    ],
    ids=[
        'noise',
        'factor',
        'offset',
        'state_noise',
        'pde_mode',
        'argmax_mode',
        'seed',
    ],
)
def test_invalid_modes(make):
    with pytest.raises(ConfigurationError):
        make()
