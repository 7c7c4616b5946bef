import logging
import shutil
import tempfile
from pathlib import Path

import click
import pandas

import smallpia
from smallpia.config import load_config
from smallpia.diagnostics import build_report
from smallpia.diagnostics import format_lines
from smallpia.diagnostics import log10_errors
from smallpia.exceptions import ConfigurationError
from smallpia.grid import GridSpec
from smallpia.grid import write_csv
from smallpia.hjb_ref import discretization_floor
from smallpia.hjb_ref import solve_bellman
from smallpia.iterate import IterationConfig
from smallpia.iterate import run_gia
from smallpia.iterate import run_pia
from smallpia.linpde import LinearExtrapolation
from smallpia.montecarlo import McConfig
from smallpia.montecarlo import crosscheck
from smallpia.montecarlo import write_crosscheck
from smallpia.perturb import AdditiveNoise
from smallpia.perturb import CoarseSolve
from smallpia.perturb import ConstantOffset
from smallpia.perturb import StateNoise
from smallpia.perturb import sweep
from smallpia.perturb import sweep_frame
from smallpia.problem import EXAMPLES
from smallpia.problem import ORACLES
from smallpia.problem import TERMINALS
from smallpia.problem import get_problem
from smallpia.timer import Timer


log = logging.getLogger('smallpia')

EXIT_CONFIG = 2
EXIT_RUNTIME = 3

MODES = {
    'additive_noise': AdditiveNoise,
    'coarse_solve': lambda factor: CoarseSolve(int(factor)),
    'constant_offset': ConstantOffset,
    'state_noise': StateNoise,
}
RUNNERS = {'pia': run_pia, 'gia': run_gia}

FIGURE_STEPS = (1, 5)

_handler = None


def setup_logging(level):
    global _handler
    if _handler is not None:
        log.removeHandler(_handler)
    log.setLevel(level)
    handler = logging.StreamHandler()
    formatter = logging.Formatter(
        '%(asctime)s %(process)d %(levelname)-7s %(message)s', '%Y-%m-%dT%H:%M:%S'
    )
    handler.setFormatter(formatter)
    log.addHandler(handler)
    _handler = handler


@click.group()
@click.version_option(smallpia.__version__, message='%(prog)s %(version)s')
def cli():
    pass


class Setup:

    """What every experiment shares, built from a loaded config."""

    def __init__(self, config):
        self.config = config
        problem = config['problem']
        grid = config['grid']
        self.problem = get_problem(
            problem['name'],
            problem['T'],
            problem['oracle'],
            problem['terminal'],
            problem['n_a'],
            problem['tol_a'],
            problem['control_set'],
        )
        try:
            self.grid = GridSpec(
                grid['x_min'], grid['x_max'], grid['nx'], problem['T'], grid['nt']
            )
        except ValueError as e:
            raise ConfigurationError(str(e)) from e
        self.bc = LinearExtrapolation()
        self.advection = grid['advection']
        iterate = config['iterate']
        self.iteration = IterationConfig(
            max_iters=iterate['max_iters'],
            stop_tol=iterate['stop_tol'],
            initial_policy=iterate['a0'],
            policy_tol=iterate['policy_tol'],
            advection=self.advection,
            timings=config['output']['timings'],
        )
        self._reference = None
        self._floor = None

    @property
    def reference(self):
        """(v*, a*), solved once."""
        if self._reference is None:
            reference = self.config['reference']
            self._reference = solve_bellman(
                self.problem,
                self.grid,
                self.bc,
                reference['inner_tol'],
                reference['inner_max'],
                self.advection,
            )
        return self._reference

    @property
    def floor(self):
        reference = self.config['reference']
        if not reference['floor']:
            return None
        if self._floor is None:
            self._floor = discretization_floor(
                self.problem,
                self.grid,
                self.bc,
                reference['floor_space'],
                reference['floor_time'],
                self.reference[0],
                self.advection,
            )
        return self._floor

    def run(self, algorithm):
        runner = RUNNERS[algorithm]
        return runner(self.problem, self.grid, self.bc, self.iteration, self.reference[0])

    def report(self, trace, **kwargs):
        iterate = self.config['iterate']
        return build_report(
            trace,
            discretization_floor=self.floor,
            floor_ratio=iterate['floor_ratio'],
            monotone_tol=iterate['monotone_tol'],
            **kwargs,
        )


def run_reference_only(setup, out):
    value, policy = setup.reference
    value.to_csv(out / 'v_star.csv')
    policy.to_csv(out / 'a_star.csv')
    window = setup.grid.window()
    items = [
        ('experiment', 'reference_only'),
        ('problem', setup.problem.name),
        ('value_window_max', float(value.values[:, window].max())),
        ('value_window_min', float(value.values[:, window].min())),
        ('discretization_floor', setup.floor),
    ]
    (out / 'report.txt').write_text(format_lines(items))


def run_iteration(setup, out, algorithm):
    trace = setup.run(algorithm)
    trace.to_csv(out / 'trace.csv')
    if setup.config['output']['write_fields']:
        trace.write_fields(out)
    (out / 'report.txt').write_text(setup.report(trace).to_text())


def run_stability(setup, out, kind):
    perturb = setup.config['perturb']
    mode_name = perturb[f'{kind}_mode']
    amplitudes = perturb[f'{kind}_amplitudes']

    text = []
    for algorithm in perturb['algorithms']:
        clean = setup.run(algorithm)
        clean.to_csv(out / f'trace_{algorithm}.csv')
        points = sweep(
            setup.problem,
            setup.grid,
            setup.bc,
            setup.iteration,
            clean,
            MODES[mode_name],
            amplitudes,
            seed=setup.config['seed'],
            reference=setup.reference[0],
            plateau_window=perturb['plateau_window'],
        )
        write_csv(sweep_frame(points), out / f'sweep_{algorithm}_{mode_name}.csv')
        for i, point in enumerate(points):
            point.perturbed.to_csv(out / f'perturbed_{algorithm}_{mode_name}_{i}.csv')

        sweeps = {mode_name: points} if len(points) >= 3 else {}
        report = setup.report(clean, sweeps=sweeps)
        text.append(report.to_text(f'{algorithm}.'))
        for point in points:
            items = [(f'plateau_gap.{mode_name}.{point.amplitude!r}', point.plateau_gap)]
            text.append(format_lines(items, f'{algorithm}.'))

    (out / 'report.txt').write_text(''.join(text))


def available_iterate(trace, n):
    """n, or the last iterate if the run stopped before n."""
    if n > trace.iterations:
        log.warning(
            "iterate %d not available, %s stopped at %d; using that",
            n,
            trace.algorithm.upper(),
            trace.iterations,
        )
        return trace.iterations
    return n


def run_mc_crosscheck(setup, out):
    montecarlo = setup.config['montecarlo']
    trace = setup.run('pia')
    trace.to_csv(out / 'trace.csv')

    iters = []
    for n in montecarlo['iters']:
        n = available_iterate(trace, n)
        if n not in iters:
            iters.append(n)

    mc = McConfig(
        n_paths=montecarlo['n_paths'],
        n_steps=montecarlo['n_steps'],
        seed=setup.config['seed'],
        antithetic=montecarlo['antithetic'],
        block_size=montecarlo['block_size'],
    )
    floor = setup.floor or 0.0
    rows = crosscheck(
        setup.problem,
        trace,
        setup.reference[0],
        [tuple(p) for p in montecarlo['points']],
        iters,
        mc,
        floor,
    )
    write_crosscheck(rows, out / 'mc_estimates.csv')
    (out / 'report.txt').write_text(setup.report(trace, mc_rows=rows).to_text())


def run_figures(setup, out):
    value, policy = setup.reference
    grid = setup.grid

    text = []
    traces = {}
    for algorithm in ('pia', 'gia'):
        trace = traces[algorithm] = setup.run(algorithm)
        frame = pandas.DataFrame(
            {
                'iter': [r.n for r in trace.records],
                'log10_error': log10_errors(trace.errors),
            }
        )
        write_csv(frame, out / f'fig1_{algorithm}_log_error.csv')
        text.append(setup.report(trace).to_text(f'{algorithm}.'))

    pia = traces['pia']
    columns = {'x': grid.x, 'a_init': pia.policy(0).values[0]}
    for step in FIGURE_STEPS:
        columns[f'a_step{step}'] = pia.policy(available_iterate(pia, step)).values[0]
    columns['a_reference'] = policy.values[0]
    write_csv(pandas.DataFrame(columns), out / 'fig2_policies.csv')

    t, x = grid.mesh()
    frame = pandas.DataFrame(
        {
            't': t.ravel(),
            'x': x.ravel(),
            'v_star': value.values.ravel(),
            'a_star': policy.values.ravel(),
        }
    )
    write_csv(frame, out / 'fig3_value_policy.csv')
    (out / 'report.txt').write_text(''.join(text))


EXPERIMENTS = {
    'reference_only': run_reference_only,
    'pia': lambda setup, out: run_iteration(setup, out, 'pia'),
    'gia': lambda setup, out: run_iteration(setup, out, 'gia'),
    'stability_pde': lambda setup, out: run_stability(setup, out, 'pde'),
    'stability_argmax': lambda setup, out: run_stability(setup, out, 'argmax'),
    'mc_crosscheck': run_mc_crosscheck,
    'figures': run_figures,
}


def error_module(error):
    """The innermost smallpia module in the traceback of the root cause."""
    while error.__cause__ is not None:
        error = error.__cause__
    module = 'smallpia'
    tb = error.__traceback__
    while tb is not None:
        name = tb.tb_frame.f_globals.get('__name__', '')
        if name.startswith('smallpia.'):
            module = name.partition('.')[2]
        tb = tb.tb_next
    return module


@cli.command()
@click.option(
    '--config',
    'config_path',
    type=click.Path(dir_okay=False),
    required=True,
    help="YAML experiment config.",
)
@click.option(
    '--out',
    'out_dir',
    type=click.Path(file_okay=False),
    required=True,
    help="Output directory; must not exist or be empty.",
)
@click.option('--seed', type=click.IntRange(0, 2 ** 64 - 1), help="Overrides seed.")
@click.option('--quiet', is_flag=True, help="Only log warnings and errors.")
@click.option('--verbose', is_flag=True, help="Log per-iteration progress.")
@click.pass_context
def run(ctx, config_path, out_dir, seed, quiet, verbose):
    """Run the experiment described by a config file."""
    setup_logging(logging.WARNING if quiet else logging.DEBUG if verbose else logging.INFO)

    try:
        config = load_config(config_path)
        if seed is not None:
            config['seed'] = seed
        setup = Setup(config)
    except ConfigurationError as e:
        click.echo(f"error: {e}", err=True)
        ctx.exit(EXIT_CONFIG)

    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        click.echo(f"error: output directory is not empty: {out}", err=True)
        ctx.exit(EXIT_CONFIG)
    out.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f'.{out.name}.', dir=out.parent))

    experiment = config['experiment']
    log.info("running %s (seed %d) into %s", experiment, config['seed'], out)
    try:
        timer = Timer(prefix='smallpia')
        if config['output']['timings']:
            timer.add_default_clocks()
        with timer(experiment) as timings:
            EXPERIMENTS[experiment](setup, staging)
    except Exception as e:
        shutil.rmtree(staging, ignore_errors=True)
        log.debug("%s failed", experiment, exc_info=True)
        click.echo(f"[{error_module(e)}] {e}", err=True)
        ctx.exit(EXIT_RUNTIME)

    if out.exists():
        out.rmdir()
    staging.replace(out)
    for name, duration in timings:
        log.info("timing %s: %.3f s", name, duration)
    log.info("%s done; wrote %s", experiment, ', '.join(sorted(p.name for p in out.iterdir())))


@cli.command()
def problems():
    """List the built-in problems, oracles and terminal rewards."""
    for name in sorted(EXAMPLES):
        click.echo(name)
    click.echo(f"oracles: {', '.join(ORACLES)}")
    click.echo(f"terminal rewards: {', '.join(TERMINALS)}")


if __name__ == '__main__':
    cli()
