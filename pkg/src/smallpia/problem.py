"""Control problem instances: coefficients, control set, argmax oracle.

Coefficient handles are plain callables that must accept numpy arrays and
broadcast like ufuncs:

    drift(a, t, x), running_reward(a, t, x)  -> b, f
    diffusion(t, x)                          -> sigma > 0
    terminal_reward(x)                       -> g

They must be pure; the solvers evaluate them many times and rely on getting
the same answer.

"""
import dataclasses
import logging
import math
import typing
from dataclasses import dataclass
from dataclasses import field

import numpy as np

from .exceptions import ConfigurationError
from .exceptions import UsageError

log = logging.getLogger('smallpia')

DEFAULT_TOL_H = 1e-10
DEFAULT_GRID_SEARCH_POINTS = 2001
DEFAULT_GOLDEN_TOL = 1e-10
MEMBERSHIP_TOL = 1e-12

# max number of (node, candidate) pairs evaluated at once by GridSearch
_GRID_SEARCH_CHUNK = 2 ** 21
_INVPHI = (math.sqrt(5) - 1) / 2


def evaluate(fn, *args):
    """Call a coefficient handle and broadcast the result to the args' shape."""
    shape = np.broadcast_shapes(*(np.shape(arg) for arg in args))
    return np.broadcast_to(np.asarray(fn(*args), dtype=float), shape)


@dataclass(frozen=True)
class ControlSet:
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ConfigurationError(
                f"unbounded control sets are not supported: [{self.lo}, {self.hi}]"
            )
        if self.lo > self.hi:
            raise ConfigurationError(f"empty control set: [{self.lo}, {self.hi}]")

    def contains(self, a, tol=MEMBERSHIP_TOL):
        a = np.asarray(a)
        return (a >= self.lo - tol) & (a <= self.hi + tol)

    def clip(self, a):
        return np.clip(a, self.lo, self.hi)


@dataclass(frozen=True)
class ClosedForm:
    """Use a known maximizer a(t, x, p); its values are returned verbatim."""

    control: typing.Callable


@dataclass(frozen=True)
class GridSearch:
    """Exhaustive search over n_a equally spaced controls; leftmost wins ties."""

    n_a: int = DEFAULT_GRID_SEARCH_POINTS

    def __post_init__(self):
        if self.n_a < 2:
            raise ConfigurationError(f"GridSearch needs n_a >= 2, got {self.n_a}")


@dataclass(frozen=True)
class GoldenSection:
    """Golden-section search; assumes the Hamiltonian is unimodal in a."""

    tol_a: float = DEFAULT_GOLDEN_TOL

    def __post_init__(self):
        if not self.tol_a > 0:
            raise ConfigurationError(f"GoldenSection needs tol_a > 0, got {self.tol_a}")


ArgmaxOracle = typing.Union[ClosedForm, GridSearch, GoldenSection]


@dataclass(frozen=True)
class ControlProblem:
    drift: typing.Callable
    diffusion: typing.Callable
    running_reward: typing.Callable
    terminal_reward: typing.Callable
    control_set: ControlSet
    horizon: float
    argmax_oracle: ArgmaxOracle = field(default_factory=GridSearch)
    name: str = 'custom'

    def __post_init__(self):
        if not self.horizon > 0:
            raise ConfigurationError(f"horizon must be positive, got {self.horizon}")

    def with_oracle(self, oracle):
        return dataclasses.replace(self, argmax_oracle=oracle)

    def check_nodes(self, t, x):
        """Check the coefficient invariants on a set of nodes.

        Arguments:
            t (ndarray): Time levels.
            x (ndarray): Space nodes.

        Returns:
            float: The smallest diffusion value seen (sigma_min).

        """
        tt, xx = np.meshgrid(t, x, indexing='ij')
        sigma = evaluate(self.diffusion, tt, xx)
        if not np.all(np.isfinite(sigma)) or not np.all(sigma > 0):
            worst = np.where(np.isfinite(sigma), sigma, -np.inf)
            i, j = np.unravel_index(np.argmin(worst), sigma.shape)
            raise ConfigurationError(
                f"diffusion must be positive, got {sigma[i, j]!r} "
                f"at (t={tt[i, j]!r}, x={xx[i, j]!r})"
            )
        g = evaluate(self.terminal_reward, np.asarray(x, dtype=float))
        if not np.all(np.isfinite(g)):
            j = int(np.argmin(np.isfinite(g)))
            raise ConfigurationError(f"terminal reward is not finite at x={x[j]!r}")
        return float(sigma.min())


def hamiltonian(problem, a, t, x, p):
    """b(a, t, x) * p + f(a, t, x)."""
    return evaluate(problem.drift, a, t, x) * p + evaluate(problem.running_reward, a, t, x)


def argmax_control(problem, t, x, p):
    """Maximize the Hamiltonian over the control set, elementwise.

    t, x, p may be scalars or arrays (broadcast together); p is the
    space gradient of the value function.

    """
    t, x, p = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (t, x, p)))
    if not np.all(np.isfinite(p)):
        raise UsageError("argmax_control needs a finite gradient")

    oracle = problem.argmax_oracle
    if isinstance(oracle, ClosedForm):
        a = np.array(np.broadcast_to(np.asarray(oracle.control(t, x, p), dtype=float), t.shape))
    elif isinstance(oracle, GridSearch):
        a = _grid_search(problem, t, x, p, oracle.n_a)
    elif isinstance(oracle, GoldenSection):
        a = _golden_section(problem, t, x, p, oracle.tol_a)
    else:
        raise ConfigurationError(f"unknown argmax oracle: {oracle!r}")

    inside = problem.control_set.contains(a)
    if not np.all(inside):
        k = np.unravel_index(np.argmin(inside), a.shape)
        raise ConfigurationError(
            f"oracle returned control {a[k]!r} outside "
            f"[{problem.control_set.lo}, {problem.control_set.hi}] "
            f"at (t={t[k]!r}, x={x[k]!r}, p={p[k]!r})"
        )

    return a[()] if a.ndim == 0 else a


def _grid_search(problem, t, x, p, n_a):
    candidates = np.linspace(problem.control_set.lo, problem.control_set.hi, n_a)
    shape = t.shape
    t, x, p = (v.ravel() for v in (t, x, p))
    out = np.empty(t.shape)
    chunk = max(1, _GRID_SEARCH_CHUNK // n_a)
    for start in range(0, t.size, chunk):
        sl = slice(start, start + chunk)
        h = hamiltonian(
            problem, candidates[None, :], t[sl, None], x[sl, None], p[sl, None]
        )
        h = np.broadcast_to(h, (out[sl].size, n_a))
        # argmax returns the first maximum, i.e. the leftmost control
        out[sl] = candidates[np.argmax(h, axis=1)]
    return out.reshape(shape)


def _golden_section(problem, t, x, p, tol_a):
    lo, hi = problem.control_set.lo, problem.control_set.hi

    def h(a):
        return hamiltonian(problem, a, t, x, p)

    a = np.full(t.shape, lo)
    b = np.full(t.shape, hi)
    steps = 0
    if hi - lo > tol_a:
        steps = math.ceil(math.log(tol_a / (hi - lo)) / math.log(_INVPHI))

    for _ in range(steps):
        c = b - _INVPHI * (b - a)
        d = a + _INVPHI * (b - a)
        left = h(c) >= h(d)
        b = np.where(left, d, b)
        a = np.where(left, a, c)

    # the search cannot land exactly on an endpoint, so compare against both
    best = np.full(t.shape, lo)
    best_h = h(best)
    for candidate in ((a + b) / 2, np.full(t.shape, hi)):
        candidate_h = h(candidate)
        better = candidate_h > best_h
        best = np.where(better, candidate, best)
        best_h = np.where(better, candidate_h, best_h)
    return best


class Constant:

    """A constant function of time, usable as an ExampleParams handle."""

    def __init__(self, value):
        self.value = float(value)

    def __call__(self, t):
        return np.full(np.shape(t), self.value)

    def __repr__(self):
        return f"Constant({self.value!r})"


@dataclass(frozen=True)
class ExampleParams:
    s: typing.Callable
    k: typing.Callable

    @classmethod
    def constant(cls, s=1.0, k=1.0):
        return cls(Constant(s), Constant(k))

    def check(self, T, samples=1001):
        t = np.linspace(0, T, samples)
        k = np.asarray(self.k(t), dtype=float)
        if not np.all(np.isfinite(k)) or not np.all(k > 0):
            raise ConfigurationError("k(t) must be positive on [0, T]")
        if not np.all(np.isfinite(np.asarray(self.s(t), dtype=float))):
            raise ConfigurationError("s(t) must be finite on [0, T]")

    def optimal_control(self, t, p):
        return np.arctan(self.s(t) * p / self.k(t))

    def envelope(self, t, p):
        """The maximized Hamiltonian, in the explicit form of the example's Bellman PDE."""
        s, k = self.s(t), self.k(t)
        root = np.sqrt(1 + (s * p / k) ** 2)
        return (s * p) ** 2 / k / root + k / root


def make_example(params, T, oracle=None, terminal=np.arctan, control_set=None):
    """dX = s(t) sin(a) dt + sqrt(2) dW, reward k(t) cos(a), terminal arctan(x).

    The control set defaults to [-pi/2, pi/2]; unless another oracle is
    given, the maximizer is a = arctan(s(t) p / k(t)) clipped to it. The
    Hamiltonian is a shifted cosine in a, so clipping stays exact on
    subintervals.

    """
    params.check(T)
    if control_set is None:
        control_set = ControlSet(-math.pi / 2, math.pi / 2)
    elif not (-math.pi / 2 <= control_set.lo and control_set.hi <= math.pi / 2):
        raise ConfigurationError(
            f"example control sets must lie in [-pi/2, pi/2], got {control_set}"
        )

    def drift(a, t, x):
        return params.s(t) * np.sin(a)

    def diffusion(t, x):
        return np.full(np.broadcast(t, x).shape, math.sqrt(2))

    def running_reward(a, t, x):
        return params.k(t) * np.cos(a)

    def closed_form(t, x, p):
        return control_set.clip(params.optimal_control(t, p))

    if oracle is None:
        oracle = ClosedForm(closed_form)

    return ControlProblem(
        drift=drift,
        diffusion=diffusion,
        running_reward=running_reward,
        terminal_reward=terminal,
        control_set=control_set,
        horizon=T,
        argmax_oracle=oracle,
        name='example',
    )


def _zero_terminal(x):
    return np.zeros(np.shape(x))


EXAMPLES = {
    'example_s1k1': ExampleParams.constant(1.0, 1.0),
    'example_s0k1': ExampleParams.constant(0.0, 1.0),
    'example_timevarying': ExampleParams(
        s=lambda t: 1 + 0.5 * np.sin(2 * np.pi * np.asarray(t, dtype=float)),
        k=lambda t: 1 + 0.5 * np.asarray(t, dtype=float),
    ),
}

TERMINALS = {'arctan': np.arctan, 'zero': _zero_terminal}

ORACLES = ('closed_form', 'grid_search', 'golden_section')


def get_problem(
    name,
    T=1.0,
    oracle='closed_form',
    terminal='arctan',
    n_a=DEFAULT_GRID_SEARCH_POINTS,
    tol_a=DEFAULT_GOLDEN_TOL,
    control_set=None,
):
    """Build a registry problem by name.

    control_set, if given, is a (lo, hi) pair replacing [-pi/2, pi/2].

    """
    if name not in EXAMPLES:
        raise ConfigurationError(
            f"unknown problem {name!r}; known: {', '.join(sorted(EXAMPLES))}"
        )
    if terminal not in TERMINALS:
        raise ConfigurationError(f"unknown terminal reward {terminal!r}")

    if oracle == 'closed_form':
        oracle_obj = None
    elif oracle == 'grid_search':
        oracle_obj = GridSearch(n_a)
    elif oracle == 'golden_section':
        oracle_obj = GoldenSection(tol_a)
    else:
        raise ConfigurationError(f"unknown oracle {oracle!r}")

    if control_set is not None:
        control_set = ControlSet(*control_set)
    problem = make_example(
        EXAMPLES[name], T, oracle_obj, TERMINALS[terminal], control_set
    )
    log.debug("problem %s: T=%s oracle=%s terminal=%s", name, T, oracle, terminal)
    return dataclasses.replace(problem, name=name)
