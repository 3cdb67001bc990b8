import sys
from fractions import Fraction
from pathlib import Path

from hypothesis import HealthCheck, settings, strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from concsem.equiv import random_program  # noqa: E402
from concsem.lang import Act, Flavor, NdChoice, Par, ProbChoice, Seq, Skip  # noqa: E402

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

leaves = st.one_of(st.just(Skip()), st.sampled_from("abcd").map(Act))
weights = st.sampled_from([Fraction(1, 2), Fraction(1, 3), Fraction(3, 4)])


def loop_free(flavor: Flavor, max_leaves: int = 6):
    """Closed, loop-free commands of the nondet or prob language."""

    def extend(inner):
        pair = st.tuples(inner, inner)
        ops = [pair.map(lambda p: Seq(*p)), pair.map(lambda p: Par(*p))]
        if flavor is Flavor.NONDET:
            ops.append(pair.map(lambda p: NdChoice(*p)))
        else:
            ops.append(st.tuples(weights, inner, inner).map(lambda t: ProbChoice(*t)))
        return st.one_of(ops)

    return st.recursive(leaves, extend, max_leaves=max_leaves)


def programs(flavor: Flavor, max_size: int = 5):
    """Random well-formed programs (loops included) from the fuzz generator."""
    return st.builds(
        lambda r, n: random_program(flavor, n, r),
        st.randoms(use_true_random=False),
        st.integers(0, max_size),
    )


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[key])
