import pytest

from mitbid.experiments import load_case


@pytest.fixture(scope="session")
def homog():
    return load_case("two_bus_homogeneous")


@pytest.fixture(scope="session")
def hetero():
    return load_case("two_bus_heterogeneous")


@pytest.fixture(scope="session")
def congested():
    return load_case("two_bus_congested")


@pytest.fixture(scope="session")
def congested_hetero():
    return load_case("two_bus_congested_heterogeneous")


@pytest.fixture(scope="session")
def three_bus():
    return load_case("three_bus_loop")


@pytest.fixture(scope="session")
def six_bus():
    return load_case("six_bus")


TWO_BUS = ["two_bus_homogeneous", "two_bus_heterogeneous", "two_bus_congested", "two_bus_congested_heterogeneous"]
