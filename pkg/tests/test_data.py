"""Field, data-generation and serialization tests.

The analytic advection family doubles as an exact oracle for everything the
numeric path does: interpolation is checked at grid nodes and against hand
convex combinations, the Burgers solver against conservation laws and grid
self-convergence, and the generated trajectories against the closed-form
field values that produced them.
"""

import json
import math

import numpy as np
import pytest

from eventfields.datagen import (
    MIN_CONTEXT,
    Dataset,
    GenerationConfig,
    IntensitySpec,
    Trajectory,
    assign_splits,
    generate_dataset,
    generate_trajectory,
    intensity_from_field,
    read_dataset,
    write_dataset,
)
from eventfields.errors import (
    ConfigurationError,
    ContractError,
    DatasetFormatError,
    DomainError,
    EvaluationError,
)
from eventfields.fields import (
    FieldGrid,
    analytic_advection_field,
    burgers_stable_dt,
    field_evaluator,
    field_interpolate,
    field_interpolate_many,
    periodic_distance,
    solve_burgers_1d,
)
from eventfields.pointprocess import SpaceTimeDomain
from eventfields.seeding import (
    BENCH,
    EVALUATION,
    MODEL_INIT,
    TRAINING,
    TRAJECTORY,
    rng_stream,
)

UNIT = SpaceTimeDomain((0.0, 1.0), ((0.0, 1.0),))


# ---------------------------------------------------------------------------
# deterministic RNG streams
# ---------------------------------------------------------------------------


def test_rng_stream_reproducible_and_independent():
    a1 = rng_stream(42, TRAJECTORY, 3).standard_normal(4)
    a2 = rng_stream(42, TRAJECTORY, 3).standard_normal(4)
    b = rng_stream(42, TRAJECTORY, 4).standard_normal(4)
    c = rng_stream(43, TRAJECTORY, 3).standard_normal(4)
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, b)
    assert not np.array_equal(a1, c)


def test_purpose_tags_are_distinct():
    tags = {TRAJECTORY, MODEL_INIT, TRAINING, EVALUATION, BENCH}
    assert len(tags) == 5


# ---------------------------------------------------------------------------
# field grids and interpolation
# ---------------------------------------------------------------------------


def simple_grid():
    t = np.array([0.0, 1.0])
    x = np.array([0.0, 0.5, 1.0])
    vals = np.arange(6, dtype=float).reshape(2, 3, 1)
    return FieldGrid(t, (x,), vals)


def test_field_grid_shape_validation():
    with pytest.raises(ContractError):
        FieldGrid(np.array([0.0, 1.0]), (np.array([0.0, 1.0]),), np.zeros((2, 3, 1)))
    with pytest.raises(ContractError):
        FieldGrid(np.array([1.0, 0.0]), (np.array([0.0, 1.0]),), np.zeros((2, 2, 1)))
    with pytest.raises(ContractError):
        FieldGrid(
            np.array([0.0, 1.0]),
            (np.array([0.0, 1.0]),),
            np.full((2, 2, 1), np.nan),
        )


def test_field_interpolation_exact_at_nodes():
    grid = simple_grid()
    for i, t in enumerate(grid.t_grid):
        for j, x in enumerate(grid.x_grids[0]):
            assert field_interpolate(grid, float(t), [float(x)])[0] == grid.values[i, j, 0]


def test_field_interpolation_bilinear_hand_case():
    grid = simple_grid()
    # midpoint of the (t, x) cell [0,1] x [0, 0.5]: average of 4 corners
    got = field_interpolate(grid, 0.5, [0.25])[0]
    assert got == pytest.approx((0 + 1 + 3 + 4) / 4.0, abs=1e-14)
    # pure time interpolation at a grid x
    assert field_interpolate(grid, 0.25, [0.5])[0] == pytest.approx(
        0.75 * 1 + 0.25 * 4, abs=1e-14
    )


def test_field_interpolation_outside_hull():
    grid = simple_grid()
    with pytest.raises(DomainError, match="outside"):
        field_interpolate(grid, 1.5, [0.5])
    with pytest.raises(DomainError, match="outside"):
        field_interpolate_many(grid, np.array([0.5]), np.array([[-0.1]]))


def test_periodic_pad_covers_unit_interval():
    from eventfields.fields import periodic_pad_x

    x = (np.arange(4) + 0.5) / 4  # cell centers: hull [0.125, 0.875]
    vals = np.arange(8, dtype=float).reshape(2, 4, 1)
    grid = FieldGrid(np.array([0.0, 1.0]), (x,), vals)
    padded = periodic_pad_x(grid)
    assert padded.x_grids[0][0] == pytest.approx(-0.125)
    assert padded.x_grids[0][-1] == pytest.approx(1.125)
    # beyond the last cell center, interpolation wraps toward the first cell
    got = field_interpolate(padded, 0.0, [1.0])[0]
    assert got == pytest.approx(0.5 * (vals[0, 3, 0] + vals[0, 0, 0]), abs=1e-14)
    # original nodes untouched
    assert field_interpolate(padded, 0.0, [x[2]])[0] == vals[0, 2, 0]


def test_field_evaluator_matches_pointwise():
    grid = simple_grid()
    fn = field_evaluator(grid)
    ts = np.array([0.2, 0.8])
    xs = np.array([[0.3], [0.9]])
    out = fn(ts, xs)
    assert out.shape == (2, 1)
    for i in range(2):
        assert out[i, 0] == field_interpolate(grid, ts[i], xs[i])[0]


# ---------------------------------------------------------------------------
# analytic advection family
# ---------------------------------------------------------------------------


def test_periodic_distance():
    assert periodic_distance(np.array(0.1), 0.9) == pytest.approx(0.2)
    assert periodic_distance(np.array(0.9), 0.1) == pytest.approx(0.2)
    assert periodic_distance(np.array(0.5), 0.5) == 0.0
    assert periodic_distance(np.array(0.0), 0.5) == pytest.approx(0.5)


def test_advection_field_closed_form():
    amp, speed, width = 0.8, 0.3, 0.1
    fn = analytic_advection_field(amp, speed, width, d_x=1, x0=0.2)
    t, x = 0.5, 0.4
    center = (0.2 + speed * t) % 1.0
    d = min(abs(x - center), 1.0 - abs(x - center))
    expected = amp * math.exp(-(d**2) / (2 * width**2))
    got = fn(np.array([t]), np.array([[x]]))
    assert got.shape == (1, 1)
    assert got[0, 0] == pytest.approx(expected, rel=1e-14)


def test_advection_field_peak_tracks_center():
    fn = analytic_advection_field(1.0, 1.0, 0.05, x0=0.25)
    for t in (0.0, 0.4, 0.9):
        center = (0.25 + t) % 1.0
        assert fn(np.array([t]), np.array([[center]]))[0, 0] == pytest.approx(1.0)


def test_advection_field_is_periodic_in_space():
    fn = analytic_advection_field(1.0, 0.7, 0.1, x0=0.9)
    near_zero = fn(np.array([0.3]), np.array([[0.01]]))[0, 0]
    near_one = fn(np.array([0.3]), np.array([[0.99]]))[0, 0]
    exact_wrap = fn(np.array([0.3]), np.array([[0.0]]))[0, 0]
    assert abs(near_zero - near_one) < abs(near_zero - 0.5 * exact_wrap)


def test_advection_field_multidimensional():
    fn = analytic_advection_field(1.0, 0.5, 0.2, d_x=2, x0=[0.3, 0.6])
    out = fn(np.array([0.0, 0.5]), np.array([[0.3, 0.6], [0.1, 0.9]]))
    assert out.shape == (2, 1)
    assert out[0, 0] == pytest.approx(1.0)


def test_advection_width_validation():
    with pytest.raises(ConfigurationError):
        analytic_advection_field(1.0, 1.0, 0.0)


# ---------------------------------------------------------------------------
# Burgers solver
# ---------------------------------------------------------------------------


def test_burgers_constant_profile_is_fixed_point():
    grid = solve_burgers_1d(np.full(16, 0.7), nu=0.05, t_max=0.2, n_saves=3)
    assert np.allclose(grid.values, 0.7, atol=1e-13)


def test_burgers_conserves_mass_exactly():
    rng = np.random.default_rng(0)
    ic = rng.standard_normal(64)
    grid = solve_burgers_1d(ic, nu=0.02, t_max=0.3, n_saves=5)
    masses = grid.values[:, :, 0].sum(axis=1)
    assert np.allclose(masses, masses[0], rtol=0, atol=1e-11 * max(1, abs(masses[0])))


def test_burgers_dissipates_energy():
    x = (np.arange(64) + 0.5) / 64
    ic = np.sin(2 * np.pi * x)
    grid = solve_burgers_1d(ic, nu=0.05, t_max=0.5, n_saves=6)
    energy = (grid.values[:, :, 0] ** 2).sum(axis=1)
    assert np.all(np.diff(energy) < 0)


def test_burgers_decays_toward_mean():
    x = (np.arange(32) + 0.5) / 32
    ic = 0.3 + 0.5 * np.sin(2 * np.pi * x)
    grid = solve_burgers_1d(ic, nu=0.5, t_max=2.0, n_saves=3)
    final = grid.values[-1, :, 0]
    assert np.abs(final - 0.3).max() < 0.01  # strong viscosity flattens the wave


def test_burgers_grid_axes():
    grid = solve_burgers_1d(np.zeros(8) + 0.1, nu=0.01, t_max=1.0, n_saves=11)
    assert grid.t_grid[0] == 0.0 and grid.t_grid[-1] == 1.0 and grid.t_grid.size == 11
    assert grid.x_grids[0][0] == pytest.approx(1 / 16)
    assert grid.values.shape == (11, 8, 1)


def test_burgers_cfl_guard_suggests_stable_dt():
    ic = np.full(32, 1.0)
    limit = burgers_stable_dt(ic, nu=0.02, dx=1 / 32)
    with pytest.raises(ConfigurationError, match="dt <="):
        solve_burgers_1d(ic, nu=0.02, t_max=0.1, n_saves=2, dt=2 * limit)
    # the suggested limit itself is accepted
    solve_burgers_1d(ic, nu=0.02, t_max=0.1, n_saves=2, dt=limit)


def test_burgers_stable_dt_formula():
    ic = np.array([2.0, -1.0, 0.5, 0.0])
    dx = 0.25
    assert burgers_stable_dt(ic, 0.1, dx) == min(dx / 2.0, dx**2 / 0.2)


def test_burgers_input_validation():
    with pytest.raises(ConfigurationError):
        solve_burgers_1d(np.zeros(3), 0.01, 1.0, 2)
    with pytest.raises(ConfigurationError):
        solve_burgers_1d(np.zeros(8), -0.01, 1.0, 2)
    with pytest.raises(ConfigurationError):
        solve_burgers_1d(np.zeros(8), 0.01, 1.0, 1)


def test_burgers_self_convergence():
    """Refining the spatial grid converges toward a fine-grid reference."""

    def run(n):
        x = (np.arange(n) + 0.5) / n
        ic = np.sin(2 * np.pi * x) + 0.4 * np.cos(4 * np.pi * x)
        return solve_burgers_1d(ic, nu=0.05, t_max=0.25, n_saves=2)

    ref = run(512)
    xs_ref = ref.x_grids[0]

    def err(n):
        grid = run(n)
        u = np.interp(xs_ref, grid.x_grids[0], grid.values[-1, :, 0], period=1.0)
        return np.abs(u - ref.values[-1, :, 0]).mean()

    e64, e128 = err(64), err(128)
    assert e128 < 0.7 * e64


# ---------------------------------------------------------------------------
# trajectory generation
# ---------------------------------------------------------------------------


def test_intensity_spec_positive_scale():
    with pytest.raises(ConfigurationError):
        IntensitySpec(scale=0.0)


def test_intensity_from_field_formula():
    fn = analytic_advection_field(1.0, 0.0, 0.1, x0=0.5)
    lam = intensity_from_field(fn, IntensitySpec(scale=10.0, offset=0.25))
    ts = np.array([0.1, 0.2])
    xs = np.array([[0.5], [0.0]])
    u = fn(ts, xs)[:, 0]
    assert np.allclose(lam(ts, xs), 10.0 * np.abs(u - 0.25))


def test_generate_trajectory_marks_are_field_values():
    rng = np.random.default_rng(5)
    fn = analytic_advection_field(1.0, 1.0, 0.1, x0=0.3)
    spec = IntensitySpec(scale=500.0)
    traj = generate_trajectory(fn, spec, UNIT, rng, lambda_max=600.0, t_ctx=0.25)
    assert traj is not None
    expected = fn(traj.times, traj.locations)
    assert np.array_equal(traj.marks, expected)
    assert np.all(np.diff(traj.times) > 0)
    assert traj.ctx_len >= MIN_CONTEXT
    assert np.all(traj.times[: traj.ctx_len] < 0.25)
    assert np.all(traj.times[traj.ctx_len :] >= 0.25)


def test_generate_trajectory_rejects_thin_context():
    rng = np.random.default_rng(0)
    fn = analytic_advection_field(1.0, 1.0, 0.1, x0=0.3)
    spec = IntensitySpec(scale=5.0)  # ~5 events total, so < MIN_CONTEXT in window
    assert generate_trajectory(fn, spec, UNIT, rng, lambda_max=6.0, t_ctx=0.25) is None


def test_trajectory_validation():
    with pytest.raises(ContractError):
        Trajectory(np.array([0.2, 0.1]), np.zeros((2, 1)), np.zeros((2, 1)), 1)
    with pytest.raises(ContractError):
        Trajectory(np.array([0.1, 0.2]), np.zeros((2, 1)), np.zeros((2, 1)), 3)
    with pytest.raises(ContractError):
        Trajectory(np.array([0.1, 0.2]), np.zeros((3, 1)), np.zeros((2, 1)), 1)


def test_assign_splits_ratios():
    splits = assign_splits(250)
    assert splits.count("train") == 200
    assert splits.count("val") == 25
    assert splits.count("test") == 25
    # ordering: train block first, then val, then test
    assert splits[0] == "train" and splits[-1] == "test"


def test_generation_config_validation():
    with pytest.raises(ConfigurationError):
        GenerationConfig(family="heat")
    with pytest.raises(ConfigurationError):
        GenerationConfig(family="burgers", d_x=2)
    with pytest.raises(ConfigurationError):
        GenerationConfig(ctx_fraction=1.0)


def test_generate_dataset_deterministic_and_split():
    cfg = GenerationConfig(n_trajectories=20, intensity_scale=400.0)
    ds1 = generate_dataset(cfg, master_seed=11)
    ds2 = generate_dataset(cfg, master_seed=11)
    assert len(ds1) == 20
    assert ds1.splits == assign_splits(20)
    assert ds1.config["master_seed"] == 11
    for a, b in zip(ds1.trajectories, ds2.trajectories):
        assert np.array_equal(a.times, b.times)
        assert np.array_equal(a.marks, b.marks)
    ds3 = generate_dataset(cfg, master_seed=12)
    assert not np.array_equal(ds1.trajectories[0].times, ds3.trajectories[0].times)


def test_generate_dataset_burgers_family():
    cfg = GenerationConfig(
        family="burgers",
        n_trajectories=3,
        intensity_scale=420.0,
        n_cells=32,
        n_saves=21,
        nu=0.05,
    )
    ds = generate_dataset(cfg, master_seed=0)
    assert len(ds) == 3
    for traj in ds.trajectories:
        assert traj.d_x == 1 and traj.d_y == 1
        assert traj.ctx_len >= MIN_CONTEXT


def test_generate_dataset_gives_up_when_intensity_too_low():
    cfg = GenerationConfig(n_trajectories=2, intensity_scale=1e-3)
    with pytest.raises(EvaluationError, match="intensity scale"):
        generate_dataset(cfg, master_seed=0)


# ---------------------------------------------------------------------------
# JSONL round trip
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_dataset():
    return generate_dataset(
        GenerationConfig(n_trajectories=12, intensity_scale=400.0), master_seed=3
    )


def test_dataset_round_trip_exact(tmp_path, small_dataset):
    path = tmp_path / "data.jsonl"
    write_dataset(small_dataset, path)
    back = read_dataset(path)
    assert back.ids == small_dataset.ids
    assert back.splits == small_dataset.splits
    assert back.d_x == small_dataset.d_x and back.d_y == small_dataset.d_y
    assert back.domain == small_dataset.domain
    assert back.config == small_dataset.config
    for a, b in zip(back.trajectories, small_dataset.trajectories):
        assert np.array_equal(a.times, b.times)  # bitwise through JSON floats
        assert np.array_equal(a.locations, b.locations)
        assert np.array_equal(a.marks, b.marks)
        assert a.ctx_len == b.ctx_len


def test_dataset_write_is_byte_stable(tmp_path, small_dataset):
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_dataset(small_dataset, p1)
    write_dataset(small_dataset, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_read_dataset_reports_line_numbers(tmp_path, small_dataset):
    path = tmp_path / "data.jsonl"
    write_dataset(small_dataset, path)
    lines = path.read_text().splitlines()

    broken = tmp_path / "broken.jsonl"
    broken.write_text("\n".join([lines[0], lines[1], "{not json"]))
    with pytest.raises(DatasetFormatError, match="line 3") as exc:
        read_dataset(broken)
    assert exc.value.line == 3

    missing = tmp_path / "missing.jsonl"
    rec = json.loads(lines[1])
    del rec["ctx_len"]
    missing.write_text("\n".join([lines[0], json.dumps(rec)]))
    with pytest.raises(DatasetFormatError, match="ctx_len"):
        read_dataset(missing)


def test_read_dataset_header_required(tmp_path, small_dataset):
    path = tmp_path / "noheader.jsonl"
    write_dataset(small_dataset, path)
    body = path.read_text().splitlines()[1:]
    path.write_text("\n".join(body))
    with pytest.raises(DatasetFormatError, match="header"):
        read_dataset(path)
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    with pytest.raises(DatasetFormatError, match="line 1"):
        read_dataset(empty)


def test_read_dataset_rejects_bad_rows(tmp_path, small_dataset):
    path = tmp_path / "data.jsonl"
    write_dataset(small_dataset, path)
    lines = path.read_text().splitlines()
    rec = json.loads(lines[1])
    rec["events"] = [[0.1, 0.5], [0.2, 0.5]]  # missing the mark column
    bad = tmp_path / "bad.jsonl"
    bad.write_text("\n".join([lines[0], json.dumps(rec)]))
    with pytest.raises(DatasetFormatError, match="columns"):
        read_dataset(bad)

    rec = json.loads(lines[1])
    rec["split"] = "holdout"
    bad.write_text("\n".join([lines[0], json.dumps(rec)]))
    with pytest.raises(DatasetFormatError, match="split"):
        read_dataset(bad)


def test_dataset_split_accessor(small_dataset):
    names = [t for t in ("train", "val", "test")]
    sizes = [len(small_dataset.split(n)) for n in names]
    assert sum(sizes) == len(small_dataset)
    with pytest.raises(ConfigurationError):
        small_dataset.split("holdout")
